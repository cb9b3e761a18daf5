//! PDE-conditional transformer laboratory.

pub mod codec;
pub mod components;
pub mod data;
pub mod embedding;
pub mod model;
pub mod records;
pub mod solvers;
pub mod string_oracle;
pub mod tensor;
pub mod train;
