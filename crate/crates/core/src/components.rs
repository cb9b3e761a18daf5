//! PDE components, their domain-wise / point-wise categorization, and the
//! sample schema shared by the solvers, the embedder and the file formats.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

/// Gridded field, channel axis first: `[C, n_x]`, `[C, n_t, n_x]` or `[C, n_y, n_x]`.
pub type Field = Tensor;

/// How grid points are placed inside `x_range`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// `x_i = lo + i·(hi−lo)/n`, right endpoint excluded.
    Periodic,
    /// `x_i = lo + i·(hi−lo)/(n−1)`, both endpoints included.
    Endpoints,
    /// `x_i = lo + (i+½)·(hi−lo)/n`.
    CellCentered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_y: Option<usize>,
    pub n_t: usize,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
    pub sampling: Sampling,
}

impl GridSpec {
    pub fn new_1d(n_x: usize, n_t: usize, x_range: (f64, f64), t_range: (f64, f64), sampling: Sampling) -> Self {
        GridSpec {
            n_x,
            n_y: None,
            n_t,
            x_range,
            t_range,
            sampling,
        }
    }

    pub fn dims(&self) -> usize {
        if self.n_y.is_some() {
            2
        } else {
            1
        }
    }

    pub fn dx(&self) -> f64 {
        let len = self.x_range.1 - self.x_range.0;
        match self.sampling {
            Sampling::Endpoints => len / (self.n_x - 1) as f64,
            _ => len / self.n_x as f64,
        }
    }

    pub fn x_coords(&self) -> Vec<f64> {
        let lo = self.x_range.0;
        let dx = self.dx();
        let shift = if self.sampling == Sampling::CellCentered { 0.5 } else { 0.0 };
        (0..self.n_x).map(|i| lo + (i as f64 + shift) * dx).collect()
    }

    /// Snapshot times, both ends included.
    pub fn t_coords(&self) -> Vec<f64> {
        let (lo, hi) = self.t_range;
        (0..self.n_t)
            .map(|j| lo + (hi - lo) * j as f64 / (self.n_t - 1) as f64)
            .collect()
    }

    /// Spatial shape without channel or time axes.
    pub fn spatial_shape(&self) -> Vec<usize> {
        match self.n_y {
            Some(n_y) => vec![n_y, self.n_x],
            None => vec![self.n_x],
        }
    }

    pub fn check(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.n_x < 2 || self.n_t < 2 || self.n_y.is_some_and(|n| n < 2) {
            v.push(Violation::Grid(format!(
                "point counts must be >= 2 (n_x={}, n_y={:?}, n_t={})",
                self.n_x, self.n_y, self.n_t
            )));
        }
        for (name, (lo, hi)) in [("x_range", self.x_range), ("t_range", self.t_range)] {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                v.push(Violation::Grid(format!("{name} ({lo}, {hi}) is degenerate")));
            }
        }
        v
    }
}

/// Kind of a non-periodic edge condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Dirichlet,
    Neumann,
    Robin,
}

/// Edge condition `alpha·u + beta·∂u/∂n = gamma` (outward normal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCondition {
    pub kind: EdgeKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EdgeCondition {
    pub fn dirichlet(value: f64) -> Self {
        EdgeCondition {
            kind: EdgeKind::Dirichlet,
            alpha: 1.0,
            beta: 0.0,
            gamma: value,
        }
    }

    pub fn neumann(flux: f64) -> Self {
        EdgeCondition {
            kind: EdgeKind::Neumann,
            alpha: 0.0,
            beta: 1.0,
            gamma: flux,
        }
    }

    pub fn robin(alpha: f64, beta: f64, gamma: f64) -> Self {
        EdgeCondition {
            kind: EdgeKind::Robin,
            alpha,
            beta,
            gamma,
        }
    }
}

/// Boundary-condition type. Non-periodic boundaries list one condition per
/// endpoint (1D: left, right) or edge (2D: bottom, top, left, right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundaryType {
    Periodic,
    NonPeriodic(Vec<EdgeCondition>),
}

impl BoundaryType {
    pub fn is_periodic(&self) -> bool {
        matches!(self, BoundaryType::Periodic)
    }
}

/// The six component kinds of the categorization table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComponentKind {
    EquationFormulation,
    Coefficient,
    BoundaryConditionType,
    ExternalForce,
    DomainGeometry,
    BoundaryValueFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    DomainWise,
    PointWise,
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown PDE component kind `{0}`")]
pub struct UnknownComponent(pub String);

impl FromStr for ComponentKind {
    type Err = UnknownComponent;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "equationformulation" | "symbols" | "equation" => ComponentKind::EquationFormulation,
            "coefficient" | "equationcoefficient" | "coefficients" => ComponentKind::Coefficient,
            "boundaryconditiontype" | "boundarytype" => ComponentKind::BoundaryConditionType,
            "externalforce" | "force" => ComponentKind::ExternalForce,
            "domaingeometry" | "geometry" => ComponentKind::DomainGeometry,
            "boundaryvaluefunction" | "boundaryvalues" => ComponentKind::BoundaryValueFunction,
            _ => return Err(UnknownComponent(s.to_string())),
        })
    }
}

pub fn categorize(kind: ComponentKind) -> Category {
    match kind {
        ComponentKind::EquationFormulation
        | ComponentKind::Coefficient
        | ComponentKind::BoundaryConditionType => Category::DomainWise,
        ComponentKind::ExternalForce
        | ComponentKind::DomainGeometry
        | ComponentKind::BoundaryValueFunction => Category::PointWise,
    }
}

/// Categorizes a component given by name; unknown names are an error.
pub fn categorize_name(name: &str) -> Result<Category, UnknownComponent> {
    name.parse().map(categorize)
}

/// One sample's complete condition set. Absent fields are `None`, never
/// implicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeComponents {
    /// Equation formulation as LaTeX.
    pub symbols: String,
    pub coefficients: BTreeMap<String, f64>,
    pub boundary: BoundaryType,
    pub force: Option<Field>,
    /// Diffusion field κ(x).
    pub kappa: Option<Field>,
    pub geometry_mask: Option<Field>,
    pub boundary_values: Option<Field>,
}

impl PdeComponents {
    pub fn new(symbols: impl Into<String>, boundary: BoundaryType) -> Self {
        PdeComponents {
            symbols: symbols.into(),
            coefficients: BTreeMap::new(),
            boundary,
            force: None,
            kappa: None,
            geometry_mask: None,
            boundary_values: None,
        }
    }

    pub fn with_coefficient(mut self, name: &str, value: f64) -> Self {
        self.coefficients.insert(name.to_string(), value);
        self
    }

    /// Point-wise fields in a fixed order, paired with their names.
    pub fn point_fields(&self) -> [(&'static str, Option<&Field>); 4] {
        [
            ("force", self.force.as_ref()),
            ("kappa", self.kappa.as_ref()),
            ("geometry_mask", self.geometry_mask.as_ref()),
            ("boundary_values", self.boundary_values.as_ref()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitTag {
    #[serde(rename = "ID")]
    InDistribution,
    #[serde(rename = "OOD")]
    OutOfDistribution,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::InDistribution => "ID",
            SplitTag::OutOfDistribution => "OOD",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Field,
    pub output: Field,
    pub components: PdeComponents,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Grid(String),
    MaskNotBinary { index: usize, value: f64 },
    BoundaryValuesInterior { index: usize, value: f64 },
    BoundaryValuesWithPeriodic,
    NonFinite { field: &'static str },
    FieldShape { field: &'static str, shape: Vec<usize> },
    NegativeKappa { index: usize, value: f64 },
    EmptySymbols,
    EdgeCount { expected: usize, actual: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Grid(msg) => write!(f, "grid: {msg}"),
            Violation::MaskNotBinary { index, value } => {
                write!(f, "mask not binary: value {value} at flat index {index}")
            }
            Violation::BoundaryValuesInterior { index, value } => write!(
                f,
                "boundary values nonzero at interior point (flat index {index}, value {value})"
            ),
            Violation::BoundaryValuesWithPeriodic => {
                write!(f, "periodic boundary cannot carry boundary value functions")
            }
            Violation::NonFinite { field } => write!(f, "field `{field}` has non-finite values"),
            Violation::FieldShape { field, shape } => {
                write!(f, "field `{field}` shape {shape:?} does not match the grid")
            }
            Violation::NegativeKappa { index, value } => {
                write!(f, "kappa negative ({value}) at flat index {index}")
            }
            Violation::EmptySymbols => write!(f, "equation symbols are empty"),
            Violation::EdgeCount { expected, actual } => write!(
                f,
                "non-periodic boundary lists {actual} edge conditions, grid needs {expected}"
            ),
        }
    }
}

/// Trailing (non-channel) dims a field may have on `grid`: the spatial grid,
/// or for 1D problems the `[n_t, n_x]` space-time grid.
fn field_layout_ok(grid: &GridSpec, shape: &[usize]) -> bool {
    if shape.len() < 2 || shape[0] == 0 {
        return false;
    }
    let tail = &shape[1..];
    tail == grid.spatial_shape().as_slice() || (grid.dims() == 1 && tail == [grid.n_t, grid.n_x])
}

/// Whether flat index `i` of a field with `shape` lies on the one-cell border.
fn on_border(grid: &GridSpec, shape: &[usize], i: usize) -> bool {
    let n_x = *shape.last().unwrap();
    let ix = i % n_x;
    if ix == 0 || ix == n_x - 1 {
        return true;
    }
    if let Some(n_y) = grid.n_y {
        if shape.len() == 3 && shape[1] == n_y {
            let iy = (i / n_x) % n_y;
            return iy == 0 || iy == n_y - 1;
        }
    }
    false
}

/// Checks every typed invariant and returns all violations found.
pub fn validate(sample: &Sample, grid: &GridSpec) -> Vec<Violation> {
    let mut out = grid.check();
    if !out.is_empty() {
        return out;
    }
    let c = &sample.components;
    if c.symbols.trim().is_empty() {
        out.push(Violation::EmptySymbols);
    }
    if let BoundaryType::NonPeriodic(edges) = &c.boundary {
        let expected = 2 * grid.dims();
        if edges.len() != expected {
            out.push(Violation::EdgeCount {
                expected,
                actual: edges.len(),
            });
        }
    }
    let mut fields: Vec<(&'static str, &Field)> = vec![("input", &sample.input), ("output", &sample.output)];
    for (name, f) in c.point_fields() {
        if let Some(f) = f {
            fields.push((name, f));
        }
    }
    for (name, f) in &fields {
        if !field_layout_ok(grid, f.shape()) {
            out.push(Violation::FieldShape {
                field: name,
                shape: f.shape().to_vec(),
            });
        }
        if !f.is_finite() {
            out.push(Violation::NonFinite { field: name });
        }
    }
    if c.coefficients.values().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { field: "coefficients" });
    }
    if let Some(mask) = &c.geometry_mask {
        if let Some((index, &value)) = mask.data().iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            out.push(Violation::MaskNotBinary { index, value });
        }
    }
    if let Some(kappa) = &c.kappa {
        if let Some((index, &value)) = kappa.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
            out.push(Violation::NegativeKappa { index, value });
        }
    }
    if let Some(bv) = &c.boundary_values {
        if c.boundary.is_periodic() {
            out.push(Violation::BoundaryValuesWithPeriodic);
        }
        if field_layout_ok(grid, bv.shape()) {
            if let Some((index, &value)) = bv
                .data()
                .iter()
                .enumerate()
                .find(|(i, &v)| v != 0.0 && !on_border(grid, bv.shape(), *i))
            {
                out.push(Violation::BoundaryValuesInterior { index, value });
            }
        }
    }
    out
}
