use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Result, Tensor, Var};

/// Named parameter tensors in build order. Layers refer to entries by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`
    Xavier,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, shape: &[usize], init: Init, rng: &mut ChaCha8Rng) -> usize {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Xavier => {
                let (fan_in, fan_out) = (shape[0], shape.get(1).copied().unwrap_or(1));
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-a..a)).collect()).expect("shape")
            }
        };
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Records every parameter on `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }
}

/// `x·W + b` with `W: [d_in, d_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn build(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, zero: bool, rng: &mut ChaCha8Rng) -> Self {
        let init = if zero { Init::Zeros } else { Init::Xavier };
        let w = store.add(format!("{name}.weight"), &[d_in, d_out], init, rng);
        let b = store.add(format!("{name}.bias"), &[d_out], Init::Zeros, rng);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add(y, p[self.b])
    }
}

/// `Linear → SiLU → Linear`; the second layer may start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp2 {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp2 {
    pub fn build(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        zero_first: bool,
        zero_last: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Mlp2 {
            l1: Linear::build(store, &format!("{name}.0"), dims[0], dims[1], zero_first, rng),
            l2: Linear::build(store, &format!("{name}.1"), dims[1], dims[2], zero_last, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.l1.forward(g, p, x)?;
        let h = g.silu(h);
        self.l2.forward(g, p, h)
    }
}

/// Affine layer norm over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gain: usize,
    pub bias: usize,
}

impl Norm {
    pub fn build(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Norm {
            gain: store.add(format!("{name}.gain"), &[d], Init::Ones, rng),
            bias: store.add(format!("{name}.bias"), &[d], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, eps: f64) -> Result<Var> {
        g.layer_norm(x, p[self.gain], p[self.bias], eps)
    }
}
