use super::kernels;
use super::{matmul_dims, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// rhs matches the trailing axes of lhs and repeats with period `rhs.numel()`
    Trailing,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    MatmulNt(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, f64),
    Offset(usize),
    Silu(usize),
    Gelu(usize),
    Sqrt(usize),
    Softmax {
        x: usize,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    SumAxis {
        x: usize,
        outer: usize,
        n: usize,
        inner: usize,
        mean: bool,
    },
    Reshape(usize),
    Gather {
        x: usize,
        index: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Slice {
        x: usize,
        outer: usize,
        src_chunk: usize,
        offset: usize,
        chunk: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so the node
/// list is always a topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Moves the gradient of `v` out, leaving `None`.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient as a tensor, zeros when no gradient reached `v`.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn axis_split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    /// Records a leaf, honouring the tensor's `requires_grad` flag.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(true), Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n) = matmul_dims(self.shape(a), self.shape(b))?;
        let mut out = vec![0.0; m * n];
        kernels::matmul(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::Matmul(a.0, b.0), rg))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatmulNt(a.0, b.0), rg))
    }

    fn bcast(&self, a: Var, b: Var, op: &'static str) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if sb.is_empty() || (sb.len() == 1 && sb[0] == 1) {
            Ok(Bcast::Scalar)
        } else if sb.len() <= sa.len() && sa.ends_with(sb) {
            Ok(Bcast::Trailing)
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, Bcast)> {
        let mode = self.bcast(a, b, name)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let data: Vec<f64> = match mode {
            Bcast::Same => av.data().iter().zip(bv).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Scalar => av.data().iter().map(|x| f(*x, bv[0])).collect(),
            Bcast::Trailing => {
                let p = bv.len();
                av.data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| f(*x, bv[i % p]))
                    .collect()
            }
        };
        Ok((Tensor::new(av.shape().to_vec(), data)?, mode))
    }

    /// Elementwise sum. The smaller operand may broadcast over trailing axes
    /// or as a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_commutative(a, b);
        let (t, mode) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Add(a.0, b.0, mode), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, mode) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Sub(a.0, b.0, mode), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = self.order_commutative(a, b);
        let (t, mode) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(t, Op::Mul(a.0, b.0, mode), rg))
    }

    fn order_commutative(&self, a: Var, b: Var) -> (Var, Var) {
        if self.value(a).numel() < self.value(b).numel() {
            (b, a)
        } else {
            (a, b)
        }
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v * c);
        let rg = self.rg(x.0);
        self.push(t, Op::Scale(x.0, c), rg)
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let t = self.map(x, |v| v + c);
        let rg = self.rg(x.0);
        self.push(t, Op::Offset(x.0), rg)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape")
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| v * sigmoid(v));
        let rg = self.rg(x.0);
        self.push(t, Op::Silu(x.0), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| {
            0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh())
        });
        let rg = self.rg(x.0);
        self.push(t, Op::Gelu(x.0), rg)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::sqrt);
        let rg = self.rg(x.0);
        self.push(t, Op::Sqrt(x.0), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(x), axis, "softmax")?;
        let src = self.value(x);
        let mut out = vec![0.0; src.numel()];
        let d = src.data();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..n {
                    mx = mx.max(d[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (d[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Softmax { x: x.0, outer, n, inner }, rg))
    }

    /// Layer normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        if !(eps > 0.0) {
            return Err(TensorError::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = self.value(x).numel() / d;
        let src = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::Sum(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::Mean(x.0), rg)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&shape, axis, if mean { "mean_axis" } else { "sum_axis" })?;
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + j) * inner + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let rg = self.rg(x.0);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::SumAxis {
                x: x.0,
                outer,
                n,
                inner,
                mean,
            },
            rg,
        ))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Reshape(x.0), rg))
    }

    /// `out.flat[i] = x.flat[index[i]]`; the backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected: n,
                actual: index.len(),
            });
        }
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(TensorError::Invalid(format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        let rg = self.rg(x.0);
        Ok(self.push(t, Op::Gather { x: x.0, index }, rg))
    }

    /// Swaps the two axes of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::Invalid(format!(
                "transpose expects a matrix, got shape {shape:?}"
            )));
        }
        let (r, c) = (shape[0], shape[1]);
        let mut index = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                index.push(i * c + j);
            }
        }
        self.gather(x, index, &[c, r])
    }

    /// Repeats a `[1, n]` row (or `[n]` vector) `times` times into `[times, n]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = match shape.as_slice() {
            [n] | [1, n] => *n,
            _ => {
                return Err(TensorError::Invalid(format!(
                    "repeat_rows expects [1, n] or [n], got {shape:?}"
                )))
            }
        };
        let index = (0..times).flat_map(|_| 0..n).collect();
        self.gather(x, index, &[times, n])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?)
            .to_vec();
        let (outer, _, inner) = axis_split(&first, axis, "concat")?;
        let mut chunks = Vec::with_capacity(xs.len());
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            chunks.push(s[axis] * inner);
            total += s[axis];
        }
        let row: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&x, &c) in xs.iter().zip(&chunks) {
                out.extend_from_slice(&self.value(x).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|x| self.rg(x.0));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: xs.iter().map(|x| x.0).collect(),
                outer,
                chunks,
            },
            rg,
        ))
    }

    /// Contiguous range `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = axis_split(&shape, axis, "slice")?;
        if start + len > n || len == 0 {
            return Err(TensorError::Invalid(format!(
                "slice [{start}, {}) out of range for axis {axis} of size {n}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let (src_chunk, chunk, offset) = (n * inner, len * inner, start * inner);
        let mut out = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            let b = o * src_chunk + offset;
            out.extend_from_slice(&src[b..b + chunk]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x.0);
        Ok(self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice {
                x: x.0,
                outer,
                src_chunk,
                offset,
                chunk,
            },
            rg,
        ))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or(TensorError::InvalidAxis {
                op: "split",
                axis,
                rank: self.shape(x).len(),
            })?;
        if total != n {
            return Err(TensorError::Invalid(format!(
                "split sizes {sizes:?} do not sum to axis length {n}"
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accum<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[id].requires_grad {
            return None;
        }
        let n = self.nodes[id].value.numel();
        Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
    }

    fn reduce_bcast(g: &[f64], dst: &mut [f64], mode: Bcast, f: impl Fn(usize, f64) -> f64) {
        match mode {
            Bcast::Same => {
                for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                    *d += f(i, gv);
                }
            }
            Bcast::Scalar => {
                dst[0] += g.iter().enumerate().map(|(i, &gv)| f(i, gv)).sum::<f64>();
            }
            Bcast::Trailing => {
                let p = dst.len();
                for (i, &gv) in g.iter().enumerate() {
                    dst[i % p] += f(i, gv);
                }
            }
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |i: usize| self.nodes[i].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if let Some(da) = self.accum(grads, *a) {
                    kernels::matmul_nt(g, val(*b), da, m, n, k);
                }
                if let Some(db) = self.accum(grads, *b) {
                    kernels::matmul_tn(val(*a), g, db, m, k, n);
                }
            }
            Op::MatmulNt(a, b) => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[0]);
                if let Some(da) = self.accum(grads, *a) {
                    kernels::matmul(g, val(*b), da, m, n, k);
                }
                if let Some(db) = self.accum(grads, *b) {
                    kernels::matmul_tn(g, val(*a), db, m, n, k);
                }
            }
            Op::Add(a, b, mode) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if let Some(db) = self.accum(grads, *b) {
                    Self::reduce_bcast(g, db, *mode, |_, gv| gv);
                }
            }
            Op::Sub(a, b, mode) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if let Some(db) = self.accum(grads, *b) {
                    Self::reduce_bcast(g, db, *mode, |_, gv| -gv);
                }
            }
            Op::Mul(a, b, mode) => {
                let (av, bv) = (val(*a), val(*b));
                let p = bv.len();
                if let Some(da) = self.accum(grads, *a) {
                    for (i, (d, &gv)) in da.iter_mut().zip(g).enumerate() {
                        let bi = match mode {
                            Bcast::Same => bv[i],
                            Bcast::Scalar => bv[0],
                            Bcast::Trailing => bv[i % p],
                        };
                        *d += gv * bi;
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    Self::reduce_bcast(g, db, *mode, |i, gv| gv * av[i]);
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * c);
                }
            }
            Op::Offset(x) | Op::Reshape(x) => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
            Op::Silu(x) => {
                let xv = val(*x);
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        let s = sigmoid(v);
                        *d += gv * (s + v * s * (1.0 - s));
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = val(*x);
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
                        *d += gv * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                }
            }
            Op::Sqrt(x) => {
                let out = node.value.data();
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &o) in dx.iter_mut().zip(g).zip(out) {
                        *d += gv * 0.5 / o;
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = node.value.data();
                if let Some(dx) = self.accum(grads, *x) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let base = o * n * inner + i;
                            let mut dot = 0.0;
                            for j in 0..*n {
                                let k = base + j * inner;
                                dot += g[k] * y[k];
                            }
                            for j in 0..*n {
                                let k = base + j * inner;
                                dx[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = self.nodes[*gain].value.numel();
                let rows = inv_std.len();
                let gv = val(*gain);
                if let Some(dx) = self.accum(grads, *x) {
                    let mut dh = vec![0.0; d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            dh[j] = gr[j] * gv[j];
                            m1 += dh[j];
                            m2 += dh[j] * hr[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            dx[r * d + j] += inv_std[r] * (dh[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if let Some(dg) = self.accum(grads, *gain) {
                    for (i, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                        dg[i % d] += gv * h;
                    }
                }
                if let Some(db) = self.accum(grads, *bias) {
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.accum(grads, *x) {
                    let s = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumAxis {
                x,
                outer,
                n,
                inner,
                mean,
            } => {
                let s = if *mean { 1.0 / *n as f64 } else { 1.0 };
                if let Some(dx) = self.accum(grads, *x) {
                    for o in 0..*outer {
                        for j in 0..*n {
                            for i in 0..*inner {
                                dx[(o * n + j) * inner + i] += g[o * inner + i] * s;
                            }
                        }
                    }
                }
            }
            Op::Gather { x, index } => {
                if let Some(dx) = self.accum(grads, *x) {
                    for (&i, &gv) in index.iter().zip(g) {
                        dx[i] += gv;
                    }
                }
            }
            Op::Concat {
                inputs,
                outer,
                chunks,
            } => {
                let row: usize = chunks.iter().sum();
                let mut offset = 0;
                for (&inp, &c) in inputs.iter().zip(chunks) {
                    if let Some(dx) = self.accum(grads, inp) {
                        for o in 0..*outer {
                            let src = &g[o * row + offset..o * row + offset + c];
                            for (d, &gv) in dx[o * c..(o + 1) * c].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice {
                x,
                outer,
                src_chunk,
                offset,
                chunk,
            } => {
                if let Some(dx) = self.accum(grads, *x) {
                    for o in 0..*outer {
                        let b = o * src_chunk + offset;
                        for (d, &gv) in dx[b..b + chunk].iter_mut().zip(&g[o * chunk..(o + 1) * chunk]) {
                            *d += gv;
                        }
                    }
                }
            }
        }
    }
}
