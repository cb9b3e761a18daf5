//! The conditioned transformer: patch embedding, blocks modulated by
//! per-token (scale, shift, select) triples, and a conditioned read-out.
//!
//! The feature axis is split in two. The leading `d_domain` channels of
//! every triple come from the sample-wide condition and are repeated over
//! tokens; the trailing `d_point` channels come from the per-token condition.

mod config;
mod params;

pub use config::{split_subspace, Conditioning, ConfigError, ModelConfig, SymbolSource, TaskMode};
pub use params::{Init, Linear, Mlp2, Norm, ParamStore};

use std::path::Path;

use thiserror::Error;

use crate::components::{Field, PdeComponents};
use crate::embedding::{
    boundary_features, coefficient_features, coefficient_value, to_model_grid, EmbedError, EmbeddingTable,
    SymbolEmbedder, BOUNDARY_FEATURES,
};
use crate::solvers::seeded_rng;
use crate::tensor::{Graph, Tensor, TensorError, Var};

/// Point-wise component kinds, in adapter order.
pub const POINT_KINDS: [&str; 4] = ["force", "kappa", "geometry_mask", "boundary_values"];
/// Domain-wise adapters.
pub const DOMAIN_KINDS: [&str; 3] = ["symbols", "coefficients", "boundary"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{name}: model expects {expected}, got {actual}")]
    Dimension {
        name: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unknown adapter {0:?}; expected one of symbols, coefficients, boundary, force, kappa, geometry_mask, boundary_values")]
    UnknownAdapter(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Flattens `[C, H, W]` into `[tokens, C·ph·pw]`; tokens run row-major over
/// the patch grid and each vector is ordered `(channel, row, column)`.
pub fn patchify(field: &Tensor, patch: [usize; 2]) -> Result<Tensor> {
    let s = field.shape();
    if s.len() != 3 {
        return Err(TensorError::Invalid(format!("patchify expects [C, H, W], got {s:?}")).into());
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    check_divisible([h, w], patch)?;
    let index = patch_index(c, [h, w], patch);
    let d = field.data();
    let data = index.iter().map(|&i| d[i]).collect();
    let (nh, nw) = (h / patch[0], w / patch[1]);
    Ok(Tensor::new(vec![nh * nw, c * patch[0] * patch[1]], data)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, channels: usize, grid: [usize; 2], patch: [usize; 2]) -> Result<Tensor> {
    check_divisible(grid, patch)?;
    let index = unpatch_index(channels, grid, patch);
    let d = tokens.data();
    if d.len() != channels * grid[0] * grid[1] {
        return Err(TensorError::Invalid(format!(
            "unpatchify: {} values cannot fill {channels}×{}×{}",
            d.len(),
            grid[0],
            grid[1]
        ))
        .into());
    }
    Ok(Tensor::new(vec![channels, grid[0], grid[1]], index.iter().map(|&i| d[i]).collect())?)
}

fn check_divisible(grid: [usize; 2], patch: [usize; 2]) -> std::result::Result<(), ConfigError> {
    for (dim, size, p) in [("height", grid[0], patch[0]), ("width", grid[1], patch[1])] {
        if p == 0 || size == 0 || size % p != 0 {
            return Err(ConfigError::Indivisible { dim, size, patch: p });
        }
    }
    Ok(())
}

/// Source offset in `[C, H, W]` of every patchified element.
fn patch_index(c: usize, grid: [usize; 2], patch: [usize; 2]) -> Vec<usize> {
    let [h, w] = grid;
    let [ph, pw] = patch;
    let mut index = Vec::with_capacity(c * h * w);
    for ty in 0..h / ph {
        for tx in 0..w / pw {
            for ch in 0..c {
                for py in 0..ph {
                    for px in 0..pw {
                        index.push(ch * h * w + (ty * ph + py) * w + tx * pw + px);
                    }
                }
            }
        }
    }
    index
}

/// Source offset in `[tokens, C·ph·pw]` of every `[C, H, W]` element.
fn unpatch_index(c: usize, grid: [usize; 2], patch: [usize; 2]) -> Vec<usize> {
    let [h, w] = grid;
    let [ph, pw] = patch;
    let per_token = c * ph * pw;
    let mut index = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let token = (y / ph) * (w / pw) + x / pw;
                index.push(token * per_token + ch * ph * pw + (y % ph) * pw + x % pw);
            }
        }
    }
    index
}

/// Fixed sinusoidal encoding `[tokens, d]`. With `d % 4 == 0` the first half
/// encodes the patch row and the second half the patch column; otherwise the
/// flattened token index is encoded.
pub fn positional_encoding(patch_grid: [usize; 2], d: usize) -> Tensor {
    let [nh, nw] = patch_grid;
    let n = nh * nw;
    let mut data = vec![0.0; n * d];
    let enc = |pos: f64, width: usize, out: &mut [f64]| {
        for (i, v) in out.iter_mut().enumerate().take(width) {
            let k = (i / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * k / width as f64);
            *v = if i % 2 == 0 { (pos * freq).sin() } else { (pos * freq).cos() };
        }
    };
    for t in 0..n {
        let row = &mut data[t * d..(t + 1) * d];
        if d % 4 == 0 {
            let half = d / 2;
            let (a, b) = row.split_at_mut(half);
            enc((t / nw) as f64, half, a);
            enc((t % nw) as f64, half, b);
        } else {
            enc(t as f64, d, row);
        }
    }
    Tensor::new(vec![n, d], data).expect("encoding shape")
}

/// Per-sample model inputs: patchified observations plus raw condition
/// features. Computed once and reused across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// `[tokens, C·ph·pw]`
    pub tokens: Tensor,
    /// `[1, symbol_dim]`
    pub symbols: Tensor,
    /// `[1, 2·keys]`, absent when the sample carries no coefficients.
    pub coefficients: Option<Tensor>,
    /// `[1, BOUNDARY_FEATURES]`
    pub boundary: Tensor,
    /// `[tokens, ph·pw]` per point kind.
    pub points: [Option<Tensor>; 4],
}

/// Deep conditions as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepConditions {
    /// `[1, d_cond]`
    pub c_domain: Tensor,
    /// `[tokens, d_cond]`
    pub c_point: Tensor,
}

/// Deep conditions recorded on a graph, with the leaves they came from.
#[derive(Debug, Clone)]
pub struct ConditionVars {
    pub c_domain: Var,
    /// `None` means an all-zero sequence.
    pub c_point: Option<Var>,
    pub n_tokens: usize,
    pub coefficients: Option<Var>,
    pub points: [Option<Var>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Attention,
    FeedForward,
}

/// How block triples are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Conditioned,
    /// `(scale, shift, select) = (1, 0, 1)` in every block and `(1, 0)` in the
    /// head: a plain pre-norm transformer.
    Pinned,
}

/// Full-width `[tokens, d_feature]` modulation vectors.
#[derive(Debug, Clone, Copy)]
pub struct Triple {
    pub scale: Var,
    pub shift: Var,
    pub select: Var,
}

/// Maps conditions to `parts` modulation vectors split across the subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondProj {
    pub domain: Mlp2,
    pub point: Mlp2,
    pub parts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub ln1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub attn_cond: CondProj,
    pub ff_cond: CondProj,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adapters {
    pub symbols: Mlp2,
    pub coefficients: Option<Mlp2>,
    pub boundary: Mlp2,
    pub points: [Linear; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnisolverModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub d_domain: usize,
    pub d_point: usize,
    embedder: SymbolEmbedder,
    embed: Linear,
    layers: Vec<Layer>,
    head_norm: Norm,
    head_cond: CondProj,
    out: Linear,
    adapters: Adapters,
    pos: Tensor,
    unpatch: Vec<usize>,
}

impl UnisolverModel {
    /// Builds a freshly initialized model. A precomputed symbol table is read
    /// from the configured path.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let embedder = match &config.symbols {
            SymbolSource::Hashed => SymbolEmbedder::Hashed { dim: config.symbol_dim },
            SymbolSource::Precomputed { path } => {
                let table = EmbeddingTable::load(Path::new(path))?;
                if table.dim != config.symbol_dim {
                    return Err(ModelError::Dimension {
                        name: "symbol embedding width",
                        expected: config.symbol_dim,
                        actual: table.dim,
                    });
                }
                SymbolEmbedder::Precomputed(table)
            }
        };
        Self::with_embedder(config, embedder)
    }

    pub fn with_embedder(config: ModelConfig, embedder: SymbolEmbedder) -> Result<Self> {
        config.validate()?;
        if embedder.dim() != config.symbol_dim {
            return Err(ModelError::Dimension {
                name: "symbol embedding width",
                expected: config.symbol_dim,
                actual: embedder.dim(),
            });
        }
        for name in &config.zero_init_adapters {
            if !DOMAIN_KINDS.contains(&name.as_str()) && !POINT_KINDS.contains(&name.as_str()) {
                return Err(ModelError::UnknownAdapter(name.clone()));
            }
        }
        let (d_domain, d_point) = config.split()?;
        let d = config.d_feature;
        let attn = config.n_heads * config.d_head;
        let (dc, hid) = (config.d_cond, config.cond_hidden);
        let [ph, pw] = config.patch;
        let mut rng = seeded_rng(config.seed, 0);
        let mut store = ParamStore::new();
        let rng = &mut rng;

        let embed = Linear::build(&mut store, "embed", config.effective_in_channels() * ph * pw, d, false, rng);
        let cond_proj = |store: &mut ParamStore, name: &str, parts: usize, rng: &mut _| CondProj {
            domain: Mlp2::build(store, &format!("{name}.domain"), [dc, hid, parts * d_domain], false, true, rng),
            point: Mlp2::build(store, &format!("{name}.point"), [dc, hid, parts * d_point], false, true, rng),
            parts,
        };
        let layers = (0..config.n_layers)
            .map(|i| {
                let n = format!("blocks.{i}");
                Layer {
                    ln1: Norm::build(&mut store, &format!("{n}.ln1"), d, rng),
                    q: Linear::build(&mut store, &format!("{n}.attn.q"), d, attn, false, rng),
                    k: Linear::build(&mut store, &format!("{n}.attn.k"), d, attn, false, rng),
                    v: Linear::build(&mut store, &format!("{n}.attn.v"), d, attn, false, rng),
                    o: Linear::build(&mut store, &format!("{n}.attn.o"), attn, d, false, rng),
                    ln2: Norm::build(&mut store, &format!("{n}.ln2"), d, rng),
                    ff1: Linear::build(&mut store, &format!("{n}.ff.0"), d, d, false, rng),
                    ff2: Linear::build(&mut store, &format!("{n}.ff.1"), d, d, false, rng),
                    attn_cond: cond_proj(&mut store, &format!("{n}.attn_cond"), 3, rng),
                    ff_cond: cond_proj(&mut store, &format!("{n}.ff_cond"), 3, rng),
                }
            })
            .collect();
        let head_norm = Norm::build(&mut store, "head.ln", d, rng);
        let head_cond = cond_proj(&mut store, "head.cond", 2, rng);
        let out = Linear::build(&mut store, "head.out", d, config.out_channels * ph * pw, false, rng);

        let zero = |kind: &str| config.zero_init_adapters.iter().any(|k| k == kind);
        let adapters = Adapters {
            symbols: Mlp2::build(&mut store, "adapt.symbols", [config.symbol_dim, hid, dc], false, zero("symbols"), rng),
            coefficients: (!config.coefficient_keys.is_empty()).then(|| {
                let k = config.coefficient_keys.len();
                Mlp2::build(&mut store, "adapt.coefficients", [2 * k, hid, dc], false, zero("coefficients"), rng)
            }),
            boundary: Mlp2::build(&mut store, "adapt.boundary", [BOUNDARY_FEATURES, hid, dc], false, zero("boundary"), rng),
            points: POINT_KINDS.map(|kind| Linear::build(&mut store, &format!("adapt.{kind}"), ph * pw, dc, zero(kind), rng)),
        };

        let patch_grid = [config.grid[0] / ph, config.grid[1] / pw];
        let pos = positional_encoding(patch_grid, d);
        let unpatch = unpatch_index(config.out_channels, config.grid, config.patch);
        Ok(UnisolverModel {
            d_domain,
            d_point,
            embedder,
            embed,
            layers,
            head_norm,
            head_cond,
            out,
            adapters,
            pos,
            unpatch,
            params: store,
            config,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.config.n_tokens()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn embedder(&self) -> &SymbolEmbedder {
        &self.embedder
    }

    /// Output shape `[C_out, H, W]`.
    pub fn output_shape(&self) -> [usize; 3] {
        [self.config.out_channels, self.config.grid[0], self.config.grid[1]]
    }

    /// Lays out one sample's input and conditions for the network.
    pub fn prepare(&self, input: &Field, components: &PdeComponents) -> Result<Prepared> {
        let cfg = &self.config;
        let grid = cfg.grid;
        let expected_rank = match cfg.task_mode {
            TaskMode::FullField => 2,
            TaskMode::Frames => 3,
        };
        if input.rank() != expected_rank {
            return Err(ModelError::Dimension {
                name: "input rank",
                expected: expected_rank,
                actual: input.rank(),
            });
        }
        if input.shape()[0] != cfg.in_channels {
            return Err(ModelError::Dimension {
                name: "input channels",
                expected: cfg.in_channels,
                actual: input.shape()[0],
            });
        }
        let s = input.shape();
        let width = s[s.len() - 1];
        if width != grid[1] {
            return Err(ModelError::Dimension {
                name: "grid width",
                expected: grid[1],
                actual: width,
            });
        }
        if s.len() == 3 && s[1] != grid[0] {
            return Err(ModelError::Dimension {
                name: "grid height",
                expected: grid[0],
                actual: s[1],
            });
        }
        let x = to_model_grid(input, "input", cfg.task_mode, grid)?;

        let coefficients =
            coefficient_features(&cfg.coefficient_keys, &cfg.log_coefficients, &components.coefficients)?;
        let mut points: [Option<Tensor>; 4] = Default::default();
        let mut point_grids: [Option<Tensor>; 4] = Default::default();
        for (i, (name, field)) in components.point_fields().into_iter().enumerate() {
            if let Some(f) = field {
                let on_grid = to_model_grid(f, name, cfg.task_mode, grid)?;
                if on_grid.shape()[0] != 1 {
                    return Err(ModelError::Dimension {
                        name: "point field channels",
                        expected: 1,
                        actual: on_grid.shape()[0],
                    });
                }
                points[i] = Some(patchify(&on_grid, cfg.patch)?);
                point_grids[i] = Some(on_grid);
            }
        }

        let x = if cfg.conditioning == Conditioning::ConcatInput {
            let plane = grid[0] * grid[1];
            let mut data = x.into_data();
            for key in &cfg.coefficient_keys {
                let v = match components.coefficients.get(key) {
                    Some(&v) => coefficient_value(key, v, &cfg.log_coefficients)?,
                    None => 0.0,
                };
                data.extend(std::iter::repeat(v).take(plane));
            }
            for f in &point_grids {
                match f {
                    Some(t) => data.extend_from_slice(t.data()),
                    None => data.extend(std::iter::repeat(0.0).take(plane)),
                }
            }
            Tensor::new(vec![cfg.effective_in_channels(), grid[0], grid[1]], data)?
        } else {
            x
        };

        Ok(Prepared {
            tokens: patchify(&x, cfg.patch)?,
            symbols: Tensor::new(vec![1, cfg.symbol_dim], self.embedder.embed_symbols(&components.symbols)?)?,
            coefficients: coefficients.map(|c| Tensor::new(vec![1, c.len()], c).expect("row")),
            boundary: Tensor::new(vec![1, BOUNDARY_FEATURES], boundary_features(&components.boundary))?,
            points,
        })
    }

    /// Records the deep conditions of a prepared sample. Ablated and
    /// concatenated conditioning yield zero conditions.
    pub fn conditions(&self, g: &mut Graph, p: &[Var], prep: &Prepared) -> Result<ConditionVars> {
        let n_tokens = prep.tokens.shape()[0];
        if self.config.conditioning != Conditioning::Full {
            return Ok(ConditionVars {
                c_domain: g.constant(Tensor::zeros(&[1, self.config.d_cond])),
                c_point: None,
                n_tokens,
                coefficients: None,
                points: [None; 4],
            });
        }
        let a = &self.adapters;
        let sym = g.input(prep.symbols.clone());
        let mut c_domain = a.symbols.forward(g, p, sym)?;
        let bnd = g.input(prep.boundary.clone());
        let b = a.boundary.forward(g, p, bnd)?;
        c_domain = g.add(c_domain, b)?;
        let mut coefficients = None;
        if let (Some(mlp), Some(c)) = (&a.coefficients, &prep.coefficients) {
            let cv = g.input(c.clone());
            let e = mlp.forward(g, p, cv)?;
            c_domain = g.add(c_domain, e)?;
            coefficients = Some(cv);
        }
        let mut c_point: Option<Var> = None;
        let mut points = [None; 4];
        for (i, field) in prep.points.iter().enumerate() {
            if let Some(t) = field {
                if t.shape()[0] != n_tokens {
                    return Err(ModelError::Dimension {
                        name: "point-wise tokens",
                        expected: n_tokens,
                        actual: t.shape()[0],
                    });
                }
                let v = g.input(t.clone());
                let e = a.points[i].forward(g, p, v)?;
                c_point = Some(match c_point {
                    Some(acc) => g.add(acc, e)?,
                    None => e,
                });
                points[i] = Some(v);
            }
        }
        Ok(ConditionVars {
            c_domain,
            c_point,
            n_tokens,
            coefficients,
            points,
        })
    }

    /// Evaluates the deep conditions of a prepared sample.
    pub fn deep_conditions(&self, prep: &Prepared) -> Result<DeepConditions> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let c = self.conditions(&mut g, &p, prep)?;
        let c_point = match c.c_point {
            Some(v) => g.value(v).clone(),
            None => Tensor::zeros(&[c.n_tokens, self.config.d_cond]),
        };
        Ok(DeepConditions {
            c_domain: g.value(c.c_domain).clone(),
            c_point,
        })
    }

    /// Modulation vectors of one projection: domain channels first, repeated
    /// over tokens, then point channels.
    pub fn project(&self, g: &mut Graph, p: &[Var], proj: &CondProj, cond: &ConditionVars) -> Result<Vec<Var>> {
        let t = cond.n_tokens;
        if let Some(cp) = cond.c_point {
            let rows = g.shape(cp)[0];
            if rows != t {
                return Err(ModelError::Dimension {
                    name: "point-wise condition tokens",
                    expected: t,
                    actual: rows,
                });
            }
        }
        let dom = proj.domain.forward(g, p, cond.c_domain)?;
        let dom_parts = g.split(dom, 1, &vec![self.d_domain; proj.parts])?;
        let pt_parts = match cond.c_point {
            Some(cp) => {
                let pt = proj.point.forward(g, p, cp)?;
                g.split(pt, 1, &vec![self.d_point; proj.parts])?
            }
            None => {
                // a zero sequence maps every token to the same row
                let zero = g.constant(Tensor::zeros(&[1, self.config.d_cond]));
                let pt = proj.point.forward(g, p, zero)?;
                let rows = g.split(pt, 1, &vec![self.d_point; proj.parts])?;
                rows.into_iter().map(|r| g.repeat_rows(r, t)).collect::<std::result::Result<_, _>>()?
            }
        };
        let mut out = Vec::with_capacity(proj.parts);
        for (d, pt) in dom_parts.into_iter().zip(pt_parts) {
            let d = g.repeat_rows(d, t)?;
            out.push(g.concat(&[d, pt], 1)?);
        }
        Ok(out)
    }

    /// `(scale, shift, select)` for one block site.
    pub fn condition_triple(
        &self,
        g: &mut Graph,
        p: &[Var],
        cond: &ConditionVars,
        layer: usize,
        site: Site,
    ) -> Result<Triple> {
        let l = &self.layers[layer];
        let proj = match site {
            Site::Attention => &l.attn_cond,
            Site::FeedForward => &l.ff_cond,
        };
        let v = self.project(g, p, proj, cond)?;
        Ok(Triple {
            scale: g.offset(v[0], 1.0),
            shift: v[1],
            select: v[2],
        })
    }

    fn pinned_triple(&self, g: &mut Graph, n_tokens: usize) -> Triple {
        let d = self.config.d_feature;
        Triple {
            scale: g.constant(Tensor::ones(&[n_tokens, d])),
            shift: g.constant(Tensor::zeros(&[n_tokens, d])),
            select: g.constant(Tensor::ones(&[n_tokens, d])),
        }
    }

    /// Multi-head softmax self-attention on `[tokens, d_feature]`.
    pub fn attention(&self, g: &mut Graph, p: &[Var], layer: &Layer, x: Var) -> Result<Var> {
        let q = layer.q.forward(g, p, x)?;
        let k = layer.k.forward(g, p, x)?;
        let v = layer.v.forward(g, p, x)?;
        let dh = self.config.d_head;
        let sizes = vec![dh; self.config.n_heads];
        let (qs, ks, vs) = (g.split(q, 1, &sizes)?, g.split(k, 1, &sizes)?, g.split(v, 1, &sizes)?);
        let mut heads = Vec::with_capacity(sizes.len());
        for ((qh, kh), vh) in qs.into_iter().zip(ks).zip(vs) {
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax(s, 1)?;
            heads.push(g.matmul(a, vh)?);
        }
        let h = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        Ok(layer.o.forward(g, p, h)?)
    }

    /// `x + select ⊙ Attn(scale ⊙ LN(x) + shift)`, then the same with the
    /// feed-forward branch.
    pub fn block_forward(&self, g: &mut Graph, p: &[Var], layer: &Layer, x: Var, attn: &Triple, ff: &Triple) -> Result<Var> {
        let eps = self.config.ln_eps;
        let h = layer.ln1.forward(g, p, x, eps)?;
        let h = g.mul(h, attn.scale)?;
        let h = g.add(h, attn.shift)?;
        let h = self.attention(g, p, layer, h)?;
        let h = g.mul(h, attn.select)?;
        let x = g.add(x, h)?;

        let h = layer.ln2.forward(g, p, x, eps)?;
        let h = g.mul(h, ff.scale)?;
        let h = g.add(h, ff.shift)?;
        let h = layer.ff1.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = layer.ff2.forward(g, p, h)?;
        let h = g.mul(h, ff.select)?;
        Ok(g.add(x, h)?)
    }

    /// Patch projection plus positional encoding.
    pub fn embed_tokens(&self, g: &mut Graph, p: &[Var], tokens: &Tensor) -> Result<Var> {
        let s = tokens.shape();
        for (name, expected, actual) in [("tokens", self.n_tokens(), s[0]), ("patch width", self.embed.d_in, s[1])] {
            if expected != actual {
                return Err(ModelError::Dimension { name, expected, actual });
            }
        }
        let x = g.input(tokens.clone());
        let x = self.embed.forward(g, p, x)?;
        let pe = g.constant(self.pos.clone());
        Ok(g.add(x, pe)?)
    }

    /// Conditioned read-out: `Linear(scale ⊙ LN(x) + shift)` unpatchified.
    fn head(&self, g: &mut Graph, p: &[Var], x: Var, mods: Option<(Var, Var)>) -> Result<Var> {
        let mut h = self.head_norm.forward(g, p, x, self.config.ln_eps)?;
        if let Some((scale, shift)) = mods {
            h = g.mul(h, scale)?;
            h = g.add(h, shift)?;
        }
        let y = self.out.forward(g, p, h)?;
        Ok(g.gather(y, self.unpatch.clone(), &self.output_shape())?)
    }

    /// Full network on already recorded conditions. Returns `[C_out, H, W]`.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        p: &[Var],
        prep: &Prepared,
        cond: &ConditionVars,
        modulation: Modulation,
    ) -> Result<Var> {
        let mut x = self.embed_tokens(g, p, &prep.tokens)?;
        let t = cond.n_tokens;
        for (i, layer) in self.layers.iter().enumerate() {
            let (a, f) = match modulation {
                Modulation::Conditioned => (
                    self.condition_triple(g, p, cond, i, Site::Attention)?,
                    self.condition_triple(g, p, cond, i, Site::FeedForward)?,
                ),
                Modulation::Pinned => (self.pinned_triple(g, t), self.pinned_triple(g, t)),
            };
            x = self.block_forward(g, p, layer, x, &a, &f)?;
        }
        let mods = match modulation {
            Modulation::Conditioned => {
                let v = self.project(g, p, &self.head_cond, cond)?;
                Some((g.offset(v[0], 1.0), v[1]))
            }
            Modulation::Pinned => None,
        };
        self.head(g, p, x, mods)
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], prep: &Prepared) -> Result<Var> {
        let cond = self.conditions(g, p, prep)?;
        self.forward_with(g, p, prep, &cond, Modulation::Conditioned)
    }

    /// Inference on a prepared sample.
    pub fn predict_prepared(&self, prep: &Prepared) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let y = self.forward(&mut g, &p, prep)?;
        Ok(g.value(y).clone())
    }

    /// Inference on a raw sample. Returns `[C_out, H, W]`.
    pub fn predict(&self, input: &Field, components: &PdeComponents) -> Result<Tensor> {
        self.predict_prepared(&self.prepare(input, components)?)
    }
}
