//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.
//!
//! `cargo test -p unisolver --test acceptance -- <filter>` runs only the
//! criteria whose name contains `<filter>`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use unisolver::components::{BoundaryType, PdeComponents, SplitTag};
use unisolver::data::Dataset;
use unisolver::model::*;
use unisolver::solvers::*;
use unisolver::string_oracle::*;
use unisolver::tensor::{finite_diff_gradient, max_relative_error, Graph, Tensor, Var};
use unisolver::train::*;

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

// ---------------------------------------------------------------- model

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_feature: 16,
        n_layers: 2,
        n_heads: 2,
        d_head: 8,
        patch: [1, 2],
        grid: [2, 4],
        d_cond: 6,
        cond_hidden: 5,
        symbol_dim: 8,
        coefficient_keys: vec!["nu".into()],
        ..ModelConfig::default()
    }
}

fn randomize(model: &mut UnisolverModel, seed: u64, scale: f64) {
    let mut rng = seeded_rng(seed, 99);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-1.0..1.0) * scale;
        }
    }
}

fn components(nu: f64, force: bool) -> PdeComponents {
    let mut c = PdeComponents::new("\\partial_t w = \\nu \\Delta w + f", BoundaryType::Periodic).with_coefficient("nu", nu);
    if force {
        c.force = Some(Tensor::new(vec![1, 4], vec![0.3, -0.7, 1.1, 0.2]).unwrap());
    }
    c
}

fn tiny_input() -> Tensor {
    Tensor::new(vec![1, 4], vec![0.5, -1.0, 0.25, 2.0]).unwrap()
}

fn weighted_sum(g: &mut Graph, y: Var) -> Var {
    let n = g.value(y).numel();
    let w = Tensor::new(g.shape(y).to_vec(), (0..n).map(|i| ((i as f64) * 0.7).sin() + 0.3).collect()).unwrap();
    let wv = g.constant(w);
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

fn gradient_correctness() -> Outcome {
    let mut model = UnisolverModel::new(tiny_config()).map_err(|e| e.to_string())?;
    randomize(&mut model, 7, 0.5);
    let prep = model.prepare(&tiny_input(), &components(0.4, true)).map_err(|e| e.to_string())?;
    if model.n_tokens() != 4 || prep.points[0].is_none() || prep.coefficients.is_none() {
        return Err("setup does not exercise both condition kinds on 4 tokens".into());
    }
    let loss_of = |store: &ParamStore, trainable: bool| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let p = store.bind(&mut g, trainable);
        let y = model.forward(&mut g, &p, &prep).unwrap();
        let l = weighted_sum(&mut g, y);
        (g, p, l)
    };
    let (g, p, loss) = loss_of(&model.params, true);
    let grads = g.backward(loss).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for (i, name) in model.params.names().iter().enumerate() {
        let fd = finite_diff_gradient(
            |t| {
                let mut s = model.params.clone();
                s.tensors_mut()[i] = t.clone();
                let (g, _, l) = loss_of(&s, false);
                g.value(l).item().unwrap()
            },
            &model.params.tensors()[i],
            1e-5,
        );
        let err = max_relative_error(grads.tensor(p[i]).data(), fd.data(), 1e-6);
        if err > worst {
            worst = err;
            worst_name = name.clone();
        }
    }
    check(
        worst < 1e-4,
        format!("max rel err {worst:.2e} ({worst_name}) over {} tensors", model.params.len()),
    )
}

fn identity_at_init() -> Outcome {
    let model = UnisolverModel::new(tiny_config()).map_err(|e| e.to_string())?;
    let prep = model.prepare(&tiny_input(), &components(0.1, true)).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let cond = model.conditions(&mut g, &p, &prep).map_err(|e| e.to_string())?;
    let mut x = model.embed_tokens(&mut g, &p, &prep.tokens).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, layer) in model.layers().iter().enumerate() {
        let a = model.condition_triple(&mut g, &p, &cond, i, Site::Attention).map_err(|e| e.to_string())?;
        let f = model.condition_triple(&mut g, &p, &cond, i, Site::FeedForward).map_err(|e| e.to_string())?;
        let y = model.block_forward(&mut g, &p, layer, x, &a, &f).map_err(|e| e.to_string())?;
        worst = worst.max(g.value(y).max_abs_diff(g.value(x)).unwrap());
        x = y;
    }
    let a = model.predict(&tiny_input(), &components(0.1, true)).map_err(|e| e.to_string())?;
    let b = model.predict(&tiny_input(), &components(7.0, false)).map_err(|e| e.to_string())?;
    let spread = a.max_abs_diff(&b).unwrap();
    check(
        worst == 0.0 && spread == 0.0,
        format!("block deviation {worst:e}, output change under new conditions {spread:e}"),
    )
}

fn subspace_decoupling() -> Outcome {
    let mut model = UnisolverModel::new(tiny_config()).map_err(|e| e.to_string())?;
    randomize(&mut model, 4, 0.5);
    let mut rng = seeded_rng(4, 1);
    let (dc, t) = (model.config.d_cond, model.n_tokens());
    let mut rand = |shape: [usize; 2]| {
        Tensor::new(shape.to_vec(), (0..shape[0] * shape[1]).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let c_dom = rand([1, dc]);
    let c_pt = rand([t, dc]);
    let triples = |cd: &Tensor, cp: &Tensor| -> Vec<Tensor> {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g, false);
        let cond = ConditionVars {
            c_domain: g.constant(cd.clone()),
            c_point: Some(g.constant(cp.clone())),
            n_tokens: t,
            coefficients: None,
            points: [None; 4],
        };
        let mut out = Vec::new();
        for i in 0..model.config.n_layers {
            for site in [Site::Attention, Site::FeedForward] {
                let tr = model.condition_triple(&mut g, &p, &cond, i, site).unwrap();
                out.extend([tr.scale, tr.shift, tr.select].map(|v| g.value(v).clone()));
            }
        }
        out
    };
    let (d, dd) = (model.config.d_feature, model.d_domain);
    let base = triples(&c_dom, &c_pt);
    let h = 1e-5;
    let sensitivity = |other: &[Tensor], domain: bool| -> f64 {
        let mut worst: f64 = 0.0;
        for (a, b) in base.iter().zip(other) {
            for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                if (i % d < dd) == domain {
                    worst = worst.max(((x - y) / h).abs());
                }
            }
        }
        worst
    };
    let (mut cross, mut own_min) = (0.0f64, f64::INFINITY);
    for i in 0..c_pt.numel() {
        let mut cp = c_pt.clone();
        cp.data_mut()[i] += h;
        let moved = triples(&c_dom, &cp);
        cross = cross.max(sensitivity(&moved, true));
        own_min = own_min.min(sensitivity(&moved, false));
    }
    for i in 0..dc {
        let mut cd = c_dom.clone();
        cd.data_mut()[i] += h;
        let moved = triples(&cd, &c_pt);
        cross = cross.max(sensitivity(&moved, false));
        own_min = own_min.min(sensitivity(&moved, true));
    }
    check(
        cross < 1e-10 && own_min > 1e-6,
        format!("cross-subspace sensitivity {cross:e}, weakest own-subspace sensitivity {own_min:.2e}"),
    )
}

/// Standard pre-norm transformer on raw weight arrays.
mod plain_vit {
    use super::*;

    fn linear(store: &ParamStore, name: &str, x: &[f64], m: usize) -> Vec<f64> {
        let w = store.get(&format!("{name}.weight")).unwrap();
        let b = store.get(&format!("{name}.bias")).unwrap().data();
        let (k, n) = (w.shape()[0], w.shape()[1]);
        let w = w.data();
        let mut y = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                y[i * n + j] = (0..k).map(|l| x[i * k + l] * w[l * n + j]).sum::<f64>() + b[j];
            }
        }
        y
    }

    fn layer_norm(store: &ParamStore, name: &str, x: &[f64], d: usize, eps: f64) -> Vec<f64> {
        let gain = store.get(&format!("{name}.gain")).unwrap().data();
        let bias = store.get(&format!("{name}.bias")).unwrap().data();
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().enumerate().map(|(i, v)| (v - mean) * inv * gain[i] + bias[i]));
        }
        out
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    pub fn forward(model: &UnisolverModel, tokens: &Tensor) -> Vec<f64> {
        let cfg = &model.config;
        let s = &model.params;
        let (t, d, nh, dh) = (tokens.shape()[0], cfg.d_feature, cfg.n_heads, cfg.d_head);
        let mut x = linear(s, "embed", tokens.data(), t);
        let pe = positional_encoding([cfg.grid[0] / cfg.patch[0], cfg.grid[1] / cfg.patch[1]], d);
        for (v, p) in x.iter_mut().zip(pe.data()) {
            *v += p;
        }
        for l in 0..cfg.n_layers {
            let n = format!("blocks.{l}");
            let h = layer_norm(s, &format!("{n}.ln1"), &x, d, cfg.ln_eps);
            let q = linear(s, &format!("{n}.attn.q"), &h, t);
            let k = linear(s, &format!("{n}.attn.k"), &h, t);
            let v = linear(s, &format!("{n}.attn.v"), &h, t);
            let w = nh * dh;
            let mut heads = vec![0.0; t * w];
            for head in 0..nh {
                let col = |m: &[f64], i: usize, c: usize| m[i * w + head * dh + c];
                for i in 0..t {
                    let scores: Vec<f64> = (0..t)
                        .map(|j| (0..dh).map(|c| col(&q, i, c) * col(&k, j, c)).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for c in 0..dh {
                        heads[i * w + head * dh + c] = (0..t).map(|j| e[j] / z * col(&v, j, c)).sum();
                    }
                }
            }
            let a = linear(s, &format!("{n}.attn.o"), &heads, t);
            x.iter_mut().zip(&a).for_each(|(xv, av)| *xv += av);
            let h = layer_norm(s, &format!("{n}.ln2"), &x, d, cfg.ln_eps);
            let h: Vec<f64> = linear(s, &format!("{n}.ff.0"), &h, t).into_iter().map(gelu).collect();
            let f = linear(s, &format!("{n}.ff.1"), &h, t);
            x.iter_mut().zip(&f).for_each(|(xv, fv)| *xv += fv);
        }
        let h = layer_norm(s, "head.ln", &x, d, cfg.ln_eps);
        let y = linear(s, "head.out", &h, t);
        unpatchify(&Tensor::new(vec![t, y.len() / t], y).unwrap(), cfg.out_channels, cfg.grid, cfg.patch)
            .unwrap()
            .into_data()
    }
}

fn plain_vit_reduction() -> Outcome {
    let mut model = UnisolverModel::new(tiny_config()).map_err(|e| e.to_string())?;
    randomize(&mut model, 5, 0.6);
    let prep = model.prepare(&tiny_input(), &components(0.3, true)).map_err(|e| e.to_string())?;
    let mut g = Graph::new();
    let p = model.params.bind(&mut g, false);
    let cond = model.conditions(&mut g, &p, &prep).map_err(|e| e.to_string())?;
    let y = model.forward_with(&mut g, &p, &prep, &cond, Modulation::Pinned).map_err(|e| e.to_string())?;
    let reference = plain_vit::forward(&model, &prep.tokens);
    let worst = g.value(y).data().iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(worst < 1e-12, format!("max abs difference {worst:e}"))
}

// ---------------------------------------------------------------- string

/// Explicit leapfrog for `u_tt = a² u_xx + f` with fixed ends, started from rest.
fn leapfrog(a: f64, length: f64, horizon: f64, n_x: usize, cfl: f64, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let dx = length / (n_x - 1) as f64;
    let steps = (horizon / (cfl * dx / a)).ceil() as usize;
    let dt = horizon / steps as f64;
    let r2 = (a * dt / dx).powi(2);
    let xs: Vec<f64> = (0..n_x).map(|i| i as f64 * dx).collect();
    let prev = vec![0.0; n_x];
    let mut cur: Vec<f64> = xs.iter().map(|&x| 0.5 * dt * dt * f(x, 0.0)).collect();
    cur[0] = 0.0;
    cur[n_x - 1] = 0.0;
    let mut prev = prev;
    let mut next = vec![0.0; n_x];
    for n in 1..steps {
        let t = n as f64 * dt;
        for i in 1..n_x - 1 {
            next[i] = 2.0 * cur[i] - prev[i] + r2 * (cur[i + 1] - 2.0 * cur[i] + cur[i - 1]) + dt * dt * f(xs[i], t);
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

fn string_oracle() -> Outcome {
    let (a, l) = (1.3, 2.0);
    let standing = StringProblem::new(
        a,
        l,
        1.0,
        SpaceFn::sine_modes(l, &[(1, 1.0)]),
        SpaceFn::Zero,
        SpaceTimeFn::Zero,
    )
    .map_err(|e| e.to_string())?;
    let mut closed_err: f64 = 0.0;
    for i in 0..65 {
        for j in 0..65 {
            let (x, t) = (l * i as f64 / 64.0, j as f64 / 64.0);
            let u = standing.evaluate_solution(x, t, QuadSpec::default()).map_err(|e| e.to_string())?;
            closed_err = closed_err.max((u - (PI * x / l).sin() * (a * PI * t / l).cos()).abs());
        }
    }

    // forcing that does not vanish at the ends, so the odd extension has kinks
    let force = |x: f64, t: f64| (x - 0.3).powi(2) * (2.0 * t).cos() + t * (3.0 * PI * x).sin();
    let driven = StringProblem::new(1.0, 1.0, 1.0, SpaceFn::Zero, SpaceFn::Zero, SpaceTimeFn::closure(force))
        .map_err(|e| e.to_string())?;
    let n_x = 2001;
    let fd = leapfrog(1.0, 1.0, 1.0, n_x, 0.5, force);
    let stride = 50;
    let mut ours = Vec::new();
    let mut theirs = Vec::new();
    for i in (0..n_x).step_by(stride) {
        let x = i as f64 / (n_x - 1) as f64;
        ours.push(driven.evaluate_solution(x, 1.0, QuadSpec::default()).map_err(|e| e.to_string())?);
        theirs.push(fd[i]);
    }
    let duhamel_err = rel_l2(&ours, &theirs);

    // smooth forcing with a closed form: sin(πx)(cos t − cos πt)/(π² − 1)
    let smooth = StringProblem::new(
        1.0,
        1.0,
        1.0,
        SpaceFn::Zero,
        SpaceFn::Zero,
        SpaceTimeFn::closure(|x, t| (PI * x).sin() * t.cos()),
    )
    .map_err(|e| e.to_string())?;
    let points: [(f64, f64); 3] = [(0.3, 0.7), (0.5, 0.4), (0.8, 1.0)];
    let exact: Vec<f64> = points
        .iter()
        .map(|&(x, t)| (PI * x).sin() * (t.cos() - (PI * t).cos()) / (PI * PI - 1.0))
        .collect();
    let errors: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let got: Vec<f64> = points
                .iter()
                .map(|&(x, t)| smooth.evaluate_solution(x, t, QuadSpec::new(n, n)).unwrap())
                .collect();
            got.iter().zip(&exact).map(|(g, e)| (g - e).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    check(
        closed_err < 1e-10 && duhamel_err < 1e-3 && min_order >= 3.5,
        format!(
            "standing wave {closed_err:.1e}, forced vs leapfrog rel L2 {duhamel_err:.2e}, quadrature orders {}",
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join("/")
        ),
    )
}

// ---------------------------------------------------------------- solvers

fn grid_fn(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..n * n).map(|k| f((k % n) as f64 / n as f64, (k / n) as f64 / n as f64)).collect()
}

fn ns_solver() -> Outcome {
    let (n, nu) = (64, 1e-3);
    let w0 = grid_fn(n, |x, y| 2.0 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos());
    let spec = HeterNsSpec {
        nu,
        omega: None,
        n,
        w0: w0.clone(),
        horizon: 1.0,
        n_frames: 2,
    };
    let w = solve_ns2d_spectral(&spec).map_err(|e| e.to_string())?;
    let decay = (-8.0 * PI * PI * nu).exp();
    let exact: Vec<f64> = w0.iter().map(|v| v * decay).collect();
    let tg_err = rel_l2(&w.data()[n * n..], &exact);

    let m = 32;
    let w0 = grid_fn(m, |x, y| {
        0.7 + (2.0 * PI * x).sin() * (4.0 * PI * y).cos() + 0.5 * (2.0 * PI * (x + 2.0 * y) + 0.3).cos()
    });
    let spec = HeterNsSpec {
        nu: 1e-3,
        omega: None,
        n: m,
        w0,
        horizon: 2.0,
        n_frames: 6,
    };
    let w = solve_ns2d_spectral(&spec).map_err(|e| e.to_string())?;
    let frames: Vec<&[f64]> = w.data().chunks(m * m).collect();
    let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    let ens = |f: &[f64]| f.iter().map(|v| v * v).sum::<f64>();
    let drift = frames.iter().map(|f| (mean(f) - mean(frames[0])).abs()).fold(0.0, f64::max);
    let monotone = frames.windows(2).all(|p| ens(p[1]) < ens(p[0]));
    check(
        tg_err < 1e-4 && drift < 1e-12 && monotone,
        format!("decay rel L2 {tg_err:.2e}, mean drift {drift:.1e}, enstrophy monotone {monotone}"),
    )
}

fn sampling_fidelity() -> Outcome {
    let draws = 10_000;
    let mut zeros = 0usize;
    let mut nonzero = Vec::new();
    for seed in 0..draws {
        for row in sample_1d_pde(seed).c {
            for v in row {
                if v == 0.0 {
                    zeros += 1;
                } else {
                    nonzero.push(v);
                }
            }
        }
    }
    let total = zeros + nonzero.len();
    let frac = zeros as f64 / total as f64;
    nonzero.sort_by(f64::total_cmp);
    let n = nonzero.len() as f64;
    let ks = nonzero
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cdf = ((v + 3.0) / 6.0).clamp(0.0, 1.0);
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    let in_range = nonzero.first().is_some_and(|&v| v >= -3.0) && nonzero.last().is_some_and(|&v| v <= 3.0);
    check(
        (frac - 0.5).abs() <= 0.02 && ks < 0.02 && in_range,
        format!("zero fraction {frac:.4} of {total}, KS {ks:.4} vs U[-3,3]"),
    )
}

fn metric_fidelity() -> Outcome {
    let p = relative_promotion(0.0336, 0.0458).map_err(|e| e.to_string())?;
    check(((p - 0.266) * 100.0).abs() <= 0.05, format!("promotion {:.3}%", p * 100.0))
}

// ---------------------------------------------------------------- training

const ADVECTION_TRAIN: [f64; 3] = [0.2, 0.5, 1.0];
const ADVECTION_OOD: [f64; 2] = [0.35, 0.75];

fn advection_sets() -> (Dataset, Dataset) {
    let mut base = AdvectionTask {
        t_end: 0.25,
        ..AdvectionTask::default()
    };
    base.initial.n_max = 2;
    let train_task = AdvectionTask {
        betas: ADVECTION_TRAIN.to_vec(),
        ..base.clone()
    };
    let ood_task = AdvectionTask {
        betas: ADVECTION_OOD.to_vec(),
        ..base
    };
    let (train, _) = generate_dataset(&TaskSpec::Advection(train_task), 400, 0).unwrap();
    let (mut ood, _) = generate_dataset(&TaskSpec::Advection(ood_task), 100, 1).unwrap();
    for s in &mut ood.samples {
        s.split = SplitTag::OutOfDistribution;
    }
    (train, ood)
}

fn conditioning_benefit() -> Outcome {
    let (train_set, ood_set) = advection_sets();
    let model = ModelConfig {
        d_feature: 64,
        n_layers: 4,
        patch: [4, 16],
        grid: [16, 64],
        coefficient_keys: vec!["beta".into()],
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 200,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let variants = ablation(&model, &cfg, &train_set, &ood_set).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let find = |label: &str| variants.iter().find(|v| v.label == label).unwrap();
    let ours = find("conditioned");
    let ablated = find("ablated");
    let concat = find("concat-input");
    let (train_err, ood) = (ours.outcome.final_loss, ours.report.mean);
    let (abl, cat) = (ablated.report.mean, concat.report.mean);
    check(
        train_err < 0.05 && ood <= 0.7 * abl && ood < cat,
        format!(
            "train {train_err:.4}, OOD {ood:.4} vs ablated {abl:.4} ({:.0}% lower) and concat {cat:.4}, {:.0} s for three models",
            100.0 * (1.0 - ood / abl),
            elapsed
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let task = AdvectionTask {
        n_x: 16,
        n_t: 8,
        ..AdvectionTask::default()
    };
    let (data, _) = generate_dataset(&TaskSpec::Advection(task.clone()), 24, 5).map_err(|e| e.to_string())?;
    let (again, _) = generate_dataset(&TaskSpec::Advection(task), 24, 5).map_err(|e| e.to_string())?;
    let bytes = data.to_bytes().map_err(|e| e.to_string())?;
    let reread = Dataset::read_from(bytes.as_slice()).map_err(|e| e.to_string())?;
    let data_ok = bytes == again.to_bytes().unwrap() && reread.to_bytes().unwrap() == bytes;

    let model = ModelConfig {
        d_feature: 16,
        n_layers: 2,
        n_heads: 2,
        d_head: 8,
        patch: [4, 4],
        grid: [8, 16],
        d_cond: 16,
        cond_hidden: 16,
        symbol_dim: 16,
        coefficient_keys: vec!["beta".into()],
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(&model, &cfg, &data).map_err(|e| e.to_string())?;
    let b = train(&model, &cfg, &data).map_err(|e| e.to_string())?;
    let bits = |o: &TrainOutcome| -> Vec<u64> {
        o.curve
            .iter()
            .flat_map(|r| [r.train_loss.to_bits(), r.val_loss.unwrap_or(f64::NAN).to_bits(), r.lr.to_bits()])
            .collect()
    };
    let curve_ok = bits(&a) == bits(&b) && a.final_loss.to_bits() == b.final_loss.to_bits();

    let ck_bytes = a.checkpoint.to_bytes().map_err(|e| e.to_string())?;
    let ck = Checkpoint::read_from(ck_bytes.as_slice()).map_err(|e| e.to_string())?;
    let ck_ok = ck.to_bytes().unwrap() == ck_bytes && b.checkpoint.to_bytes().unwrap() == ck_bytes;
    let s = &data.samples[0];
    let before = a.checkpoint.model().unwrap().predict(&s.input, &s.components).unwrap();
    let after = ck.model().unwrap().predict(&s.input, &s.components).unwrap();
    let forward_ok = before.data().iter().zip(after.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    check(
        data_ok && curve_ok && ck_ok && forward_ok,
        format!(
            "dataset bytes {data_ok}, loss curves bitwise {curve_ok}, checkpoint bytes {ck_ok}, reloaded forward bitwise {forward_ok}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("identity at init", identity_at_init),
        ("subspace decoupling", subspace_decoupling),
        ("plain transformer reduction", plain_vit_reduction),
        ("string oracle", string_oracle),
        ("vorticity solver", ns_solver),
        ("sampling fidelity", sampling_fidelity),
        ("metric fidelity", metric_fidelity),
        ("conditioning benefit", conditioning_benefit),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
