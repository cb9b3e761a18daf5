use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{BoundaryType, EdgeCondition, GridSpec, PdeComponents, Sample, Sampling, SplitTag};
use crate::data::{Dataset, Dtype};
use crate::string_oracle::{QuadSpec, SpaceFn, SpaceTimeFn, StringProblem};
use crate::tensor::Tensor;

use super::sampling::{draw_1d_pde, family_initial, sample_trig_series, seeded_rng, TrigFamily};
use super::{solve_1d_family, solve_advection_exact, solve_ns2d_spectral, HeterNsSpec, SolverError};
use super::heterns_force;

/// Attempts per sample before generation gives up on it.
const MAX_ATTEMPTS: u64 = 64;

/// Condition values drawn round-robin: training values first, then OOD ones.
fn pick<T: Copy>(id: &[T], ood: &[T], index: usize) -> (T, SplitTag) {
    let i = index % (id.len() + ood.len());
    if i < id.len() {
        (id[i], SplitTag::InDistribution)
    } else {
        (ood[i - id.len()], SplitTag::OutOfDistribution)
    }
}

fn non_empty<T>(v: &[T], what: &str) -> Result<(), SolverError> {
    if v.is_empty() {
        return Err(SolverError::Invalid(format!("{what} must list at least one value")));
    }
    Ok(())
}

/// `∂t u + β ∂x u = 0` on the periodic unit interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvectionTask {
    pub n_x: usize,
    pub n_t: usize,
    pub t_end: f64,
    pub betas: Vec<f64>,
    pub ood_betas: Vec<f64>,
    pub initial: TrigFamily,
}

impl Default for AdvectionTask {
    fn default() -> Self {
        AdvectionTask {
            n_x: 64,
            n_t: 16,
            t_end: 1.0,
            betas: vec![0.2, 0.5, 1.0],
            ood_betas: vec![],
            initial: TrigFamily::new(1.0),
        }
    }
}

pub const ADVECTION_SYMBOLS: &str = "\\partial_t u + \\beta \\partial_x u = 0";

impl AdvectionTask {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new_1d(self.n_x, self.n_t, (0.0, 1.0), (0.0, self.t_end), Sampling::Periodic)
    }

    fn sample(&self, rng: &mut impl Rng, index: usize) -> Result<Sample, SolverError> {
        let grid = self.grid();
        let (beta, split) = pick(&self.betas, &self.ood_betas, index);
        let u0 = sample_trig_series(rng, &self.initial).sample(&grid.x_coords());
        let output = solve_advection_exact(&u0, beta, &grid, &BoundaryType::Periodic)?;
        Ok(Sample {
            input: Tensor::new(vec![1, grid.n_x], u0).expect("grid shape"),
            output,
            components: PdeComponents::new(ADVECTION_SYMBOLS, BoundaryType::Periodic).with_coefficient("beta", beta),
            split,
        })
    }
}

/// Randomized 1D family on `[−1, 1] × [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Family1DTask {
    pub n_x: usize,
    pub n_t: usize,
    pub initial: TrigFamily,
}

impl Default for Family1DTask {
    fn default() -> Self {
        Family1DTask {
            n_x: 128,
            n_t: 32,
            initial: family_initial(),
        }
    }
}

impl Family1DTask {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new_1d(self.n_x, self.n_t, (-1.0, 1.0), (0.0, 1.0), Sampling::CellCentered)
    }

    fn sample(&self, rng: &mut impl Rng) -> Result<Sample, SolverError> {
        let spec = draw_1d_pde(rng, self.grid(), &self.initial);
        let output = solve_1d_family(&spec)?;
        Ok(Sample {
            input: Tensor::new(vec![1, self.n_x], spec.initial_condition()).expect("grid shape"),
            output,
            components: spec.components(),
            split: SplitTag::InDistribution,
        })
    }
}

/// Forced string with fixed ends, labeled by the analytical oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StringTask {
    pub n_x: usize,
    pub n_t: usize,
    pub length: f64,
    pub horizon: f64,
    pub speeds: Vec<f64>,
    pub ood_speeds: Vec<f64>,
    /// Sine modes per profile.
    pub n_modes: usize,
    pub space_panels: usize,
    pub time_panels: usize,
}

impl Default for StringTask {
    fn default() -> Self {
        StringTask {
            n_x: 32,
            n_t: 32,
            length: 1.0,
            horizon: 1.0,
            speeds: vec![0.5, 1.0, 2.0],
            ood_speeds: vec![],
            n_modes: 3,
            space_panels: 32,
            time_panels: 32,
        }
    }
}

pub const STRING_SYMBOLS: &str = "\\partial_{tt} u - a^2 \\partial_{xx} u = f(x,t)";

impl StringTask {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new_1d(self.n_x, self.n_t, (0.0, self.length), (0.0, self.horizon), Sampling::Endpoints)
    }

    pub fn quad(&self) -> QuadSpec {
        QuadSpec::new(self.space_panels, self.time_panels)
    }

    fn modes(&self, rng: &mut impl Rng, scale: f64) -> SpaceFn {
        let raw: Vec<f64> = (0..self.n_modes).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let total: f64 = raw.iter().map(|a| a.abs()).sum::<f64>().max(1e-12);
        let modes: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, a)| (i + 1, scale * a / total)).collect();
        SpaceFn::sine_modes(self.length, &modes)
    }

    /// Problem `index` draws from `rng`: wave speed, then position,
    /// velocity and force profiles.
    pub fn problem(&self, rng: &mut impl Rng, index: usize) -> Result<(StringProblem, SplitTag), SolverError> {
        let (a, split) = pick(&self.speeds, &self.ood_speeds, index);
        let phi = self.modes(rng, 1.0);
        let psi = self.modes(rng, 0.5);
        let space = self.modes(rng, 1.0);
        let omega = rng.gen_range(0.0..=2.0 * PI);
        let force = SpaceTimeFn::Separable { space, omega };
        Ok((StringProblem::new(a, self.length, self.horizon, phi, psi, force)?, split))
    }

    /// Problem of sample `index` in a dataset generated with `seed`.
    pub fn problem_for(&self, seed: u64, index: usize) -> Result<StringProblem, SolverError> {
        let mut rng = seeded_rng(seed, index as u64);
        Ok(self.problem(&mut rng, index)?.0)
    }

    fn sample(&self, rng: &mut impl Rng, index: usize) -> Result<Sample, SolverError> {
        let (p, split) = self.problem(rng, index)?;
        let grid = self.grid();
        let xs = grid.x_coords();
        let ts = grid.t_coords();
        let mut input: Vec<f64> = xs.iter().map(|&x| p.phi().base.eval(x)).collect();
        input.extend(xs.iter().map(|&x| p.psi().base.eval(x)));
        let force: Vec<f64> = ts
            .iter()
            .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
            .map(|(x, t)| p.force().base.eval(x, t))
            .collect();
        let output = p.evaluate_grid(&grid, self.quad())?;
        let mut comp = PdeComponents::new(
            STRING_SYMBOLS,
            BoundaryType::NonPeriodic(vec![EdgeCondition::dirichlet(0.0), EdgeCondition::dirichlet(0.0)]),
        )
        .with_coefficient("a", p.wave_speed());
        comp.force = Some(Tensor::new(vec![1, grid.n_t, grid.n_x], force).expect("grid shape"));
        Ok(Sample {
            input: Tensor::new(vec![2, grid.n_x], input).expect("grid shape"),
            output,
            components: comp,
            split,
        })
    }
}

/// Forced vorticity on the unit torus, in frames mode: `n_in` frames in,
/// the next `n_out` frames out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeterNsTask {
    pub n: usize,
    pub nus: Vec<f64>,
    pub omegas: Vec<f64>,
    pub ood_nus: Vec<f64>,
    pub ood_omegas: Vec<f64>,
    pub frame_dt: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// Largest wavenumber (per axis) of the initial vorticity field.
    pub init_modes: usize,
}

impl Default for HeterNsTask {
    fn default() -> Self {
        HeterNsTask {
            n: 64,
            nus: vec![1e-5, 5e-5, 1e-4, 5e-4, 1e-3],
            omegas: vec![1.0, 2.0, 3.0],
            ood_nus: vec![],
            ood_omegas: vec![],
            frame_dt: 1.0,
            n_in: 10,
            n_out: 1,
            init_modes: 8,
        }
    }
}

pub const HETERNS_SYMBOLS: &str = "\\partial_t w + u \\cdot \\nabla w = \\nu \\Delta w + f";

impl HeterNsTask {
    pub fn grid(&self) -> GridSpec {
        let frames = self.n_in + self.n_out;
        GridSpec {
            n_x: self.n,
            n_y: Some(self.n),
            n_t: frames,
            x_range: (0.0, 1.0),
            t_range: (0.0, self.frame_dt * (frames - 1) as f64),
            sampling: Sampling::Periodic,
        }
    }

    /// `(ν, ω, split)` for every condition pair, training pairs first.
    pub fn groups(&self) -> Vec<(f64, f64, SplitTag)> {
        let mut out = Vec::new();
        for (nus, nu_ood) in [(&self.nus, false), (&self.ood_nus, true)] {
            for (omegas, om_ood) in [(&self.omegas, false), (&self.ood_omegas, true)] {
                for &nu in nus.iter() {
                    for &om in omegas.iter() {
                        let split = if nu_ood || om_ood {
                            SplitTag::OutOfDistribution
                        } else {
                            SplitTag::InDistribution
                        };
                        out.push((nu, om, split));
                    }
                }
            }
        }
        out.sort_by_key(|g| g.2 == SplitTag::OutOfDistribution);
        out
    }

    /// Band-limited Gaussian random field with unit sample variance.
    fn initial_vorticity(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.n;
        let m = self.init_modes as i64;
        let mut w = vec![0.0; n * n];
        for ky in 0..=m {
            for kx in -m..=m {
                if ky == 0 && kx <= 0 {
                    continue;
                }
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                for j in 0..n {
                    for i in 0..n {
                        let s = 2.0 * PI * (kx as f64 * i as f64 + ky as f64 * j as f64) / n as f64;
                        w[j * n + i] += a * s.cos() + b * s.sin();
                    }
                }
            }
        }
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64;
        let scale = 1.0 / var.sqrt();
        w.iter().map(|v| (v - mean) * scale).collect()
    }

    fn sample(&self, rng: &mut impl Rng, index: usize) -> Result<Sample, SolverError> {
        let groups = self.groups();
        let (nu, omega, split) = groups[index % groups.len()];
        let frames = self.n_in + self.n_out;
        let spec = HeterNsSpec {
            nu,
            omega: Some(omega),
            n: self.n,
            w0: self.initial_vorticity(rng),
            horizon: self.frame_dt * (frames - 1) as f64,
            n_frames: frames,
        };
        let w = solve_ns2d_spectral(&spec)?;
        let plane = self.n * self.n;
        let data = w.into_data();
        let mut comp = PdeComponents::new(HETERNS_SYMBOLS, BoundaryType::Periodic)
            .with_coefficient("nu", nu)
            .with_coefficient("omega", omega);
        comp.force = Some(heterns_force(omega, self.n));
        Ok(Sample {
            input: Tensor::new(vec![self.n_in, self.n, self.n], data[..self.n_in * plane].to_vec()).expect("shape"),
            output: Tensor::new(vec![self.n_out, self.n, self.n], data[self.n_in * plane..].to_vec()).expect("shape"),
            components: comp,
            split,
        })
    }
}

/// What to generate; the tag names the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TaskSpec {
    String(StringTask),
    Advection(AdvectionTask),
    Family1d(Family1DTask),
    HeternsMini(HeterNsTask),
}

impl TaskSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            TaskSpec::String(_) => "string",
            TaskSpec::Advection(_) => "advection",
            TaskSpec::Family1d(_) => "family1d",
            TaskSpec::HeternsMini(_) => "heterns-mini",
        }
    }

    pub fn grid(&self) -> GridSpec {
        match self {
            TaskSpec::String(t) => t.grid(),
            TaskSpec::Advection(t) => t.grid(),
            TaskSpec::Family1d(t) => t.grid(),
            TaskSpec::HeternsMini(t) => t.grid(),
        }
    }

    fn check(&self) -> Result<(), SolverError> {
        match self {
            TaskSpec::String(t) => non_empty(&t.speeds, "speeds"),
            TaskSpec::Advection(t) => non_empty(&t.betas, "betas"),
            TaskSpec::Family1d(_) => Ok(()),
            TaskSpec::HeternsMini(t) => {
                non_empty(&t.nus, "nus")?;
                non_empty(&t.omegas, "omegas")?;
                if t.n_in == 0 || t.n_out == 0 {
                    return Err(SolverError::Invalid("n_in and n_out must be positive".into()));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut impl Rng, index: usize) -> Result<Sample, SolverError> {
        match self {
            TaskSpec::String(t) => t.sample(rng, index),
            TaskSpec::Advection(t) => t.sample(rng, index),
            TaskSpec::Family1d(t) => t.sample(rng),
            TaskSpec::HeternsMini(t) => t.sample(rng, index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationReport {
    pub samples: usize,
    /// Solves that diverged and were redrawn.
    pub retries: usize,
}

/// Generates `n_samples` samples; sample `i` draws from stream `i` of the
/// seed (attempt `a > 0` from stream `i + a·2³²`). Runs on the current rayon
/// pool; output order and content do not depend on the thread count.
pub fn generate_dataset(
    task: &TaskSpec,
    n_samples: usize,
    seed: u64,
) -> Result<(Dataset, GenerationReport), SolverError> {
    task.check()?;
    let results: Vec<Result<(Sample, usize), SolverError>> = (0..n_samples)
        .into_par_iter()
        .map(|index| {
            let mut retries = 0;
            for attempt in 0..MAX_ATTEMPTS {
                let mut rng = seeded_rng(seed, index as u64 + (attempt << 32));
                match task.sample(&mut rng, index) {
                    Ok(s) => return Ok((s, retries)),
                    Err(SolverError::Diverged { .. }) => retries += 1,
                    Err(e) => return Err(e),
                }
            }
            Err(SolverError::TooManyDivergences {
                diverged: retries,
                attempted: retries,
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(n_samples);
    let mut retries = 0;
    for r in results {
        let (s, k) = r?;
        retries += k;
        samples.push(s);
    }
    let attempted = n_samples + retries;
    if retries * 10 > attempted {
        return Err(SolverError::TooManyDivergences {
            diverged: retries,
            attempted,
        });
    }
    if retries > 0 {
        log::info!("{retries} diverged solves were redrawn");
    }
    let ds = Dataset {
        family: task.family_name().into(),
        grid: task.grid(),
        dtype: Dtype::F64,
        samples,
    };
    Ok((
        ds,
        GenerationReport {
            samples: n_samples,
            retries,
        },
    ))
}
