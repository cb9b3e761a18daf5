use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::components::{BoundaryType, EdgeCondition, GridSpec, Sampling};
use crate::string_oracle::TrigTerm;

use super::family1d::Family1DSpec;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `offset + Σ amp · sin(k·x + phase)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrigSeries {
    pub offset: f64,
    pub terms: Vec<TrigTerm>,
}

impl TrigSeries {
    pub fn zero() -> Self {
        TrigSeries::default()
    }

    pub fn constant(offset: f64) -> Self {
        TrigSeries {
            offset,
            terms: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.offset == 0.0 && self.terms.iter().all(|t| t.amp == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.offset + self.terms.iter().map(|t| t.amp * (t.k * x + t.phase).sin()).sum::<f64>()
    }

    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.offset *= factor;
        for t in &mut self.terms {
            t.amp *= factor;
        }
        self
    }
}

/// Superposition of sinusoids periodic on an interval of `length`:
/// `Σ A_i sin(k_i x + φ_i)`, `k_i = 2π n_i / length`, `n_i ∈ [1, n_max]`,
/// raw `A_i ∈ U[−1, 1]` rescaled so that `Σ|A_i| = amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigFamily {
    pub n_terms: usize,
    pub n_max: usize,
    pub length: f64,
    pub amplitude: f64,
}

impl TrigFamily {
    pub fn new(length: f64) -> Self {
        TrigFamily {
            n_terms: 2,
            n_max: 4,
            length,
            amplitude: 1.0,
        }
    }
}

pub fn sample_trig_series(rng: &mut impl Rng, family: &TrigFamily) -> TrigSeries {
    let mut terms: Vec<TrigTerm> = (0..family.n_terms)
        .map(|_| {
            let n = rng.gen_range(1..=family.n_max);
            TrigTerm {
                amp: rng.gen_range(-1.0..=1.0),
                k: 2.0 * PI * n as f64 / family.length,
                phase: rng.gen_range(0.0..2.0 * PI),
            }
        })
        .collect();
    let total: f64 = terms.iter().map(|t| t.amp.abs()).sum();
    if total > 0.0 {
        for t in &mut terms {
            t.amp *= family.amplitude / total;
        }
    }
    TrigSeries { offset: 0.0, terms }
}

fn zero_or_uniform(rng: &mut impl Rng, p_zero: f64, lo: f64, hi: f64) -> f64 {
    if rng.gen_bool(p_zero) {
        0.0
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn sample_edge(rng: &mut impl Rng, g_at_edge: f64) -> EdgeCondition {
    match rng.gen_range(0..3) {
        0 => EdgeCondition::dirichlet(g_at_edge),
        1 => EdgeCondition::neumann(rng.gen_range(-0.5..=0.5)),
        _ => {
            let alpha = rng.gen_range(0.5..=1.5);
            EdgeCondition::robin(alpha, 1.0, rng.gen_range(-0.5..=0.5))
        }
    }
}

/// Draws one member of the randomized 1D family on `grid` (cell-centered on
/// `[−1, 1]`).
pub(crate) fn draw_1d_pde(rng: &mut impl Rng, grid: GridSpec, ic: &TrigFamily) -> Family1DSpec {
    let mut c = [[0.0; 3]; 2];
    for row in &mut c {
        for v in row.iter_mut() {
            *v = zero_or_uniform(rng, 0.5, -3.0, 3.0);
        }
    }
    let g = sample_trig_series(rng, ic);
    let boundary = if rng.gen_bool(0.5) {
        BoundaryType::Periodic
    } else {
        let (lo, hi) = grid.x_range;
        let left = sample_edge(rng, g.eval(lo));
        let right = sample_edge(rng, g.eval(hi));
        BoundaryType::NonPeriodic(vec![left, right])
    };
    let source = if rng.gen_bool(0.5) {
        TrigSeries::zero()
    } else {
        let strength = rng.gen_range(0.1..=1.0);
        sample_trig_series(rng, ic).scaled(strength)
    };
    let kappa = if rng.gen_bool(0.5) {
        TrigSeries::zero()
    } else {
        let scale = 10f64.powf(rng.gen_range(-3.0..=-1.0));
        let n = rng.gen_range(1..=ic.n_max);
        TrigSeries {
            offset: scale,
            terms: vec![TrigTerm {
                amp: 0.5 * scale,
                k: 2.0 * PI * n as f64 / ic.length,
                phase: rng.gen_range(0.0..2.0 * PI),
            }],
        }
    };
    Family1DSpec {
        c,
        source,
        kappa,
        g,
        boundary,
        grid,
    }
}

/// Initial conditions of the 1D family. Half amplitude keeps cubic
/// reaction blow-up within the redraw budget.
pub(crate) fn family_initial() -> TrigFamily {
    TrigFamily {
        amplitude: 0.5,
        ..TrigFamily::new(2.0)
    }
}

/// Default grid of the 1D family: 256 cells on `[−1, 1]`, 100 snapshots on `[0, 1]`.
pub(crate) fn default_family_grid() -> GridSpec {
    GridSpec::new_1d(256, 100, (-1.0, 1.0), (0.0, 1.0), Sampling::CellCentered)
}

/// Deterministic draw from the randomized 1D family.
pub fn sample_1d_pde(seed: u64) -> Family1DSpec {
    let mut rng = seeded_rng(seed, 0);
    draw_1d_pde(&mut rng, default_family_grid(), &family_initial())
}
