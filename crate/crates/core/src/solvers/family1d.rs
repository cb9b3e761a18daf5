//! Method-of-lines solver for
//!
//! ```text
//! ∂t u + f0(u) + s(x) + ∂x( f1(u) − κ(x) ∂x u ) = 0,   f_i(u) = c_i1 u + c_i2 u² + c_i3 u³
//! ```
//!
//! on cell averages. The flux uses MUSCL reconstruction with a van Leer
//! limiter and a local Lax–Friedrichs (Rusanov) numerical flux; diffusion uses
//! central differences with κ evaluated on the faces. Classical RK4 in time.

use serde::{Deserialize, Serialize};

use crate::components::{BoundaryType, EdgeCondition, Field, GridSpec, PdeComponents};
use crate::tensor::Tensor;

use super::sampling::TrigSeries;
use super::SolverError;

const BLOW_UP: f64 = 1e6;
const MAX_STEPS: usize = 2_000_000;
const SAFETY: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family1DSpec {
    /// `c[i][k−1]` multiplies `u^k` in `f_i`.
    pub c: [[f64; 3]; 2],
    pub source: TrigSeries,
    pub kappa: TrigSeries,
    pub g: TrigSeries,
    pub boundary: BoundaryType,
    pub grid: GridSpec,
}

fn poly(c: &[f64; 3], u: f64) -> f64 {
    u * (c[0] + u * (c[1] + u * c[2]))
}

fn poly_slope(c: &[f64; 3], u: f64) -> f64 {
    c[0] + u * (2.0 * c[1] + 3.0 * u * c[2])
}

fn monomial(k: usize) -> &'static str {
    ["u", "u^2", "u^3"][k]
}

impl Family1DSpec {
    /// LaTeX form with zero-coefficient terms left out.
    pub fn symbols(&self) -> String {
        let mut lhs = vec!["\\partial_t u".to_string()];
        for k in 0..3 {
            if self.c[0][k] != 0.0 {
                lhs.push(format!("c_{{0{}}}{}", k + 1, monomial(k)));
            }
        }
        if !self.source.is_zero() {
            lhs.push("s(x)".into());
        }
        let mut flux: Vec<String> = (0..3)
            .filter(|&k| self.c[1][k] != 0.0)
            .map(|k| format!("c_{{1{}}}{}", k + 1, monomial(k)))
            .collect();
        let mut inner = flux.join(" + ");
        if !self.kappa.is_zero() {
            inner = if flux.is_empty() {
                "-\\kappa(x)\\partial_x u".into()
            } else {
                format!("{inner} - \\kappa(x)\\partial_x u")
            };
            flux.push(String::new());
        }
        if !flux.is_empty() {
            lhs.push(format!("\\partial_x({inner})"));
        }
        format!("{} = 0", lhs.join(" + "))
    }

    /// Components block: nonzero coefficients, boundary type, and point
    /// fields for `s`, `κ` and the boundary values.
    pub fn components(&self) -> PdeComponents {
        let mut comp = PdeComponents::new(self.symbols(), self.boundary.clone());
        for (i, row) in self.c.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    comp.coefficients.insert(format!("c{}{}", i, k + 1), v);
                }
            }
        }
        let xs = self.grid.x_coords();
        let n = xs.len();
        let field = |v: Vec<f64>| Tensor::new(vec![1, n], v).expect("grid shape");
        if !self.source.is_zero() {
            comp.force = Some(field(self.source.sample(&xs)));
        }
        if !self.kappa.is_zero() {
            comp.kappa = Some(field(self.kappa.sample(&xs)));
        }
        if let BoundaryType::NonPeriodic(edges) = &self.boundary {
            let mut bv = vec![0.0; n];
            bv[0] = edges[0].gamma;
            bv[n - 1] = edges[1].gamma;
            comp.boundary_values = Some(field(bv));
        }
        comp
    }

    pub fn initial_condition(&self) -> Vec<f64> {
        self.g.sample(&self.grid.x_coords())
    }
}

/// Ghost value for `α u + β ∂u/∂n = γ` on the face between the boundary
/// cell (value `u_in`) and its ghost.
fn robin_ghost(e: &EdgeCondition, u_in: f64, dx: f64) -> f64 {
    (e.gamma + u_in * (e.beta / dx - 0.5 * e.alpha)) / (0.5 * e.alpha + e.beta / dx)
}

fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

struct Operator<'a> {
    spec: &'a Family1DSpec,
    n: usize,
    dx: f64,
    kappa_face: Vec<f64>,
    source: Vec<f64>,
    edges: Option<(EdgeCondition, EdgeCondition)>,
    padded: Vec<f64>,
    slope: Vec<f64>,
    flux: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(spec: &'a Family1DSpec) -> Result<Self, SolverError> {
        let grid = &spec.grid;
        let n = grid.n_x;
        let dx = grid.dx();
        let lo = grid.x_range.0;
        let kappa_face: Vec<f64> = (0..=n).map(|j| spec.kappa.eval(lo + j as f64 * dx)).collect();
        if let Some(k) = kappa_face
            .iter()
            .chain(spec.kappa.sample(&grid.x_coords()).iter())
            .find(|k| !(**k >= 0.0))
        {
            return Err(SolverError::Invalid(format!("kappa must be nonnegative, found {k}")));
        }
        let edges = match &spec.boundary {
            BoundaryType::Periodic => None,
            BoundaryType::NonPeriodic(e) if e.len() == 2 => Some((e[0], e[1])),
            BoundaryType::NonPeriodic(e) => {
                return Err(SolverError::Invalid(format!("1D problem needs 2 edge conditions, got {}", e.len())))
            }
        };
        Ok(Operator {
            spec,
            n,
            dx,
            kappa_face,
            source: spec.source.sample(&grid.x_coords()),
            edges,
            padded: vec![0.0; n + 4],
            slope: vec![0.0; n + 4],
            flux: vec![0.0; n + 1],
        })
    }

    fn fill_ghosts(&mut self, u: &[f64]) {
        let n = self.n;
        let w = &mut self.padded;
        w[2..n + 2].copy_from_slice(u);
        match &self.edges {
            None => {
                w[0] = u[n - 2];
                w[1] = u[n - 1];
                w[n + 2] = u[0];
                w[n + 3] = u[1];
            }
            Some((left, right)) => {
                let gl = robin_ghost(left, u[0], self.dx);
                let gr = robin_ghost(right, u[n - 1], self.dx);
                w[1] = gl;
                w[0] = 2.0 * gl - u[0];
                w[n + 2] = gr;
                w[n + 3] = 2.0 * gr - u[n - 1];
            }
        }
    }

    /// `du/dt` into `out`.
    fn rhs(&mut self, u: &[f64], out: &mut [f64]) {
        self.fill_ghosts(u);
        let n = self.n;
        let (c0, c1) = (&self.spec.c[0], &self.spec.c[1]);
        let w = &self.padded;
        for i in 1..n + 3 {
            self.slope[i] = van_leer(w[i] - w[i - 1], w[i + 1] - w[i]);
        }
        for j in 0..=n {
            let (l, r) = (j + 1, j + 2);
            let ul = w[l] + 0.5 * self.slope[l];
            let ur = w[r] - 0.5 * self.slope[r];
            let speed = poly_slope(c1, ul).abs().max(poly_slope(c1, ur).abs());
            let advective = 0.5 * (poly(c1, ul) + poly(c1, ur)) - 0.5 * speed * (ur - ul);
            let diffusive = self.kappa_face[j] * (w[r] - w[l]) / self.dx;
            self.flux[j] = advective - diffusive;
        }
        for i in 0..n {
            out[i] = -(self.flux[i + 1] - self.flux[i]) / self.dx - poly(c0, u[i]) - self.source[i];
        }
    }

    fn stable_dt(&self, u: &[f64]) -> f64 {
        let (c0, c1) = (&self.spec.c[0], &self.spec.c[1]);
        let mut wave = 0.0f64;
        let mut react = 0.0f64;
        for &v in u {
            wave = wave.max(poly_slope(c1, v).abs());
            react = react.max(poly_slope(c0, v).abs());
        }
        let kmax = self.kappa_face.iter().cloned().fold(0.0, f64::max);
        let mut dt = f64::INFINITY;
        if wave > 0.0 {
            dt = dt.min(self.dx / wave);
        }
        if kmax > 0.0 {
            dt = dt.min(self.dx * self.dx / (2.0 * kmax));
        }
        if react > 0.0 {
            dt = dt.min(1.0 / react);
        }
        SAFETY * dt
    }
}

/// Solves one family member; returns the `[1, n_t, n_x]` snapshots at the
/// grid times, the first being the initial condition.
pub fn solve_1d_family(spec: &Family1DSpec) -> Result<Field, SolverError> {
    let grid = &spec.grid;
    if grid.n_y.is_some() || grid.n_x < 4 || grid.n_t < 2 {
        return Err(SolverError::Invalid("family solver needs a 1D grid with n_x >= 4".into()));
    }
    let mut op = Operator::new(spec)?;
    let n = grid.n_x;
    let mut u = spec.initial_condition();
    let mut out = Vec::with_capacity(grid.n_t * n);
    out.extend_from_slice(&u);

    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut stage = vec![0.0; n];
    let times = grid.t_coords();
    let mut t = times[0];
    let mut step = 0usize;
    for &target in &times[1..] {
        while t < target {
            let dt = op.stable_dt(&u).min(target - t);
            op.rhs(&u, &mut k[0]);
            for i in 0..n {
                stage[i] = u[i] + 0.5 * dt * k[0][i];
            }
            op.rhs(&stage, &mut k[1]);
            for i in 0..n {
                stage[i] = u[i] + 0.5 * dt * k[1][i];
            }
            op.rhs(&stage, &mut k[2]);
            for i in 0..n {
                stage[i] = u[i] + dt * k[2][i];
            }
            op.rhs(&stage, &mut k[3]);
            for i in 0..n {
                u[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            step += 1;
            t = if target - t - dt <= 1e-14 * target.abs().max(1.0) { target } else { t + dt };
            if let Some(v) = u.iter().find(|v| !(v.abs() <= BLOW_UP)) {
                return Err(SolverError::Diverged {
                    step,
                    time: t,
                    reason: format!("|u| reached {v}"),
                });
            }
            if step >= MAX_STEPS {
                return Err(SolverError::Diverged {
                    step,
                    time: t,
                    reason: "step limit reached".into(),
                });
            }
        }
        out.extend_from_slice(&u);
    }
    Ok(Tensor::new(vec![1, grid.n_t, n], out).expect("grid shape"))
}
