//! Exact solution of the forced vibrating string with fixed ends,
//!
//! ```text
//! u_tt − a² u_xx = f(x,t),   u(0,t) = u(L,t) = 0,   u(x,0) = φ(x),   u_t(x,0) = ψ(x),
//! ```
//!
//! evaluated through the odd 2L-periodic extensions Φ, Ψ, F:
//!
//! ```text
//! u = ½(Φ(x+at) + Φ(x−at)) + 1/(2a) ∫_{x−at}^{x+at} Ψ dξ
//!       + 1/(2a) ∫_0^t ∫_{x−a(t−τ)}^{x+a(t−τ)} F(ξ,τ) dξ dτ
//! ```
//!
//! Integrals use composite Simpson. Integration intervals are split at the
//! multiples of L, where the odd extension of a profile that does not vanish
//! at the ends has a kink or jump, so each piece is integrated over a smooth
//! integrand.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{Field, GridSpec, Sampling};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("Simpson quadrature needs an even panel count >= {min}, got {got}")]
    Panels { got: usize, min: usize },
    #[error("point (x={x}, t={t}) lies outside [0, {length}] x [0, {horizon}]")]
    OutOfDomain {
        x: f64,
        t: f64,
        length: f64,
        horizon: f64,
    },
    #[error("initial position must vanish at both ends, got phi(0)={left}, phi(L)={right}")]
    Incompatible { left: f64, right: f64 },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("sampled profile needs at least 2 points, got {0}")]
    TooFewSamples(usize),
}

/// Single sinusoid `amp · sin(k·x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amp: f64,
    pub k: f64,
    pub phase: f64,
}

type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Function of space on `[0, L]`.
#[derive(Clone)]
pub enum SpaceFn {
    Zero,
    Trig(Vec<TrigTerm>),
    /// Uniform samples over `[0, L]` including both ends, linearly interpolated.
    Sampled { length: f64, values: Vec<f64> },
    Closure(Fn1),
}

impl fmt::Debug for SpaceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceFn::Zero => write!(f, "Zero"),
            SpaceFn::Trig(t) => f.debug_tuple("Trig").field(t).finish(),
            SpaceFn::Sampled { values, .. } => write!(f, "Sampled({} points)", values.len()),
            SpaceFn::Closure(_) => write!(f, "Closure"),
        }
    }
}

fn lerp_uniform(values: &[f64], length: f64, x: f64) -> f64 {
    let n = values.len() - 1;
    let s = (x / length * n as f64).clamp(0.0, n as f64);
    let i = (s.floor() as usize).min(n - 1);
    let w = s - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

impl SpaceFn {
    pub fn closure(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SpaceFn::Closure(Arc::new(f))
    }

    /// `Σ amp_n · sin(n π x / L)`, which vanishes at both ends.
    pub fn sine_modes(length: f64, modes: &[(usize, f64)]) -> Self {
        SpaceFn::Trig(
            modes
                .iter()
                .map(|&(n, amp)| TrigTerm {
                    amp,
                    k: n as f64 * std::f64::consts::PI / length,
                    phase: 0.0,
                })
                .collect(),
        )
    }

    pub fn sampled(length: f64, values: Vec<f64>) -> Result<Self, OracleError> {
        if values.len() < 2 {
            return Err(OracleError::TooFewSamples(values.len()));
        }
        Ok(SpaceFn::Sampled { length, values })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SpaceFn::Zero => 0.0,
            SpaceFn::Trig(terms) => terms.iter().map(|t| t.amp * (t.k * x + t.phase).sin()).sum(),
            SpaceFn::Sampled { length, values } => lerp_uniform(values, *length, x),
            SpaceFn::Closure(f) => f(x),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, SpaceFn::Zero)
    }
}

/// Function of space and time on `[0, L] × [0, T]`.
#[derive(Clone)]
pub enum SpaceTimeFn {
    Zero,
    /// `space(x) · cos(omega·t)`.
    Separable { space: SpaceFn, omega: f64 },
    /// Samples on a uniform `[n_t, n_x]` grid over `[0,L] × [0,T]`, bilinear.
    Sampled {
        length: f64,
        horizon: f64,
        n_t: usize,
        n_x: usize,
        values: Vec<f64>,
    },
    Closure(Fn2),
}

impl fmt::Debug for SpaceTimeFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceTimeFn::Zero => write!(f, "Zero"),
            SpaceTimeFn::Separable { space, omega } => write!(f, "Separable({space:?}, omega={omega})"),
            SpaceTimeFn::Sampled { n_t, n_x, .. } => write!(f, "Sampled({n_t}x{n_x})"),
            SpaceTimeFn::Closure(_) => write!(f, "Closure"),
        }
    }
}

impl SpaceTimeFn {
    pub fn closure(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        SpaceTimeFn::Closure(Arc::new(f))
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            SpaceTimeFn::Zero => 0.0,
            SpaceTimeFn::Separable { space, omega } => space.eval(x) * (omega * t).cos(),
            SpaceTimeFn::Sampled {
                length,
                horizon,
                n_t,
                n_x,
                values,
            } => {
                let s = (t / horizon * (*n_t - 1) as f64).clamp(0.0, (*n_t - 1) as f64);
                let j = (s.floor() as usize).min(n_t - 2);
                let w = s - j as f64;
                let lo = lerp_uniform(&values[j * n_x..(j + 1) * n_x], *length, x);
                let hi = lerp_uniform(&values[(j + 1) * n_x..(j + 2) * n_x], *length, x);
                lo * (1.0 - w) + hi * w
            }
            SpaceTimeFn::Closure(f) => f(x, t),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, SpaceTimeFn::Zero)
    }
}

/// Maps `x` to `(sign, y)` with `y ∈ [0, L]` so that the odd 2L-periodic
/// extension satisfies `G(x) = sign · g(y)`.
pub fn fold_odd_periodic(x: f64, length: f64) -> (f64, f64) {
    let r = x.rem_euclid(2.0 * length);
    if r <= length {
        (1.0, r)
    } else {
        (-1.0, 2.0 * length - r)
    }
}

/// Odd, 2L-periodic extension of a function defined on `[0, L]`.
#[derive(Debug, Clone)]
pub struct ExtendedFunction<F> {
    pub base: F,
    pub length: f64,
}

pub fn extend_odd_periodic(g: SpaceFn, length: f64) -> ExtendedFunction<SpaceFn> {
    ExtendedFunction { base: g, length }
}

impl ExtendedFunction<SpaceFn> {
    pub fn eval(&self, x: f64) -> f64 {
        let (s, y) = fold_odd_periodic(x, self.length);
        s * self.base.eval(y)
    }
}

impl ExtendedFunction<SpaceTimeFn> {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let (s, y) = fold_odd_periodic(x, self.length);
        s * self.base.eval(y, t)
    }
}

/// Panel counts for the composite Simpson rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadSpec {
    pub space_panels: usize,
    pub time_panels: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            space_panels: 128,
            time_panels: 128,
        }
    }
}

impl QuadSpec {
    pub fn new(space_panels: usize, time_panels: usize) -> Self {
        QuadSpec {
            space_panels,
            time_panels,
        }
    }

    fn check(&self, min: usize) -> Result<(), OracleError> {
        for got in [self.space_panels, self.time_panels] {
            if got < min || got % 2 != 0 {
                return Err(OracleError::Panels { got, min });
            }
        }
        Ok(())
    }
}

/// Composite Simpson over `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    debug_assert!(n >= 2 && n % 2 == 0);
    if a == b {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Integral over `[a, b]` of the odd 2L-periodic extension of `g`, split
/// at multiples of `length`. On each piece the extension is evaluated through
/// the branch of that piece, so jumps at the cuts do not leak into the sums.
/// `panels` is the total budget, shared in proportion to piece length.
fn integrate_extension(g: impl Fn(f64) -> f64, a: f64, b: f64, length: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let total = hi - lo;
    let mut acc = 0.0;
    let mut k = (lo / length).floor();
    let mut start = lo;
    while start < hi {
        let end = ((k + 1.0) * length).min(hi);
        if end > start {
            let mut n = ((panels as f64) * (end - start) / total).ceil() as usize;
            n = n.max(2);
            n += n % 2;
            let even = (k as i64).rem_euclid(2) == 0;
            let base = k * length;
            let piece = if even {
                simpson(|x| g((x - base).clamp(0.0, length)), start, end, n)
            } else {
                -simpson(|x| g((base + length - x).clamp(0.0, length)), start, end, n)
            };
            acc += piece;
        }
        start = end;
        k += 1.0;
    }
    sign * acc
}

/// `½(Φ(x+at) + Φ(x−at))`.
pub fn dalembert_position(phi: &ExtendedFunction<SpaceFn>, a: f64, x: f64, t: f64) -> f64 {
    0.5 * (phi.eval(x + a * t) + phi.eval(x - a * t))
}

/// `1/(2a) ∫_{x−at}^{x+at} Ψ(ξ) dξ`.
pub fn velocity_integral(
    psi: &ExtendedFunction<SpaceFn>,
    a: f64,
    x: f64,
    t: f64,
    quad: QuadSpec,
) -> Result<f64, OracleError> {
    quad.check(2)?;
    if t == 0.0 || psi.base.is_zero() {
        return Ok(0.0);
    }
    let integral = integrate_extension(|y| psi.base.eval(y), x - a * t, x + a * t, psi.length, quad.space_panels);
    Ok(integral / (2.0 * a))
}

/// `1/(2a) ∫_0^t ∫_{x−a(t−τ)}^{x+a(t−τ)} F(ξ,τ) dξ dτ`.
pub fn duhamel_integral(
    force: &ExtendedFunction<SpaceTimeFn>,
    a: f64,
    x: f64,
    t: f64,
    quad: QuadSpec,
) -> Result<f64, OracleError> {
    quad.check(4)?;
    if t == 0.0 || force.base.is_zero() {
        return Ok(0.0);
    }
    let inner = |tau: f64| {
        let half = a * (t - tau);
        integrate_extension(|y| force.base.eval(y, tau), x - half, x + half, force.length, quad.space_panels)
    };
    Ok(simpson(inner, 0.0, t, quad.time_panels) / (2.0 * a))
}

/// Fixed-end string: wave speed, length, horizon and the three data profiles.
#[derive(Debug, Clone)]
pub struct StringProblem {
    a: f64,
    length: f64,
    horizon: f64,
    phi: ExtendedFunction<SpaceFn>,
    psi: ExtendedFunction<SpaceFn>,
    force: ExtendedFunction<SpaceTimeFn>,
}

const COMPAT_TOL: f64 = 1e-12;

impl StringProblem {
    /// Rejects `φ` that does not vanish at both ends.
    pub fn new(
        a: f64,
        length: f64,
        horizon: f64,
        phi: SpaceFn,
        psi: SpaceFn,
        force: SpaceTimeFn,
    ) -> Result<Self, OracleError> {
        for (name, v) in [("wave speed", a), ("length", length), ("horizon", horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OracleError::NonPositive(name));
            }
        }
        let (left, right) = (phi.eval(0.0), phi.eval(length));
        if left.abs() > COMPAT_TOL || right.abs() > COMPAT_TOL {
            return Err(OracleError::Incompatible { left, right });
        }
        Ok(StringProblem {
            a,
            length,
            horizon,
            phi: ExtendedFunction { base: phi, length },
            psi: ExtendedFunction { base: psi, length },
            force: ExtendedFunction { base: force, length },
        })
    }

    pub fn wave_speed(&self) -> f64 {
        self.a
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn phi(&self) -> &ExtendedFunction<SpaceFn> {
        &self.phi
    }

    pub fn psi(&self) -> &ExtendedFunction<SpaceFn> {
        &self.psi
    }

    pub fn force(&self) -> &ExtendedFunction<SpaceTimeFn> {
        &self.force
    }

    /// Sum of the three terms at any real `(x, t)`. Negative `t` continues
    /// the formula backwards in time.
    pub fn evaluate_extended(&self, x: f64, t: f64, quad: QuadSpec) -> Result<f64, OracleError> {
        let mut u = dalembert_position(&self.phi, self.a, x, t);
        u += velocity_integral(&self.psi, self.a, x, t, quad)?;
        if t > 0.0 {
            u += duhamel_integral(&self.force, self.a, x, t, quad)?;
        }
        Ok(u)
    }

    /// Evaluates the solution at `(x, t) ∈ [0, L] × [0, T]`.
    pub fn evaluate_solution(&self, x: f64, t: f64, quad: QuadSpec) -> Result<f64, OracleError> {
        if !(0.0..=self.length).contains(&x) || !(0.0..=self.horizon).contains(&t) {
            return Err(OracleError::OutOfDomain {
                x,
                t,
                length: self.length,
                horizon: self.horizon,
            });
        }
        self.evaluate_extended(x, t, quad)
    }

    /// Solution on the `[n_t, n_x]` grid of `grid` as a `[1, n_t, n_x]` field.
    pub fn evaluate_grid(&self, grid: &GridSpec, quad: QuadSpec) -> Result<Field, OracleError> {
        let xs = grid.x_coords();
        let ts = grid.t_coords();
        let mut data = Vec::with_capacity(xs.len() * ts.len());
        for &t in &ts {
            for &x in &xs {
                data.push(self.evaluate_solution(x.clamp(0.0, self.length), t.min(self.horizon), quad)?);
            }
        }
        Ok(Tensor::new(vec![1, ts.len(), xs.len()], data).expect("grid shape"))
    }

    /// Grid matching this problem: endpoints included in space and time.
    pub fn grid(&self, n_x: usize, n_t: usize) -> GridSpec {
        GridSpec::new_1d(n_x, n_t, (0.0, self.length), (0.0, self.horizon), Sampling::Endpoints)
    }
}
