//! Pseudo-spectral vorticity solver on the unit torus,
//!
//! ```text
//! ∂t w + u·∇w = ν Δw + f,   u = (∂y ψ, −∂x ψ),   −Δψ = w,
//! ```
//!
//! with the viscous term handled by an integrating factor and the rest by
//! RK4 (Lawson scheme). Quadratic products are dealiased with the 2/3 rule.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::components::Field;
use crate::tensor::Tensor;

use super::SolverError;

type C64 = Complex<f64>;

const CFL: f64 = 0.5;

/// One vorticity run: viscosity, optional force frequency (`None` means
/// unforced), initial vorticity on an `n × n` grid (row index y), and the
/// snapshot times `horizon · j / (n_frames − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterNsSpec {
    pub nu: f64,
    pub omega: Option<f64>,
    pub n: usize,
    pub w0: Vec<f64>,
    pub horizon: f64,
    pub n_frames: usize,
}

/// `0.1 (sin(ωπ(x+y)) + cos(ωπ(x+y)))` at the grid points `(i/n, j/n)`, as
/// a `[1, n, n]` field.
pub fn heterns_force(omega: f64, n: usize) -> Field {
    let mut data = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let s = omega * PI * (i as f64 + j as f64) / n as f64;
            data.push(0.1 * (s.sin() + s.cos()));
        }
    }
    Tensor::new(vec![1, n, n], data).expect("grid shape")
}

struct Spectral {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers per index.
    k: Vec<f64>,
    keep: Vec<bool>,
    scratch: Vec<C64>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * m
            })
            .collect();
        let cutoff = n as f64 / 3.0;
        let keep = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { n as f64 - j as f64 };
                m < cutoff
            })
            .collect();
        Spectral {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k,
            keep,
            scratch: vec![C64::new(0.0, 0.0); n],
        }
    }

    fn transform(&mut self, data: &mut [C64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        for i in 0..n {
            for j in 0..n {
                self.scratch[j] = data[j * n + i];
            }
            plan.process(&mut self.scratch);
            for j in 0..n {
                data[j * n + i] = self.scratch[j];
            }
        }
        if inverse {
            let s = 1.0 / (n * n) as f64;
            for v in data.iter_mut() {
                *v *= s;
            }
        }
    }

    fn forward_real(&mut self, v: &[f64]) -> Vec<C64> {
        let mut out: Vec<C64> = v.iter().map(|&x| C64::new(x, 0.0)).collect();
        self.transform(&mut out, false);
        out
    }

    fn inverse_real(&mut self, mut v: Vec<C64>) -> Vec<f64> {
        self.transform(&mut v, true);
        v.into_iter().map(|c| c.re).collect()
    }

    /// `|k|²` at flat spectral index `idx` (row = y).
    fn k2(&self, idx: usize) -> f64 {
        let (ky, kx) = (self.k[idx / self.n], self.k[idx % self.n]);
        kx * kx + ky * ky
    }

    fn kept(&self, idx: usize) -> bool {
        self.keep[idx / self.n] && self.keep[idx % self.n]
    }
}

struct Stepper {
    sp: Spectral,
    nu: f64,
    force_hat: Vec<C64>,
}

impl Stepper {
    /// Spectrum of `−u·∇w + f`, dealiased, zero mean; also returns `max |u|`.
    fn nonlinear(&mut self, w_hat: &[C64]) -> (Vec<C64>, f64) {
        let n = self.sp.n;
        let i = C64::new(0.0, 1.0);
        let mut u_hat = vec![C64::new(0.0, 0.0); n * n];
        let mut v_hat = u_hat.clone();
        let mut wx_hat = u_hat.clone();
        let mut wy_hat = u_hat.clone();
        for idx in 0..n * n {
            if idx == 0 || !self.sp.kept(idx) {
                continue;
            }
            let (ky, kx) = (self.sp.k[idx / n], self.sp.k[idx % n]);
            let psi = w_hat[idx] / self.sp.k2(idx);
            u_hat[idx] = i * ky * psi;
            v_hat[idx] = -i * kx * psi;
            wx_hat[idx] = i * kx * w_hat[idx];
            wy_hat[idx] = i * ky * w_hat[idx];
        }
        let u = self.sp.inverse_real(u_hat);
        let v = self.sp.inverse_real(v_hat);
        let wx = self.sp.inverse_real(wx_hat);
        let wy = self.sp.inverse_real(wy_hat);
        let mut speed = 0.0f64;
        let adv: Vec<f64> = (0..n * n)
            .map(|p| {
                speed = speed.max(u[p].abs()).max(v[p].abs());
                -(u[p] * wx[p] + v[p] * wy[p])
            })
            .collect();
        let mut out = self.sp.forward_real(&adv);
        for idx in 0..n * n {
            if idx == 0 || !self.sp.kept(idx) {
                out[idx] = C64::new(0.0, 0.0);
            } else {
                out[idx] += self.force_hat[idx];
            }
        }
        (out, speed)
    }

    fn step(&mut self, w_hat: &mut [C64], dt: f64, first: (Vec<C64>, f64)) {
        let m = w_hat.len();
        let e: Vec<f64> = (0..m).map(|idx| (-self.nu * self.sp.k2(idx) * dt * 0.5).exp()).collect();
        let k1: Vec<C64> = first.0.iter().map(|v| v * dt).collect();
        let w2: Vec<C64> = (0..m).map(|p| (w_hat[p] + 0.5 * k1[p]) * e[p]).collect();
        let k2: Vec<C64> = self.nonlinear(&w2).0.iter().map(|v| v * dt).collect();
        let w3: Vec<C64> = (0..m).map(|p| w_hat[p] * e[p] + 0.5 * k2[p]).collect();
        let k3: Vec<C64> = self.nonlinear(&w3).0.iter().map(|v| v * dt).collect();
        let w4: Vec<C64> = (0..m).map(|p| w_hat[p] * e[p] * e[p] + k3[p] * e[p]).collect();
        let k4: Vec<C64> = self.nonlinear(&w4).0.iter().map(|v| v * dt).collect();
        for p in 0..m {
            let e2 = e[p] * e[p];
            w_hat[p] = w_hat[p] * e2 + (k1[p] * e2 + 2.0 * e[p] * (k2[p] + k3[p]) + k4[p]) / 6.0;
        }
    }
}

/// Vorticity snapshots `[n_frames, n, n]`, the first being `w0`.
pub fn solve_ns2d_spectral(spec: &HeterNsSpec) -> Result<Field, SolverError> {
    let n = spec.n;
    if n < 4 || !n.is_power_of_two() {
        return Err(SolverError::Invalid(format!("grid size {n} must be a power of two >= 4")));
    }
    if spec.w0.len() != n * n {
        return Err(SolverError::Invalid(format!(
            "initial vorticity has {} values, expected {}",
            spec.w0.len(),
            n * n
        )));
    }
    if !(spec.nu > 0.0) || spec.n_frames < 2 || !(spec.horizon > 0.0) {
        return Err(SolverError::Invalid("need nu > 0, horizon > 0 and at least 2 frames".into()));
    }
    let mut sp = Spectral::new(n);
    let mut force_hat = match spec.omega {
        Some(omega) => sp.forward_real(heterns_force(omega, n).data()),
        None => vec![C64::new(0.0, 0.0); n * n],
    };
    // a mean force would drive the mean vorticity, which the torus cannot carry
    force_hat[0] = C64::new(0.0, 0.0);
    let w_hat0 = sp.forward_real(&spec.w0);
    let mut st = Stepper {
        sp,
        nu: spec.nu,
        force_hat,
    };
    let mut w_hat = w_hat0;
    let dx = 1.0 / n as f64;
    let mut frames = Vec::with_capacity(spec.n_frames * n * n);
    frames.extend_from_slice(&spec.w0);
    let mut t = 0.0;
    let mut step = 0usize;
    for j in 1..spec.n_frames {
        let target = spec.horizon * j as f64 / (spec.n_frames - 1) as f64;
        while t < target {
            let first = st.nonlinear(&w_hat);
            let speed = first.1;
            if !speed.is_finite() {
                return Err(SolverError::Diverged {
                    step,
                    time: t,
                    reason: "non-finite velocity".into(),
                });
            }
            let dt_cfl = if speed > 0.0 { CFL * dx / speed } else { f64::INFINITY };
            if dt_cfl < 1e-8 {
                return Err(SolverError::Diverged {
                    step,
                    time: t,
                    reason: format!("CFL step {dt_cfl:e} too small"),
                });
            }
            let dt = dt_cfl.min(target - t);
            st.step(&mut w_hat, dt, first);
            step += 1;
            t = if target - t - dt <= 1e-12 * target { target } else { t + dt };
        }
        let w = st.sp.inverse_real(w_hat.clone());
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Diverged {
                step,
                time: t,
                reason: "non-finite vorticity".into(),
            });
        }
        frames.extend(w);
    }
    Ok(Tensor::new(vec![spec.n_frames, n, n], frames).expect("frame shape"))
}
