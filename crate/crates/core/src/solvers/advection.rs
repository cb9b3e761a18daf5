use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::components::{BoundaryType, Field, GridSpec, Sampling};
use crate::tensor::Tensor;

use super::SolverError;

/// Translates a periodic signal sampled on `n` uniform points of a period of
/// `length` by `distance`, i.e. returns `u(x − distance)`, through a phase
/// shift of its Fourier coefficients. The Nyquist mode of an even-length
/// signal keeps only the real part of its phase factor.
pub fn shift_periodic(u: &[f64], distance: f64, length: f64) -> Vec<f64> {
    let n = u.len();
    if distance == 0.0 || n == 0 {
        return u.to_vec();
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let k = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let theta = -2.0 * PI * k * distance / length;
        if n % 2 == 0 && j == n / 2 {
            *c *= theta.cos();
        } else {
            *c *= Complex::from_polar(1.0, theta);
        }
    }
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// `u(t, x) = u0(x − β t)` on the `[1, n_t, n_x]` space-time grid.
pub fn solve_advection_exact(
    u0: &[f64],
    beta: f64,
    grid: &GridSpec,
    boundary: &BoundaryType,
) -> Result<Field, SolverError> {
    if !boundary.is_periodic() {
        return Err(SolverError::NonPeriodic);
    }
    if grid.sampling != Sampling::Periodic || grid.n_y.is_some() {
        return Err(SolverError::Invalid(
            "exact advection needs a 1D grid with periodic sampling".into(),
        ));
    }
    if u0.len() != grid.n_x {
        return Err(SolverError::Invalid(format!(
            "initial condition has {} points, grid has {}",
            u0.len(),
            grid.n_x
        )));
    }
    let length = grid.x_range.1 - grid.x_range.0;
    let mut data = Vec::with_capacity(grid.n_t * grid.n_x);
    for t in grid.t_coords() {
        data.extend(shift_periodic(u0, beta * t, length));
    }
    Ok(Tensor::new(vec![1, grid.n_t, grid.n_x], data).expect("grid shape"))
}
