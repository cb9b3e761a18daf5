use super::Tensor;

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every element of `x`.
pub fn finite_diff_gradient<F>(f: F, x: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        *g = (fp - fm) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape")
}

/// Largest `|a−b| / max(|a|, |b|, floor)` over paired elements.
///
/// `floor` keeps entries whose true gradient is numerically zero from
/// dominating through round-off in the difference quotient.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
