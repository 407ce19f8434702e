/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8)).fold(0.0, f64::max)
}

/// Compares an analytic gradient against central differences of `f` at `params`.
/// `h` must lie in `[1e-7, 1e-3]`.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!((1e-7..=1e-3).contains(&h), "finite-difference step {h} outside [1e-7, 1e-3]");
    max_relative_error(&numeric_gradient(f, params, h), analytic)
}
