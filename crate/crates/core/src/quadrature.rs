use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_DEPTH: u32 = 40;

/// Adaptive Simpson integration with absolute tolerance `tol`.
///
/// Subintervals whose requested tolerance falls below the rounding floor of
/// the local estimate are accepted as converged.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return adaptive_simpson(f, b, a, tol, max_depth).map(|v| -v);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, max_depth)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("quadrature".into()));
    }
    Ok(value)
}

/// [`adaptive_simpson`] with the default tolerance and depth limit.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    adaptive_simpson(f, a, b, DEFAULT_TOL, DEFAULT_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::NonFinite("quadrature integrand".into()));
    }
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    if delta.abs() <= 15.0 * tol || delta.abs() <= floor {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 || m <= a || m >= b {
        return Err(Error::QuadratureFailed { a, b });
    }
    let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Ok(l + r)
}

/// `n` points with `grid[0] = 0`, log-spaced on `[t_min, t_max]` after it.
pub fn log_grid(t_max: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && t_max > 0.0);
    let t_min = (t_max * 1e-6).min(1e-3);
    let mut g = Vec::with_capacity(n);
    g.push(0.0);
    let (la, lb) = (t_min.ln(), t_max.ln());
    for k in 0..n - 1 {
        let s = k as f64 / (n - 2).max(1) as f64;
        g.push((la + s * (lb - la)).exp());
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0).unwrap();
        assert_relative_eq!(v, 4.0 - 4.0 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exponential_and_reversed_limits() {
        let v = integrate(f64::exp, 0.0, 3.0).unwrap();
        assert_relative_eq!(v, 3f64.exp() - 1.0, epsilon = 1e-9);
        let w = integrate(f64::exp, 3.0, 0.0).unwrap();
        assert_relative_eq!(w, -v, epsilon = 1e-15);
    }

    #[test]
    fn singular_integrand_fails() {
        let r = adaptive_simpson(|x: f64| 1.0 / x.abs().max(1e-300), -1.0, 1.0, 1e-10, 10);
        assert!(r.is_err());
    }

    #[test]
    fn log_grid_shape() {
        let g = log_grid(1000.0, 512);
        assert_eq!(g.len(), 512);
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(*g.last().unwrap(), 1000.0, epsilon = 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
