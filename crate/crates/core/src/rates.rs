//! Empirical convergence rates `|z(t) - y| ~ C eps(t)^p` from trajectories.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::{Flow, FlowKind};
use crate::integrator::{integrate_with_stops, IntegratorConfig, Monitors, Trajectory};
use crate::problem::Problem;
use crate::quadrature::log_grid;
use crate::schedules::Schedule;

/// Tail samples required before a fit is trusted.
pub const MIN_TAIL_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Slope of `log|z - y|` against `log eps`.
    pub exponent: f64,
    pub intercept: f64,
    pub tail_samples: usize,
}

/// Least-squares line through `(x_i, y_i)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("need at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DivisionByZero("abscissae are all equal"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fits over the second half of the samples that carry both `eps` and a
/// positive distance to the known solution.
pub fn fit_rate(traj: &Trajectory) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter_map(|s| match (s.eps, s.dist_sol) {
            (Some(e), Some(d)) if e > 0.0 && d > 0.0 => Some((e.ln(), d.ln())),
            _ => None,
        })
        .collect();
    let tail = &pts[pts.len() / 2..];
    if tail.len() < MIN_TAIL_SAMPLES {
        return Err(Error::ConditionViolated(format!(
            "{} tail samples, at least {MIN_TAIL_SAMPLES} required",
            tail.len()
        )));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
    let (exponent, intercept) = least_squares(&xs, &ys)?;
    Ok(RateFit { exponent, intercept, tail_samples: tail.len() })
}

/// Integrates `kind` with forced samples on a log grid of `points` times so
/// the tail is populated even when the step size grows large.
pub fn rate_trajectory(problem: &Problem, kind: FlowKind, s: Schedule, cfg: &IntegratorConfig, points: usize) -> Result<Trajectory> {
    if problem.known_solution.is_none() {
        return Err(Error::MissingConstants("known solution"));
    }
    let flow = Flow::new(kind, problem.clone(), Some(s), None)?;
    let stops = log_grid(cfg.t_max, points);
    integrate_with_stops(&flow, cfg, &Monitors::default(), &stops[1..])
}

/// Tail samples with `|z - y| > coef eps`, as `(t, |z - y| / eps)`.
pub fn linear_bound_violations(traj: &Trajectory, coef: f64) -> Vec<(f64, f64)> {
    let n = traj.samples.len();
    traj.samples[n / 2..]
        .iter()
        .filter_map(|s| match (s.eps, s.dist_sol) {
            (Some(e), Some(d)) if d > coef * e => Some((s.t, d / e)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Sample, Status};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn traj(points: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            method: "test".into(),
            problem: "test".into(),
            samples: points
                .iter()
                .enumerate()
                .map(|(i, &(e, d))| Sample {
                    t: i as f64,
                    z: vec![d],
                    residual: 0.0,
                    eps: Some(e),
                    envelope: None,
                    dist_aux: None,
                    dist_sol: Some(d),
                })
                .collect(),
            status: Status::ReachedTmax,
            evaluations: 0,
        }
    }

    proptest! {
        #[test]
        fn recovers_exact_power_laws(p in 0.05f64..2.0, c in 0.1f64..10.0) {
            let pts: Vec<(f64, f64)> = (0..60).map(|i| {
                let e = 10f64.powf(-(i as f64) / 10.0);
                (e, c * e.powf(p))
            }).collect();
            let fit = fit_rate(&traj(&pts)).unwrap();
            prop_assert!((fit.exponent - p).abs() < 1e-10);
            prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
            prop_assert_eq!(fit.tail_samples, 30);
        }
    }

    #[test]
    fn uses_only_the_tail() {
        let mut pts: Vec<(f64, f64)> = (0..30).map(|i| (1.0 / (1.0 + i as f64), 1.0)).collect();
        pts.extend((0..30).map(|i| {
            let e = 1e-2 / (1.0 + i as f64);
            (e, e.sqrt())
        }));
        let fit = fit_rate(&traj(&pts)).unwrap();
        assert_relative_eq!(fit.exponent, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let pts: Vec<(f64, f64)> = (1..30).map(|i| (1.0 / i as f64, 1.0 / i as f64)).collect();
        assert!(matches!(fit_rate(&traj(&pts)), Err(Error::ConditionViolated(_))));
    }

    #[test]
    fn bound_violations_checked_on_tail() {
        let pts = [(1.0, 5.0), (1.0, 5.0), (0.1, 0.2), (0.01, 0.05)];
        assert_eq!(linear_bound_violations(&traj(&pts), 3.0), vec![(3.0, 5.0)]);
        assert!(linear_bound_violations(&traj(&pts), 5.0).is_empty());
    }
}
