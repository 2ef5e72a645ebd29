use dsm_core::benchmarks::{benchmark, rate_schedule, source_rate_coefficient, BenchmarkName, BenchmarkParams};
use dsm_core::flows::{auxiliary_solution, FlowKind};
use dsm_core::integrator::IntegratorConfig;
use dsm_core::rates::{fit_rate, least_squares, linear_bound_violations, rate_trajectory};
use dsm_core::schedules::Schedule;

const SCHEDULE: Schedule = Schedule::Power { eps0: 1.0, t0: 2.0, nu: 1.0 };

fn cfg(t_max: f64) -> IntegratorConfig {
    IntegratorConfig { t_max, residual_stop: 0.0, h_max: 1e4, ..IntegratorConfig::default() }
}

fn params(m: u32) -> BenchmarkParams {
    BenchmarkParams { m, ..BenchmarkParams::default() }
}

fn fitted(name: BenchmarkName, m: u32, s: Option<Schedule>) -> f64 {
    let b = benchmark(name, &params(m)).unwrap();
    let s = s.unwrap_or_else(|| rate_schedule(&b));
    let traj = rate_trajectory(&b.problem, FlowKind::RegNewton, s, &cfg(1e5), 200).unwrap();
    fit_rate(&traj).unwrap().exponent
}

/// Slope of `log|x(eps)|` over `eps` in `[1e-5, 1e-3]`, from the auxiliary solutions.
fn sweep_exponent(name: BenchmarkName, m: u32) -> f64 {
    let b = benchmark(name, &params(m)).unwrap();
    let mut warm = b.problem.z0.clone();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..=40 {
        let eps = 10f64.powf(-3.0 - 2.0 * k as f64 / 40.0);
        let x = auxiliary_solution(&b.problem, eps, &warm).unwrap();
        xs.push(eps.ln());
        ys.push(x.norm().ln());
        warm = x;
    }
    least_squares(&xs, &ys).unwrap().0
}

#[test]
fn power_m_rate_is_one_over_m() {
    for m in [2, 3, 4] {
        let want = 1.0 / m as f64;
        let p = fitted(BenchmarkName::ScalarPowerM, m, None);
        assert!((p - want).abs() < 0.05, "m={m}: {p}");
        // A faster-decaying start reaches the asymptotic regime sooner.
        let p = fitted(BenchmarkName::ScalarPowerM, m, Some(SCHEDULE));
        assert!((p - want).abs() < 0.01, "m={m}: {p}");
        assert!((sweep_exponent(BenchmarkName::ScalarPowerM, m) - want).abs() < 0.02);
    }
}

#[test]
fn linear_rate_matches_auxiliary_sweep() {
    let oracle = sweep_exponent(BenchmarkName::ScalarLinear, 1);
    assert!((oracle - 1.0).abs() < 1e-3);
    let p = fitted(BenchmarkName::ScalarLinear, 1, None);
    assert!((p - oracle).abs() < 0.05, "{p} vs {oracle}");
}

#[test]
fn sourcewise_distance_is_linear_in_eps() {
    let b = benchmark(BenchmarkName::Sourcewise2d, &BenchmarkParams::default()).unwrap();
    let coef = source_rate_coefficient(&b, &b.schedule).unwrap();
    assert!((coef - 3.123).abs() < 1e-3);
    let traj = rate_trajectory(&b.problem, FlowKind::RegNewton, b.schedule, &cfg(1e4), 200).unwrap();
    assert!(linear_bound_violations(&traj, coef).is_empty());
    assert!(fit_rate(&traj).unwrap().exponent > 0.95);
}

#[test]
fn scaled_source_element_tracks_coefficient() {
    for v_scale in [0.5, 2.0] {
        let b = benchmark(BenchmarkName::Sourcewise2d, &BenchmarkParams { v_scale, ..BenchmarkParams::default() }).unwrap();
        let coef = source_rate_coefficient(&b, &b.schedule).unwrap();
        let traj = rate_trajectory(&b.problem, FlowKind::RegNewton, b.schedule, &cfg(1e4), 200).unwrap();
        assert!(linear_bound_violations(&traj, coef).is_empty(), "v_scale {v_scale}");
    }
    let too_big = benchmark(BenchmarkName::Sourcewise2d, &BenchmarkParams { v_scale: 3.0, ..BenchmarkParams::default() }).unwrap();
    assert!(source_rate_coefficient(&too_big, &too_big.schedule).is_err());
}
