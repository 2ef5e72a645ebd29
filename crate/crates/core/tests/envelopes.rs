use dsm_core::benchmarks::{benchmark, certified_envelope, BenchmarkName, BenchmarkParams};
use dsm_core::flows::{Flow, FlowKind};
use dsm_core::integrator::{envelope_violations, integrate, IntegratorConfig, Monitors};
use dsm_core::schedules::{check_theorem32, Schedule};

fn cfg(t_max: f64) -> IntegratorConfig {
    IntegratorConfig { t_max, residual_stop: 1e-12, ..IntegratorConfig::default() }
}

fn run(name: BenchmarkName, params: &BenchmarkParams, kind: FlowKind, s: Schedule, t_max: f64) {
    let b = benchmark(name, params).unwrap();
    let env = certified_envelope(&b.problem, kind, &s, t_max).unwrap().unwrap_or_else(|| panic!("{name} {kind}: no envelope"));
    let flow = Flow::new(kind, b.problem.clone(), Some(s), None).unwrap();
    let traj = integrate(&flow, &cfg(t_max), &Monitors::for_flow(&flow, Some(env))).unwrap();
    assert!(traj.samples.len() > 10, "{name} {kind}: {:?}", traj.status);
    let bad = envelope_violations(&traj).unwrap();
    assert!(bad.is_empty(), "{name} {kind} {s:?}: {} violations, first {:?}", bad.len(), bad.first());
    if kind == FlowKind::RegNewton {
        let n2 = b.problem.n2.unwrap();
        let c = s.c_eps();
        assert!(check_theorem32(&s, n2, b.problem.dist0().unwrap()).passes);
        for smp in &traj.samples {
            let bound = (1.0 - c) / n2 * smp.eps.unwrap();
            assert!(smp.dist_aux.unwrap() <= bound, "{name}: t={} gap {} > {bound}", smp.t, smp.dist_aux.unwrap());
        }
    }
}

#[test]
fn newton_flow_stays_inside_lambda_over_eps() {
    for name in BenchmarkName::ALL {
        let p = BenchmarkParams::default();
        let b = benchmark(name, &p).unwrap();
        if b.method == FlowKind::RegNewton {
            run(name, &p, FlowKind::RegNewton, b.schedule, 500.0);
        }
    }
    for m in [2, 4] {
        let p = BenchmarkParams { m, ..BenchmarkParams::default() };
        let b = benchmark(BenchmarkName::ScalarPowerM, &p).unwrap();
        run(BenchmarkName::ScalarPowerM, &p, FlowKind::RegNewton, b.schedule, 500.0);
    }
}

#[test]
fn newton_flow_with_log_schedule() {
    let s = Schedule::Log { eps0: 100.0, t0: 3.0 };
    for name in [BenchmarkName::ScalarCubic, BenchmarkName::Monotone2d] {
        run(name, &BenchmarkParams::default(), FlowKind::RegNewton, s, 300.0);
    }
}

#[test]
fn simple_flow_stays_inside_ode_envelope() {
    let schedules = [Schedule::Power { eps0: 1.0, t0: 2.0, nu: 0.5 }, Schedule::Log { eps0: 1.0, t0: 3.0 }];
    for name in BenchmarkName::ALL {
        for s in schedules {
            run(name, &BenchmarkParams::default(), FlowKind::RegSimple, s, 300.0);
        }
    }
}

#[test]
fn monitor_detects_a_too_tight_envelope() {
    let b = benchmark(BenchmarkName::ScalarCubic, &BenchmarkParams::default()).unwrap();
    let env = certified_envelope(&b.problem, FlowKind::RegSimple, &b.schedule, 100.0).unwrap().unwrap();
    let flow = Flow::new(FlowKind::RegSimple, b.problem.clone(), Some(b.schedule), None).unwrap();
    let traj = integrate(&flow, &cfg(100.0), &Monitors::for_flow(&flow, Some(env.scaled(1e4)))).unwrap();
    assert!(!envelope_violations(&traj).unwrap().is_empty());
}
