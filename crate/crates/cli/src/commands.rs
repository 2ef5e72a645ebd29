//! Command implementations. Each returns the process exit code; results go to
//! files under the output directory and a human-readable summary to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde_json::json;

use dsm_core::benchmarks::{certified_envelope, preflight, rate_schedule, source_rate_coefficient, BenchmarkName};
use dsm_core::feigenbaum::{compare_methods, AlphaComparison};
use dsm_core::flows::{Flow, FlowKind};
use dsm_core::inequality_lab::run_scenario;
use dsm_core::integrator::{envelope_violations, integrate, IntegratorConfig, Monitors, Status};
use dsm_core::rates::{fit_rate, linear_bound_violations, rate_trajectory};
use dsm_core::schedules::{check_theorem32, check_theorem33, Admissibility, Schedule};
use dsm_core::Error as CoreError;

use crate::config::{parse_method, RunConfig};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FLOW_ERROR: u8 = 3;
pub const EXIT_ALL_FAILED: u8 = 4;
pub const EXIT_SCENARIO: u8 = 5;
pub const EXIT_TOO_FEW_SAMPLES: u8 = 6;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type Outcome = Result<u8, Failure>;

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_CONFIG, error: e.into() })
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: EXIT_RUNTIME, error: e.into() })
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub workers: Option<usize>,
    pub strict: bool,
}

fn write_json(path: &Path, v: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())).runtime()?;
    Ok(dir)
}

fn describe(s: &Schedule) -> String {
    match *s {
        Schedule::Power { eps0, t0, nu } => format!("power eps0={eps0} t0={t0} nu={nu}"),
        Schedule::Log { eps0, t0 } => format!("log eps0={eps0} t0={t0}"),
        Schedule::Exp { eps0, nu } => format!("exp eps0={eps0} nu={nu}"),
    }
}

/// Admissibility check that certifies `kind`, if the benchmark record carries
/// enough constants to check it.
fn governing_theorem(kind: FlowKind) -> Option<&'static str> {
    match kind {
        FlowKind::RegNewton => Some("newton"),
        FlowKind::RegSimple => Some("simple"),
        _ => None,
    }
}

fn print_table(out: &mut dyn Write, title: &str, rows: &[Admissibility], governing: Option<&str>) -> std::io::Result<()> {
    writeln!(out, "pre-flight admissibility: {title}")?;
    writeln!(out, "  {:<14} {:<8} {:>12}  {:<6} violated", "check", "governs", "C_eps", "result")?;
    for r in rows {
        let gov = if Some(r.theorem.as_str()) == governing { "yes" } else { "no" };
        let res = if r.passes { "pass" } else { "FAIL" };
        writeln!(
            out,
            "  {:<14} {:<8} {:>12.5e}  {:<6} {}",
            r.theorem,
            gov,
            r.c_eps,
            res,
            r.violated.as_deref().unwrap_or("-")
        )?;
    }
    Ok(())
}

fn strict_gate(common: &Common, rows: &[Admissibility], governing: Option<&str>) -> Result<(), Failure> {
    if !common.strict {
        return Ok(());
    }
    let failing: Vec<&Admissibility> = match governing {
        Some(g) => rows.iter().filter(|r| r.theorem == g && !r.passes).collect(),
        None => rows.iter().filter(|r| !r.passes).collect(),
    };
    match failing.first() {
        None => Ok(()),
        Some(r) => Err(Failure {
            code: EXIT_CONFIG,
            error: anyhow!(
                "--strict: schedule fails the {} check ({})",
                r.theorem,
                r.violated.as_deref().unwrap_or("unspecified")
            ),
        }),
    }
}

pub struct SolveArgs {
    pub method: Option<String>,
    pub t_max: Option<f64>,
}

pub fn solve(cfg: &RunConfig, args: &SolveArgs, common: &Common, out: &mut dyn Write) -> Outcome {
    let b = cfg.benchmark(BenchmarkName::ScalarCubic).config()?;
    let method = args.method.clone().or_else(|| cfg.solve.method.clone());
    let kind = match method {
        Some(m) => parse_method(&m).config()?,
        None => b.method,
    };
    let schedule = cfg.schedule_or(b.schedule).config()?;
    let mut integ = cfg.integrator(IntegratorConfig::default()).config()?;
    if let Some(t) = args.t_max {
        integ.t_max = t;
        integ.validate().config()?;
    }
    let dir = prepare_out(cfg)?;

    let regularized = kind.is_regularized();
    let rows = if regularized { preflight(&b.problem, &schedule).config()? } else { Vec::new() };
    if regularized {
        print_table(out, &describe(&schedule), &rows, governing_theorem(kind)).runtime()?;
        strict_gate(common, &rows, governing_theorem(kind))?;
    } else {
        writeln!(out, "pre-flight admissibility: {kind} is unregularized, no schedule conditions").runtime()?;
    }

    let envelope = if regularized { certified_envelope(&b.problem, kind, &schedule, integ.t_max).runtime()? } else { None };
    let flow = Flow::new(kind, b.problem.clone(), regularized.then_some(schedule), None).config()?;
    let monitors = Monitors::for_flow(&flow, envelope.clone());
    let traj = integrate(&flow, &integ, &monitors).runtime()?;

    let violations = match (&envelope, monitors.aux) {
        (Some(_), Some(_)) => match envelope_violations(&traj) {
            Ok(v) => Some(v),
            Err(CoreError::MissingMonitor(_)) => None,
            Err(e) => return Err(e).runtime(),
        },
        _ => None,
    };

    let csv_path = out_file(&dir, "trajectory.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display())).runtime()?;
    traj.write_csv(file).runtime()?;
    let mut doc = traj.to_json();
    doc["benchmark"] = json!(b.name.name());
    doc["schedule"] = if regularized { json!(schedule) } else { json!(null) };
    doc["preflight"] = json!(rows);
    doc["envelope_form"] = json!(envelope.as_ref().map(|e| e.form()));
    doc["envelope_violations"] = json!(violations.as_ref().map(|v| v.len()));
    write_json(&out_file(&dir, "trajectory.json"), &doc).runtime()?;

    let last = traj.final_sample().expect("trajectory has the initial sample");
    writeln!(out, "benchmark {}  method {kind}  status {}", b.name, traj.status.label()).runtime()?;
    writeln!(out, "final t {:.6e}  residual {:.6e}  samples {}", last.t, last.residual, traj.samples.len()).runtime()?;
    match &violations {
        Some(v) => writeln!(out, "envelope violations: {}", v.len()),
        None => writeln!(out, "envelope violations: n/a (no certified envelope)"),
    }
    .runtime()?;
    if let Status::FlowError { t, message } = &traj.status {
        writeln!(out, "flow error at t={t:.6e}: {message}").runtime()?;
        return Ok(EXIT_FLOW_ERROR);
    }
    Ok(0)
}

pub struct FeigenbaumArgs {
    pub z: Option<Vec<f64>>,
    pub n_max: Option<usize>,
}

fn pool(common: &Common) -> Result<rayon::ThreadPool, Failure> {
    let n = common.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("--workers must be positive") });
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build().runtime()
}

fn comparison_json(c: &AlphaComparison, names: &[String]) -> serde_json::Value {
    let methods: Vec<serde_json::Value> = c
        .results
        .iter()
        .zip(names)
        .map(|(r, name)| match r {
            Ok(r) => json!({
                "method": name,
                "ok": true,
                "alpha": r.alpha,
                "printed_alpha": -r.alpha,
                "n_selected": r.n_selected,
                "q": r.q,
                "stopped_by": r.stopped_by,
                "stages": r.stages.iter().map(|s| json!({
                    "n": s.n,
                    "residual": s.residual,
                    "discrepancy": s.discrepancy,
                    "concave": s.concave,
                    "unimodal": s.unimodal,
                    "max_second_difference": s.max_second_difference,
                    "alpha": s.alpha,
                    "status": s.status,
                    "t_final": s.t_final,
                })).collect::<Vec<_>>(),
            }),
            Err(e) => json!({"method": name, "ok": false, "error": e}),
        })
        .collect();
    json!({
        "z": c.z,
        "accepted": c.accepted,
        "digits": c.digits,
        "methods": methods,
    })
}

pub fn feigenbaum(cfg: &RunConfig, args: &FeigenbaumArgs, common: &Common, out: &mut dyn Write) -> Outcome {
    let mut section = cfg.feigenbaum.clone();
    if args.z.is_some() {
        section.z = args.z.clone();
    }
    if args.n_max.is_some() {
        section.n_max = args.n_max;
    }
    let plan = section.plan().config()?;
    let pool = pool(common)?;
    let dir = prepare_out(cfg)?;
    let names: Vec<String> = plan.methods.iter().map(|(k, _)| k.name().to_string()).collect();

    writeln!(out, "feigenbaum sweep: z = {:?}, methods {}, n_max {}", plan.z, names.join(", "), plan.options.n_max).runtime()?;
    for (k, s) in &plan.methods {
        writeln!(out, "  {k}: {}", describe(s)).runtime()?;
    }

    let started = Instant::now();
    let results: Vec<(AlphaComparison, f64)> = pool.install(|| {
        plan.z
            .par_iter()
            .map(|&z| {
                let t = Instant::now();
                let c = compare_methods(z, &plan.methods, &plan.options);
                (c, t.elapsed().as_secs_f64())
            })
            .collect()
    });
    let total = started.elapsed().as_secs_f64();

    let ok_count = results.iter().filter(|(c, _)| c.results.iter().any(|r| r.is_ok())).count();

    let header: Vec<String> = names.iter().map(|n| format!("{n:>14}")).collect();
    writeln!(out, "{:>6} {} {:>14} {:>6}", "z", header.join(" "), "accepted", "digits").runtime()?;
    for (c, _) in &results {
        let cols: Vec<String> = c
            .results
            .iter()
            .map(|r| match r {
                Ok(r) => format!("{:>14.9}", -r.alpha),
                Err(_) => format!("{:>14}", "failed"),
            })
            .collect();
        writeln!(out, "{:>6} {} {:>14} {:>6}", c.z, cols.join(" "), c.accepted.as_deref().unwrap_or("-"), c.digits).runtime()?;
    }

    let doc = json!({
        "schema": "dsm-feig/1",
        "sign_convention": "printed_alpha = 1/g(1) = -alpha",
        "methods": plan.methods.iter().map(|(k, s)| json!({"method": k.name(), "schedule": s})).collect::<Vec<_>>(),
        "options": plan.options,
        "results": results.iter().map(|(c, _)| comparison_json(c, &names)).collect::<Vec<_>>(),
        "metadata": {
            "runtime_s": total,
            "per_z_runtime_s": results.iter().map(|(_, t)| *t).collect::<Vec<_>>(),
        },
    });
    write_json(&out_file(&dir, "feigenbaum.json"), &doc).runtime()?;

    let csv_path = out_file(&dir, "feigenbaum.csv");
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display())).runtime()?;
    w.write_record(["z", "alpha", "digits", "n_final", "runtime_s"]).runtime()?;
    for (c, t) in &results {
        let n_final = c.results.iter().find_map(|r| r.as_ref().ok()).map(|r| r.n_selected.to_string()).unwrap_or_default();
        w.write_record([
            c.z.to_string(),
            c.accepted.clone().unwrap_or_default(),
            c.digits.to_string(),
            n_final,
            format!("{t:.3}"),
        ])
        .runtime()?;
    }
    w.flush().runtime()?;

    if ok_count == 0 {
        writeln!(out, "every degree failed").runtime()?;
        return Ok(EXIT_ALL_FAILED);
    }
    Ok(0)
}

pub struct InequalityArgs {
    pub scenario: Option<String>,
    pub t_max: Option<f64>,
}

pub fn inequality(cfg: &RunConfig, args: &InequalityArgs, out: &mut dyn Write) -> Outcome {
    let mut section = cfg.inequality.clone();
    if args.scenario.is_some() {
        section.scenario = args.scenario.clone();
    }
    if args.t_max.is_some() {
        section.t_max = args.t_max;
    }
    let scenario = section.scenario().config()?;
    let horizon = section.horizon().config()?;
    let dir = prepare_out(cfg)?;
    let report = run_scenario(scenario, horizon).runtime()?;

    write_json(&out_file(&dir, &format!("{}.json", scenario.name())), &report.to_json()).runtime()?;
    let csv_path = out_file(&dir, &format!("{}-trace.csv", scenario.name()));
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display())).runtime()?;
    w.write_record(["t", "value"]).runtime()?;
    for (t, v) in &report.trace {
        w.write_record([format!("{t:.17e}"), format!("{v:.17e}")]).runtime()?;
    }
    w.flush().runtime()?;

    writeln!(out, "scenario {}: {}", scenario.name(), if report.passes { "PASS" } else { "FAIL" }).runtime()?;
    writeln!(out, "{}", serde_json::to_string(&report.details).runtime()?).runtime()?;
    Ok(if report.passes { 0 } else { EXIT_SCENARIO })
}

pub struct RatesArgs {
    pub t_max: Option<f64>,
}

pub fn rates(cfg: &RunConfig, args: &RatesArgs, common: &Common, out: &mut dyn Write) -> Outcome {
    let b = cfg.benchmark(BenchmarkName::ScalarCubic).config()?;
    if b.growth_exponent.is_none() && b.source.is_none() {
        return Err(Failure {
            code: EXIT_CONFIG,
            error: anyhow!("benchmark {} has neither a growth exponent nor a source element", b.name),
        });
    }
    let kind = match &cfg.rates.method {
        Some(m) => parse_method(m).config()?,
        None => FlowKind::RegNewton,
    };
    if !kind.is_regularized() {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("rates needs a regularized method, got {kind}") });
    }
    let schedule = cfg.schedule_or(rate_schedule(&b)).config()?;
    let base = IntegratorConfig { t_max: 1e5, residual_stop: 0.0, h_max: 1e4, ..IntegratorConfig::default() };
    let mut integ = cfg.integrator(base).config()?;
    if let Some(t) = args.t_max {
        integ.t_max = t;
        integ.validate().config()?;
    }
    let points = cfg.rates.points.unwrap_or(200);
    if points < 2 {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("rates.points must be at least 2") });
    }
    let tolerance = cfg.rates.tolerance.unwrap_or(0.05);
    if !(tolerance > 0.0) {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("rates.tolerance must be positive") });
    }
    let dir = prepare_out(cfg)?;

    let rows = preflight(&b.problem, &schedule).config()?;
    print_table(out, &describe(&schedule), &rows, governing_theorem(kind)).runtime()?;
    strict_gate(common, &rows, governing_theorem(kind))?;

    let traj = rate_trajectory(&b.problem, kind, schedule, &integ, points).runtime()?;
    let file = fs::File::create(out_file(&dir, "rates-trajectory.csv")).runtime()?;
    traj.write_csv(file).runtime()?;
    if let Status::FlowError { t, message } = &traj.status {
        writeln!(out, "flow error at t={t:.6e}: {message}").runtime()?;
        return Ok(EXIT_FLOW_ERROR);
    }
    let fit = match fit_rate(&traj) {
        Ok(f) => f,
        Err(CoreError::ConditionViolated(msg)) => {
            writeln!(out, "rate fit refused: {msg}").runtime()?;
            return Ok(EXIT_TOO_FEW_SAMPLES);
        }
        Err(e) => return Err(e).runtime(),
    };
    let expected = b.growth_exponent.map(|a| 1.0 / a);
    let within = expected.map(|e| (fit.exponent - e).abs() <= tolerance);
    let bound = match &b.source {
        Some(_) => {
            let coef = source_rate_coefficient(&b, &schedule).runtime()?;
            let v = linear_bound_violations(&traj, coef);
            Some((coef, v.len()))
        }
        None => None,
    };

    writeln!(out, "benchmark {}  method {kind}  status {}", b.problem.name, traj.status.label()).runtime()?;
    writeln!(out, "fitted exponent {:.6} over {} tail samples", fit.exponent, fit.tail_samples).runtime()?;
    if let (Some(e), Some(ok)) = (expected, within) {
        writeln!(out, "expected {e:.6} (tolerance {tolerance}): {}", if ok { "PASS" } else { "FAIL" }).runtime()?;
    }
    if let Some((coef, n)) = bound {
        writeln!(out, "linear bound |z - y| <= {coef:.6} eps(t): {n} tail violations").runtime()?;
    }
    let doc = json!({
        "schema": "dsm-rates/1",
        "benchmark": b.problem.name,
        "method": kind.name(),
        "schedule": schedule,
        "status": traj.status,
        "fit": fit,
        "expected_exponent": expected,
        "tolerance": tolerance,
        "within_tolerance": within,
        "linear_bound": bound.map(|(c, n)| json!({"coefficient": c, "tail_violations": n})),
    });
    write_json(&out_file(&dir, "rates.json"), &doc).runtime()?;
    Ok(0)
}

pub fn check_schedule(cfg: &RunConfig, common: &Common, out: &mut dyn Write) -> Outcome {
    let mut schedules = cfg.check.schedules.clone();
    if schedules.is_empty() {
        schedules.push(cfg.schedule.ok_or_else(|| anyhow!("no schedule given: set [schedule] or [check].schedules")).config()?);
    }
    for s in &schedules {
        s.validate().with_context(|| describe(s)).config()?;
    }
    let problem = match &cfg.problem.benchmark {
        Some(_) => Some(cfg.benchmark(BenchmarkName::ScalarCubic).config()?),
        None => None,
    };
    let pool = pool(common)?;
    let dir = prepare_out(cfg)?;

    let tables: Vec<Vec<Admissibility>> = pool.install(|| {
        schedules
            .par_iter()
            .map(|s| match &problem {
                Some(b) => preflight(&b.problem, s).unwrap_or_default(),
                // Without problem constants only the C_eps part of the Newton-flow conditions is checked.
                None => vec![check_theorem32(s, 0.0, 0.0), check_theorem33(s)],
            })
            .collect()
    });
    let mut any_fail = false;
    for (s, rows) in schedules.iter().zip(&tables) {
        print_table(out, &describe(s), rows, None).runtime()?;
        any_fail |= rows.iter().any(|r| !r.passes);
    }
    let doc = json!({
        "schema": "dsm-check/1",
        "benchmark": problem.as_ref().map(|b| b.problem.name.clone()),
        "schedules": schedules.iter().zip(&tables).map(|(s, r)| json!({"schedule": s, "checks": r})).collect::<Vec<_>>(),
    });
    write_json(&out_file(&dir, "check-schedule.json"), &doc).runtime()?;
    if common.strict && any_fail {
        return Err(Failure { code: EXIT_CONFIG, error: anyhow!("--strict: at least one schedule is inadmissible") });
    }
    Ok(0)
}
