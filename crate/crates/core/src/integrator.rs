//! Dormand-Prince 5(4) integration of `z' = Phi(z, t)` with trajectory
//! recording and envelope monitoring.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{auxiliary_solution, Flow};
use crate::linalg::Vector;
use crate::schedules::Envelope;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub t_max: f64,
    pub residual_stop: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1e3,
            t_max: 1e4,
            residual_stop: 1e-9,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |label: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{label} must be positive and finite, got {v}")))
            }
        };
        pos("rel_tol", self.rel_tol)?;
        pos("abs_tol", self.abs_tol)?;
        pos("h_init", self.h_init)?;
        pos("h_min", self.h_min)?;
        pos("h_max", self.h_max)?;
        pos("t_max", self.t_max)?;
        if !(self.residual_stop >= 0.0) {
            return Err(Error::InvalidParameter("residual_stop must be nonnegative".into()));
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return Err(Error::InvalidParameter("need h_min <= h_init <= h_max".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    ReachedResidual,
    ReachedTmax,
    StepUnderflow { t: f64, h: f64 },
    MaxSteps { t: f64 },
    FlowError { t: f64, message: String },
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::ReachedResidual => "reached_residual",
            Status::ReachedTmax => "reached_tmax",
            Status::StepUnderflow { .. } => "step_underflow",
            Status::MaxSteps { .. } => "max_steps",
            Status::FlowError { .. } => "flow_error",
        }
    }
}

/// Dense output of a raw ODE solve.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vector>,
    pub status: Status,
    pub evaluations: usize,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;
const FACTOR_MIN: f64 = 0.2;
const FACTOR_MAX: f64 = 5.0;

/// Integrates `y' = rhs(t, y)` from `t = 0` to `cfg.t_max`.
///
/// Every time in `stops` is hit exactly by an accepted step. `stop_when` is
/// called after each accepted step (and at `t = 0`) and ends the solve with
/// `ReachedResidual` when it returns true.
pub fn solve_ivp<R, S>(mut rhs: R, y0: &Vector, cfg: &IntegratorConfig, stops: &[f64], mut stop_when: S) -> OdeSolution
where
    R: FnMut(f64, &Vector) -> Result<Vector>,
    S: FnMut(f64, &Vector) -> bool,
{
    let mut ts = vec![0.0];
    let mut ys = vec![y0.clone()];
    let mut evaluations = 0usize;
    let finish = |ts, ys, status, evaluations| OdeSolution { t: ts, y: ys, status, evaluations };

    if stop_when(0.0, y0) {
        return finish(ts, ys, Status::ReachedResidual, evaluations);
    }
    let mut stops: Vec<f64> = stops.iter().copied().filter(|&s| s > 0.0 && s < cfg.t_max).collect();
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops.push(cfg.t_max);
    let mut next_stop = 0usize;

    let mut t = 0.0f64;
    let mut y = y0.clone();
    let mut k1 = match rhs(t, &y) {
        Ok(v) => v,
        Err(e) => return finish(ts, ys, Status::FlowError { t, message: e.to_string() }, 1),
    };
    evaluations += 1;
    let mut h = cfg.h_init;
    let mut err_prev = 1e-4f64;
    let mut rejected_last = false;
    let mut steps = 0usize;

    macro_rules! eval {
        ($tt:expr, $yy:expr) => {{
            evaluations += 1;
            match rhs($tt, &$yy) {
                Ok(v) => v,
                Err(e) => {
                    return finish(ts, ys, Status::FlowError { t: $tt, message: e.to_string() }, evaluations);
                }
            }
        }};
    }

    loop {
        if steps >= cfg.max_steps {
            return finish(ts, ys, Status::MaxSteps { t }, evaluations);
        }
        let target = stops[next_stop];
        h = h.min(cfg.h_max);
        let mut hits_stop = false;
        if t + h >= target || target - (t + h) < 1e-12 * target.abs().max(1.0) {
            h = target - t;
            hits_stop = true;
        }
        if h < cfg.h_min && !hits_stop {
            return finish(ts, ys, Status::StepUnderflow { t, h }, evaluations);
        }

        let y2 = &y + &k1 * (h * A21);
        let k2 = eval!(t + C2 * h, y2);
        let y3 = &y + (&k1 * A31 + &k2 * A32) * h;
        let k3 = eval!(t + C3 * h, y3);
        let y4 = &y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h;
        let k4 = eval!(t + C4 * h, y4);
        let y5 = &y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h;
        let k5 = eval!(t + C5 * h, y5);
        let y6 = &y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h;
        let k6 = eval!(t + h, y6);
        let y_new = &y + (&k1 * B1 + &k3 * B3 + &k4 * B4 + &k5 * B5 + &k6 * B6) * h;
        let t_new = if hits_stop { target } else { t + h };
        let k7 = eval!(t_new, y_new);
        let err_vec = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;

        let n = y.len().max(1) as f64;
        let mut acc = 0.0;
        for i in 0..y.len() {
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            acc += (err_vec[i] / sc).powi(2);
        }
        let err = (acc / n).sqrt();
        if !err.is_finite() {
            h *= FACTOR_MIN;
            rejected_last = true;
            if h < cfg.h_min {
                return finish(ts, ys, Status::StepUnderflow { t, h }, evaluations);
            }
            continue;
        }

        if err <= 1.0 {
            steps += 1;
            let mut factor = if err == 0.0 {
                FACTOR_MAX
            } else {
                SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA)
            };
            factor = factor.clamp(FACTOR_MIN, FACTOR_MAX);
            if rejected_last {
                factor = factor.min(1.0);
            }
            err_prev = err.max(1e-4);
            rejected_last = false;

            t = t_new;
            y = y_new;
            k1 = k7;
            ts.push(t);
            ys.push(y.clone());
            if stop_when(t, &y) {
                return finish(ts, ys, Status::ReachedResidual, evaluations);
            }
            if hits_stop {
                next_stop += 1;
                if next_stop == stops.len() {
                    return finish(ts, ys, Status::ReachedTmax, evaluations);
                }
            }
            h *= factor;
        } else {
            let factor = (SAFETY * err.powf(-0.2)).max(FACTOR_MIN);
            h *= factor;
            rejected_last = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub z: Vec<f64>,
    pub residual: f64,
    pub eps: Option<f64>,
    /// `1/mu(t)`.
    pub envelope: Option<f64>,
    pub dist_aux: Option<f64>,
    pub dist_sol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    pub problem: String,
    pub samples: Vec<Sample>,
    pub status: Status,
    pub evaluations: usize,
}

/// Target against which `dist_aux` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuxTarget {
    /// Solution of `F(x) + eps(t)(x - z0) = 0`.
    Tikhonov,
    /// The known solution `y`.
    Solution,
}

#[derive(Debug, Clone, Default)]
pub struct Monitors {
    pub envelope: Option<Envelope>,
    pub aux: Option<AuxTarget>,
}

impl Monitors {
    /// Auxiliary monitor matching the flow kind, plus the given envelope.
    pub fn for_flow(flow: &Flow, envelope: Option<Envelope>) -> Self {
        let aux = if !flow.kind().is_regularized() {
            None
        } else if flow.kind().tracks_solution() {
            flow.problem().known_solution.as_ref().map(|_| AuxTarget::Solution)
        } else {
            Some(AuxTarget::Tikhonov)
        };
        Monitors { envelope, aux }
    }
}

/// Integrates the flow from `z0`, recording a sample at every accepted step.
pub fn integrate(flow: &Flow, cfg: &IntegratorConfig, monitors: &Monitors) -> Result<Trajectory> {
    integrate_with_stops(flow, cfg, monitors, &[])
}

/// [`integrate`] with additional forced sample times.
pub fn integrate_with_stops(flow: &Flow, cfg: &IntegratorConfig, monitors: &Monitors, stops: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    let problem = flow.problem();
    if monitors.aux == Some(AuxTarget::Tikhonov) && flow.schedule().is_none() {
        return Err(Error::InvalidParameter("auxiliary monitor needs a regularized flow".into()));
    }
    if monitors.aux == Some(AuxTarget::Solution) && problem.known_solution.is_none() {
        return Err(Error::MissingConstants("known solution"));
    }
    let sol = solve_ivp(|t, z| flow.eval(z, t), &problem.z0, cfg, stops, |_, z| {
        problem.residual(z) <= cfg.residual_stop
    });

    let mut samples = Vec::with_capacity(sol.t.len());
    let mut warm = problem.z0.clone();
    let mut status = sol.status;
    for (&t, z) in sol.t.iter().zip(sol.y.iter()) {
        let eps = flow.eps(t);
        let dist_aux = match monitors.aux {
            None => None,
            Some(AuxTarget::Solution) => problem.known_solution.as_ref().map(|y| (z - y).norm()),
            Some(AuxTarget::Tikhonov) => {
                let e = eps.expect("checked above");
                match auxiliary_solution(problem, e, &warm) {
                    Ok(x) => {
                        let d = (z - &x).norm();
                        warm = x;
                        Some(d)
                    }
                    Err(err) => {
                        if !matches!(status, Status::FlowError { .. }) {
                            status = Status::FlowError { t, message: format!("auxiliary monitor: {err}") };
                        }
                        break;
                    }
                }
            }
        };
        samples.push(Sample {
            t,
            z: z.iter().copied().collect(),
            residual: problem.residual(z),
            eps,
            envelope: monitors.envelope.as_ref().map(|m| 1.0 / m.mu(t)),
            dist_aux,
            dist_sol: problem.known_solution.as_ref().map(|y| (z - y).norm()),
        });
    }
    Ok(Trajectory {
        method: flow.kind().name().to_string(),
        problem: problem.name.clone(),
        samples,
        status,
        evaluations: sol.evaluations,
    })
}

/// Samples where `dist_aux >= 1/mu`, with `gap = dist_aux - 1/mu`.
pub fn envelope_violations(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for s in &traj.samples {
        let env = s.envelope.ok_or(Error::MissingMonitor("envelope"))?;
        let d = s.dist_aux.ok_or(Error::MissingMonitor("dist_aux"))?;
        if !env.is_finite() || !d.is_finite() {
            return Err(Error::NonFinite(format!("monitor values at t={}", s.t)));
        }
        if d >= env {
            out.push((s.t, d - env));
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl Trajectory {
    pub fn final_sample(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let dim = self.samples.first().map_or(0, |s| s.z.len());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("z_{i}")));
        header.extend(["residual", "eps", "envelope", "dist_aux", "dist_sol"].map(String::from));
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![format!("{:.17e}", s.t)];
            row.extend(s.z.iter().map(|v| format!("{v:.17e}")));
            row.push(format!("{:.17e}", s.residual));
            row.push(opt(s.eps));
            row.push(opt(s.envelope));
            row.push(opt(s.dist_aux));
            row.push(opt(s.dist_sol));
            out.write_record(&row)?;
        }
        out.flush()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": "dsm-traj/1",
            "method": self.method,
            "problem": self.problem,
            "status": self.status,
            "evaluations": self.evaluations,
            "samples": self.samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::problem::{FnOperator, Operator, Problem};
    use crate::schedules::Schedule;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig { t_max: 5.0, ..Default::default() };
        let sol = solve_ivp(|_, y| Ok(-y.clone()), &Vector::from_element(1, 1.0), &cfg, &[], |_, _| false);
        assert_eq!(sol.status, Status::ReachedTmax);
        assert_relative_eq!(*sol.t.last().unwrap(), 5.0);
        assert!((sol.y.last().unwrap()[0] - (-5f64).exp()).abs() < 1e-6);
        assert!(sol.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn stops_are_hit_exactly() {
        let cfg = IntegratorConfig { t_max: 3.0, ..Default::default() };
        let stops = [0.25, 1.0, 1.7, 2.9];
        let sol = solve_ivp(|t, _| Ok(Vector::from_element(1, t.cos())), &Vector::zeros(1), &cfg, &stops, |_, _| false);
        for s in stops {
            let k = sol.t.iter().position(|&t| t == s).expect("stop present");
            assert!((sol.y[k][0] - s.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn rhs_error_becomes_flow_error_status() {
        let cfg = IntegratorConfig { t_max: 3.0, ..Default::default() };
        let sol = solve_ivp(
            |t, y| if t > 1.0 { Err(Error::SolveFailed("boom".into())) } else { Ok(-y.clone()) },
            &Vector::from_element(1, 1.0),
            &cfg,
            &[],
            |_, _| false,
        );
        match sol.status {
            Status::FlowError { t, .. } => assert!(t > 1.0 && t < 1.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tolerance_halving_is_consistent() {
        let coarse = IntegratorConfig { t_max: 10.0, rel_tol: 1e-6, abs_tol: 1e-8, ..Default::default() };
        let fine = IntegratorConfig { rel_tol: 5e-7, abs_tol: 5e-9, ..coarse };
        let f = |t: f64, y: &Vector| Ok(Vector::from_vec(vec![y[1], -y[0] - 0.1 * y[1] + t.sin()]));
        let y0 = Vector::from_vec(vec![1.0, 0.0]);
        let a = solve_ivp(f, &y0, &coarse, &[], |_, _| false);
        let b = solve_ivp(f, &y0, &fine, &[], |_, _| false);
        let diff = (a.y.last().unwrap() - b.y.last().unwrap()).amax();
        assert!(diff < 10.0 * 1e-6, "diff {diff}");
    }

    #[test]
    fn deterministic_trajectories() {
        let op: Arc<dyn Operator> = Arc::new(
            FnOperator::new(1, |x: &Vector| x.map(|v| v * v * v))
                .with_jacobian(|x: &Vector| Matrix::from_element(1, 1, 3.0 * x[0] * x[0])),
        );
        let p = Problem::new("cubic", op, Vector::from_element(1, 1.0)).unwrap();
        let flow = Flow::new(
            crate::flows::FlowKind::RegNewton,
            p,
            Some(Schedule::Power { eps0: 50.0, t0: 5.0, nu: 0.5 }),
            None,
        )
        .unwrap();
        let cfg = IntegratorConfig { t_max: 50.0, ..Default::default() };
        let m = Monitors::for_flow(&flow, None);
        let a = integrate(&flow, &cfg, &m).unwrap();
        let b = integrate(&flow, &cfg, &m).unwrap();
        assert_eq!(a, b);
        assert!(a.samples.iter().all(|s| s.dist_aux.unwrap() >= 0.0));
    }

    #[test]
    fn violations_require_monitors() {
        let traj = Trajectory {
            method: "m".into(),
            problem: "p".into(),
            samples: vec![Sample {
                t: 0.0,
                z: vec![0.0],
                residual: 0.0,
                eps: None,
                envelope: None,
                dist_aux: Some(1.0),
                dist_sol: None,
            }],
            status: Status::ReachedTmax,
            evaluations: 0,
        };
        assert!(matches!(envelope_violations(&traj), Err(Error::MissingMonitor("envelope"))));
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory {
            method: "m".into(),
            problem: "p".into(),
            samples: vec![Sample {
                t: 0.5,
                z: vec![1.0, 2.0],
                residual: 0.1,
                eps: Some(0.2),
                envelope: None,
                dist_aux: None,
                dist_sol: Some(3.0),
            }],
            status: Status::ReachedTmax,
            evaluations: 0,
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,z_0,z_1,residual,eps,envelope,dist_aux,dist_sol");
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[5], "");
        assert_eq!(traj.to_json()["schema"], "dsm-traj/1");
    }
}
