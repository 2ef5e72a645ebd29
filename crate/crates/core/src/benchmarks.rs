//! Built-in problems with known solutions and constants, plus the envelope
//! each admissible (flow, schedule) pair is entitled to.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::FlowKind;
use crate::linalg::{Matrix, Vector};
use crate::problem::{FnOperator, Problem};
use crate::quadrature::log_grid;
use crate::schedules::{check_theorem32, check_theorem33, mu_ode_envelope, Admissibility, Envelope, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkName {
    /// `F(x) = x`, `z0 = 1`.
    ScalarLinear,
    /// `F(x) = x^3`, `z0 = 1`.
    ScalarCubic,
    /// `F(x) = x |x|^(m-1)`, `z0 = 1`.
    ScalarPowerM,
    /// `F(x) = ((x1+x2) + x1^3, (x1+x2) + x2^3)`, singular Jacobian at `y = 0`.
    Monotone2d,
    /// `F(x) = phi(x1+x2)/2 (1, 1)`, `phi(s) = s + s^3`; rank one everywhere.
    RankDeficient2d,
    /// `F(x) = diag(1, 1e-4) x + 0.2 x1^3 e1` with `z0 - y = F'(y) v`.
    Sourcewise2d,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 6] = [
        BenchmarkName::ScalarLinear,
        BenchmarkName::ScalarCubic,
        BenchmarkName::ScalarPowerM,
        BenchmarkName::Monotone2d,
        BenchmarkName::RankDeficient2d,
        BenchmarkName::Sourcewise2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkName::ScalarLinear => "scalar-linear",
            BenchmarkName::ScalarCubic => "scalar-cubic",
            BenchmarkName::ScalarPowerM => "scalar-power-m",
            BenchmarkName::Monotone2d => "monotone-2d",
            BenchmarkName::RankDeficient2d => "rank-deficient-2d",
            BenchmarkName::Sourcewise2d => "sourcewise-2d",
        }
    }
}

impl fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkName::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown benchmark '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    /// Exponent of `scalar-power-m`.
    pub m: u32,
    /// Multiplier of the source element `v` of `sourcewise-2d`.
    pub v_scale: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams { m: 3, v_scale: 1.0 }
    }
}

impl BenchmarkParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if !(self.v_scale > 0.0 && self.v_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("v_scale must be positive and finite, got {}", self.v_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: BenchmarkName,
    pub problem: Problem,
    /// `a` with `(F(h), h - y) >= c |h - y|^(1+a)`; the expected rate is `eps^(1/a)`.
    pub growth_exponent: Option<f64>,
    /// `v` with `z0 - y = F'(y) v`.
    pub source: Option<Vector>,
    /// A schedule admissible for the convergence theorem of the default method.
    pub schedule: Schedule,
    pub method: FlowKind,
}

/// `eps0` of `Power { t0, nu }` giving twice the `eps(0)` the Newton-flow
/// conditions require.
fn newton_eps0(n2: f64, dist0: f64, t0: f64, nu: f64) -> f64 {
    let c = nu / t0;
    let need = n2 * dist0 / (1.0 - c) * f64::max(1.0, 2.0 * c / (1.0 - c));
    (2.0 * need).max(1.0) * t0.powf(nu)
}

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Arc<FnOperator> {
    Arc::new(
        FnOperator::new(1, move |x: &Vector| Vector::from_element(1, f(x[0])))
            .with_jacobian(move |x: &Vector| Matrix::from_element(1, 1, df(x[0]))),
    )
}

pub fn benchmark(name: BenchmarkName, params: &BenchmarkParams) -> Result<Benchmark> {
    params.validate()?;
    let one = Vector::from_element(1, 1.0);
    let zero1 = Vector::zeros(1);
    let b = match name {
        BenchmarkName::ScalarLinear => Benchmark {
            name,
            problem: Problem::new(name.name(), scalar(|x| x, |_| 1.0), one)?
                .with_constants(Some(1.0), Some(0.0))?
                .with_solution(zero1)?,
            growth_exponent: Some(1.0),
            source: None,
            schedule: Schedule::Power { eps0: 1.0, t0: 2.0, nu: 0.5 },
            method: FlowKind::RegSimple,
        },
        BenchmarkName::ScalarCubic => Benchmark {
            name,
            problem: Problem::new(name.name(), scalar(|x| x * x * x, |x| 3.0 * x * x), one)?
                .with_constants(Some(3.0), Some(6.0))?
                .with_solution(zero1)?,
            growth_exponent: Some(3.0),
            source: None,
            schedule: Schedule::Power { eps0: 50.0, t0: 5.0, nu: 0.5 },
            method: FlowKind::RegNewton,
        },
        BenchmarkName::ScalarPowerM => {
            let m = params.m as f64;
            // N1 and N2 are bounds on |x| <= 1; F'' is unbounded near 0 for 1 < m < 2 only.
            let n2 = if params.m == 1 { 0.0 } else { m * (m - 1.0) };
            let op = scalar(move |x| x * x.abs().powf(m - 1.0), move |x| m * x.abs().powf(m - 1.0));
            Benchmark {
                name,
                problem: Problem::new(format!("{}[m={}]", name.name(), params.m), op, one)?
                    .with_constants(Some(m), Some(n2))?
                    .with_solution(zero1)?,
                growth_exponent: Some(m),
                source: None,
                schedule: Schedule::Power { eps0: newton_eps0(n2, 1.0, 5.0, 0.5), t0: 5.0, nu: 0.5 },
                method: if params.m == 1 { FlowKind::RegSimple } else { FlowKind::RegNewton },
            }
        }
        BenchmarkName::Monotone2d => {
            let op = FnOperator::new(2, |x: &Vector| {
                let s = x[0] + x[1];
                Vector::from_vec(vec![s + x[0].powi(3), s + x[1].powi(3)])
            })
            .with_jacobian(|x: &Vector| {
                Matrix::from_row_slice(2, 2, &[1.0 + 3.0 * x[0] * x[0], 1.0, 1.0, 1.0 + 3.0 * x[1] * x[1]])
            });
            let z0 = Vector::from_vec(vec![1.0, -0.5]);
            Benchmark {
                name,
                // Bounds on the box |x_i| <= 1.
                problem: Problem::new(name.name(), Arc::new(op), z0)?
                    .with_constants(Some(5.0), Some(6.0))?
                    .with_solution(Vector::zeros(2))?,
                growth_exponent: None,
                source: None,
                schedule: Schedule::Power { eps0: 50.0, t0: 5.0, nu: 0.5 },
                method: FlowKind::RegNewton,
            }
        }
        BenchmarkName::RankDeficient2d => {
            let op = FnOperator::new(2, |x: &Vector| {
                let s = x[0] + x[1];
                Vector::from_element(2, 0.5 * (s + s * s * s))
            })
            .with_jacobian(|x: &Vector| {
                let s = x[0] + x[1];
                Matrix::from_element(2, 2, 0.5 * (1.0 + 3.0 * s * s))
            });
            let z0 = Vector::from_vec(vec![1.0, 0.5]);
            // The regularized solutions converge to the projection of z0 onto x1 + x2 = 0.
            let s0 = z0[0] + z0[1];
            let y = &z0 - Vector::from_element(2, 0.5 * s0);
            Benchmark {
                name,
                // Bounds on |x1 + x2| <= 1.5: |F'| = 1 + 3s^2, |F''| = 6 sqrt(2) |s|.
                problem: Problem::new(name.name(), Arc::new(op), z0)?
                    .with_constants(Some(1.0 + 3.0 * 1.5 * 1.5), Some(6.0 * 2f64.sqrt() * 1.5))?
                    .with_solution(y)?,
                growth_exponent: None,
                source: None,
                schedule: Schedule::Power { eps0: 50.0, t0: 5.0, nu: 0.5 },
                method: FlowKind::RegNewton,
            }
        }
        BenchmarkName::Sourcewise2d => {
            let op = FnOperator::new(2, |x: &Vector| Vector::from_vec(vec![x[0] + 0.2 * x[0].powi(3), 1e-4 * x[1]]))
                .with_jacobian(|x: &Vector| Matrix::from_row_slice(2, 2, &[1.0 + 0.6 * x[0] * x[0], 0.0, 0.0, 1e-4]));
            let v = Vector::from_vec(vec![0.5, 0.5]) * params.v_scale;
            let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-4]));
            let z0 = &a * &v;
            Benchmark {
                name,
                // Bounds on |x1| <= 1.
                problem: Problem::new(name.name(), Arc::new(op), z0)?
                    .with_constants(Some(1.6), Some(1.2))?
                    .with_solution(Vector::zeros(2))?,
                growth_exponent: None,
                source: Some(v),
                schedule: Schedule::Power { eps0: 10.0, t0: 5.0, nu: 1.0 },
                method: FlowKind::RegNewton,
            }
        }
    };
    Ok(b)
}

/// Schedule for rate experiments: the benchmark's own schedule under a source
/// condition, otherwise `Power { t0: 10, nu: 1 }` with `eps(0)` twice the
/// Newton-flow minimum, so that `eps` decays like `1/t` while the Newton-flow
/// conditions hold.
pub fn rate_schedule(b: &Benchmark) -> Schedule {
    if b.source.is_some() {
        return b.schedule;
    }
    let (t0, nu) = (10.0, 1.0);
    let n2 = b.problem.n2.unwrap_or(0.0);
    let dist0 = b.problem.dist0().unwrap_or(0.0);
    Schedule::Power { eps0: newton_eps0(n2, dist0, t0, nu), t0, nu }
}

/// Admissibility of `s` for the Newton-flow and simple-flow theorems.
pub fn preflight(problem: &Problem, s: &Schedule) -> Result<Vec<Admissibility>> {
    s.validate()?;
    let mut rows = Vec::new();
    if let (Some(n2), Some(d)) = (problem.n2, problem.dist0()) {
        rows.push(check_theorem32(s, n2, d));
    }
    rows.push(check_theorem33(s));
    Ok(rows)
}

/// Envelope certified for `kind` under `s`, if one of the theorems applies:
/// `lambda/eps` for the regularized Newton flow with `N2 > 0`, the ODE-defined
/// envelope for the simple flow.
pub fn certified_envelope(problem: &Problem, kind: FlowKind, s: &Schedule, t_max: f64) -> Result<Option<Envelope>> {
    let Some(dist0) = problem.dist0() else {
        return Ok(None);
    };
    match kind {
        FlowKind::RegNewton => {
            let Some(n2) = problem.n2 else { return Ok(None) };
            Ok(check_theorem32(s, n2, dist0).lambda.map(|lambda| Envelope::LambdaOverEps { lambda, schedule: *s }))
        }
        FlowKind::RegSimple if dist0 > 0.0 && check_theorem33(s).passes => {
            let grid = log_grid(t_max.max(1.0), 2000);
            mu_ode_envelope(s, 2.0 * dist0, 0.5 / dist0, &grid).map(Some)
        }
        _ => Ok(None),
    }
}

/// `(1 - C_eps)/N2 + 4|v|/(2 - N2 |v|)`, the coefficient of the linear rate
/// under the source condition; requires `N2 |v| < 2`.
pub fn source_rate_coefficient(b: &Benchmark, s: &Schedule) -> Result<f64> {
    let v = b.source.as_ref().ok_or(Error::MissingConstants("source element v"))?;
    let n2 = b.problem.require_n2()?;
    let vn = v.norm();
    if !(n2 * vn < 2.0) {
        return Err(Error::ConditionViolated(format!("N2 |v| = {} must be below 2", n2 * vn)));
    }
    let c = s.c_eps();
    if !(c < 1.0) || n2 == 0.0 {
        return Err(Error::ConditionViolated(format!("C_eps = {c} must be below 1 with N2 > 0")));
    }
    Ok((1.0 - c) / n2 + 4.0 * vn / (2.0 - n2 * vn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::auxiliary_solution;
    use crate::problem::fd_jacobian;
    use approx::assert_relative_eq;

    fn all() -> Vec<Benchmark> {
        BenchmarkName::ALL.iter().map(|&n| benchmark(n, &BenchmarkParams::default()).unwrap()).collect()
    }

    #[test]
    fn names_round_trip() {
        for n in BenchmarkName::ALL {
            assert_eq!(n.name().parse::<BenchmarkName>().unwrap(), n);
        }
        assert!("nope".parse::<BenchmarkName>().is_err());
    }

    #[test]
    fn known_solutions_are_zeros() {
        for b in all() {
            let y = b.problem.known_solution.clone().unwrap();
            assert!(b.problem.residual(&y) < 1e-15, "{}", b.name);
        }
    }

    #[test]
    fn jacobians_match_differences() {
        for b in all() {
            let x = b.problem.z0.clone() * 0.7;
            let exact = b.problem.jacobian(&x);
            let fd = fd_jacobian(|v| b.problem.eval(v), &x);
            assert!((&exact - &fd).amax() < 1e-6 * (1.0 + exact.amax()), "{}", b.name);
        }
    }

    #[test]
    fn default_schedules_pass_preflight() {
        for b in all() {
            let rows = preflight(&b.problem, &b.schedule).unwrap();
            let needed = if b.method == FlowKind::RegNewton { "newton" } else { "simple" };
            let row = rows.iter().find(|r| r.theorem == needed).unwrap();
            assert!(row.passes, "{}: {:?}", b.name, row.violated);
        }
    }

    #[test]
    fn rate_schedules_are_newton_admissible() {
        for m in 1..=5 {
            let b = benchmark(BenchmarkName::ScalarPowerM, &BenchmarkParams { m, v_scale: 1.0 }).unwrap();
            let s = rate_schedule(&b);
            assert!(matches!(s, Schedule::Power { nu, .. } if nu == 1.0));
            assert!(check_theorem32(&s, b.problem.n2.unwrap(), 1.0).passes, "m={m}");
        }
        let b = benchmark(BenchmarkName::Sourcewise2d, &BenchmarkParams::default()).unwrap();
        assert_eq!(rate_schedule(&b), b.schedule);
    }

    #[test]
    fn sourcewise_representation_holds() {
        let b = benchmark(BenchmarkName::Sourcewise2d, &BenchmarkParams::default()).unwrap();
        let y = b.problem.known_solution.clone().unwrap();
        let v = b.source.clone().unwrap();
        let lhs = &b.problem.z0 - &y;
        let rhs = b.problem.jacobian(&y) * &v;
        assert!((lhs - rhs).norm() < 1e-16);
        let coef = source_rate_coefficient(&b, &b.schedule).unwrap();
        assert_relative_eq!(coef, 0.8 / 1.2 + 4.0 * 0.5f64.sqrt() / (2.0 - 1.2 * 0.5f64.sqrt()), max_relative = 1e-14);
    }

    #[test]
    fn rank_deficient_tikhonov_limit_is_projection() {
        let b = benchmark(BenchmarkName::RankDeficient2d, &BenchmarkParams::default()).unwrap();
        let x = auxiliary_solution(&b.problem, 1e-8, &b.problem.z0).unwrap();
        let y = b.problem.known_solution.clone().unwrap();
        assert!((x - y).norm() < 1e-6);
    }

    #[test]
    fn power_m_constants() {
        let b = benchmark(BenchmarkName::ScalarPowerM, &BenchmarkParams { m: 4, v_scale: 1.0 }).unwrap();
        assert_eq!(b.problem.n2, Some(12.0));
        let x = Vector::from_element(1, -0.5);
        assert_relative_eq!(b.problem.eval(&x)[0], -0.0625);
        assert!(BenchmarkParams { m: 0, v_scale: 1.0 }.validate().is_err());
    }

    #[test]
    fn envelopes_follow_the_method() {
        let cubic = benchmark(BenchmarkName::ScalarCubic, &BenchmarkParams::default()).unwrap();
        let e = certified_envelope(&cubic.problem, FlowKind::RegNewton, &cubic.schedule, 100.0).unwrap().unwrap();
        assert_eq!(e.form(), "lambda-over-eps");
        // lambda = N2/(1 - C_eps) with C_eps = 0.1.
        assert_relative_eq!(e.mu(0.0), 6.0 / 0.9 / cubic.schedule.eps(0.0), max_relative = 1e-14);
        let lin = benchmark(BenchmarkName::ScalarLinear, &BenchmarkParams::default()).unwrap();
        let e = certified_envelope(&lin.problem, FlowKind::RegSimple, &lin.schedule, 100.0).unwrap().unwrap();
        assert_eq!(e.form(), "ode-defined");
        assert!(certified_envelope(&lin.problem, FlowKind::RegNewton, &lin.schedule, 100.0).unwrap().is_none());
        let exp = Schedule::Exp { eps0: 50.0, nu: 0.1 };
        assert!(certified_envelope(&cubic.problem, FlowKind::RegNewton, &exp, 100.0).unwrap().is_none());
    }
}
