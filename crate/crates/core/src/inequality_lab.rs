//! Numeric checks of the Riccati majorant, the comparison lemma and the
//! decay lemma, each exercised through its saturating ODE.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::integrator::{solve_ivp, IntegratorConfig, Status};
use crate::linalg::Vector;
use crate::quadrature::{integrate, log_grid};
use crate::schedules::{check_riccati_conditions, Envelope, RiccatiReport, ScalarFn};

/// Coefficients of `v' <= -gamma v + sigma v^2 + beta` and a candidate `mu`.
#[derive(Clone)]
pub struct RiccatiSetup {
    pub gamma: ScalarFn,
    pub sigma: ScalarFn,
    pub beta: ScalarFn,
    pub mu: Envelope,
    pub v0: f64,
}

impl fmt::Debug for RiccatiSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RiccatiSetup").field("mu", &self.mu).field("v0", &self.v0).finish_non_exhaustive()
    }
}

impl RiccatiSetup {
    pub fn new(
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        beta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu: Envelope,
        v0: f64,
    ) -> Self {
        RiccatiSetup { gamma: Arc::new(gamma), sigma: Arc::new(sigma), beta: Arc::new(beta), mu, v0 }
    }

    pub fn check_conditions(&self, t_grid: &[f64]) -> Result<RiccatiReport> {
        check_riccati_conditions(&*self.gamma, &*self.sigma, &*self.beta, &self.mu, self.v0, t_grid)
    }

    /// `gamma - mu'/mu`.
    fn slack(&self, t: f64) -> f64 {
        (self.gamma)(t) - self.mu.mu_dot(t) / self.mu.mu(t)
    }

    /// Largest `sigma` admitted by `mu`.
    pub fn sigma_max(&self, t: f64) -> f64 {
        0.5 * self.mu.mu(t) * self.slack(t)
    }

    /// Largest `beta` admitted by `mu`.
    pub fn beta_max(&self, t: f64) -> f64 {
        self.slack(t) / (2.0 * self.mu.mu(t))
    }
}

/// Closed-form majorant at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MajorantPoint {
    pub t: f64,
    /// `int_0^t gamma`.
    pub gamma_integral: f64,
    /// `1 - (1/(1 - mu(0)v0) + (1/2) int_0^t (gamma - mu'/mu))^{-1}`.
    pub bracket: f64,
    /// Majorant of `w = v e^{int gamma}`.
    pub u: f64,
    /// Majorant of `v` itself, `bracket / mu(t)`.
    pub v: f64,
}

fn initial_product(setup: &RiccatiSetup) -> Result<f64> {
    let m0 = setup.mu.mu(0.0) * setup.v0;
    if !m0.is_finite() {
        return Err(Error::NonFinite("mu(0) v(0)".into()));
    }
    if m0 >= 1.0 {
        return Err(Error::ConditionViolated(format!("μ(0)v(0) = {m0} ≥ 1")));
    }
    Ok(m0)
}

fn majorant_point(setup: &RiccatiSetup, t: f64, gamma_integral: f64, m0: f64) -> Result<MajorantPoint> {
    let inner = 1.0 / (1.0 - m0) + 0.5 * (gamma_integral - setup.mu.log_growth(t));
    if !(inner > 0.0) {
        return Err(Error::ConditionViolated(format!("majorant denominator {inner} ≤ 0 at t={t}")));
    }
    let bracket = 1.0 - 1.0 / inner;
    let mu = setup.mu.mu(t);
    let v = bracket / mu;
    let u = gamma_integral.exp() * v;
    if !v.is_finite() || !bracket.is_finite() {
        return Err(Error::NonFinite(format!("majorant at t={t}")));
    }
    Ok(MajorantPoint { t, gamma_integral, bracket, u, v })
}

/// `u(t) = e^{int gamma}/mu(t) [1 - (1/(1 - mu(0)v0) + (1/2) int (gamma - mu'/mu))^{-1}]`.
///
/// `int gamma` uses adaptive Simpson; `int mu'/mu = ln(mu(t)/mu(0))` is exact.
pub fn riccati_majorant(setup: &RiccatiSetup, t: f64) -> Result<f64> {
    riccati_majorant_point(setup, t).map(|p| p.u)
}

pub fn riccati_majorant_point(setup: &RiccatiSetup, t: f64) -> Result<MajorantPoint> {
    let m0 = initial_product(setup)?;
    let g = integrate(|s| (setup.gamma)(s), 0.0, t)?;
    majorant_point(setup, t, g, m0)
}

/// [`riccati_majorant_point`] on an increasing grid starting at 0, with the
/// `gamma` integral accumulated interval by interval.
pub fn riccati_majorant_on_grid(setup: &RiccatiSetup, grid: &[f64]) -> Result<Vec<MajorantPoint>> {
    check_grid(grid)?;
    let m0 = initial_product(setup)?;
    let mut g = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    let mut prev = 0.0;
    for &t in grid {
        g += integrate(|s| (setup.gamma)(s), prev, t)?;
        prev = t;
        out.push(majorant_point(setup, t, g, m0)?);
    }
    Ok(out)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("grid must start at 0 and increase strictly".into()));
    }
    Ok(())
}

fn oracle_config(t_max: f64) -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        h_init: 1e-4,
        h_min: 1e-14,
        h_max: t_max.max(1.0),
        t_max,
        residual_stop: 0.0,
        max_steps: 10_000_000,
    }
}

/// Solves a scalar ODE and returns its values at `grid` (which must start at
/// 0 and end at the horizon).
fn scalar_ode_on_grid(rhs: impl Fn(f64, f64) -> f64, y0: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let t_max = *grid.last().unwrap();
    if t_max == 0.0 {
        return Ok(vec![y0]);
    }
    let sol = solve_ivp(
        |t, y: &Vector| {
            let v = rhs(t, y[0]);
            if v.is_finite() {
                Ok(Vector::from_element(1, v))
            } else {
                Err(Error::NonFinite(format!("scalar ODE rhs at t={t}")))
            }
        },
        &Vector::from_element(1, y0),
        &oracle_config(t_max),
        grid,
        |_, _| false,
    );
    match sol.status {
        Status::ReachedTmax => {}
        Status::FlowError { message, .. } => return Err(Error::NonFinite(message)),
        other => return Err(Error::SolveFailed(format!("scalar ODE stopped with {}", other.label()))),
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for &t in grid {
        while sol.t[k] < t {
            k += 1;
        }
        out.push(sol.y[k][0]);
    }
    Ok(out)
}

/// The majorant ODE in `v` scale,
/// `v' = (mu/2)(gamma - mu'/mu) v^2 + (gamma - mu'/mu)/(2 mu) - gamma v`,
/// integrated numerically on `grid`.
pub fn riccati_ode_oracle(setup: &RiccatiSetup, grid: &[f64]) -> Result<Vec<f64>> {
    initial_product(setup)?;
    scalar_ode_on_grid(
        |t, v| setup.sigma_max(t) * v * v + setup.beta_max(t) - (setup.gamma)(t) * v,
        setup.v0,
        grid,
    )
}

/// The same majorant ODE in `w` scale, `u' = a u^2 + b` with
/// `a = (mu/2) e^{-Gamma}(gamma - mu'/mu)`, `b = e^{Gamma}(gamma - mu'/mu)/(2 mu)`.
pub fn riccati_ode_oracle_w(setup: &RiccatiSetup, grid: &[f64]) -> Result<Vec<f64>> {
    initial_product(setup)?;
    check_grid(grid)?;
    let t_max = *grid.last().unwrap();
    let sol = solve_ivp(
        |t, y: &Vector| {
            let gamma_int = y[1];
            let a = setup.sigma_max(t) * (-gamma_int).exp();
            let b = setup.beta_max(t) * gamma_int.exp();
            Ok(Vector::from_vec(vec![a * y[0] * y[0] + b, (setup.gamma)(t)]))
        },
        &Vector::from_vec(vec![setup.v0, 0.0]),
        &oracle_config(t_max),
        grid,
        |_, _| false,
    );
    if sol.status != Status::ReachedTmax {
        return Err(Error::SolveFailed(format!("w-scale oracle stopped with {}", sol.status.label())));
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut k = 0;
    for &t in grid {
        while sol.t[k] < t {
            k += 1;
        }
        out.push(sol.y[k][0]);
    }
    Ok(out)
}

/// Solution of the saturated inequality `v' = -gamma v + sigma v^2 + beta`.
///
/// Integrated as `y = mu v`, which stays of order one when `v` decays like
/// `1/mu`.
pub fn saturating_trajectory(setup: &RiccatiSetup, grid: &[f64]) -> Result<Vec<f64>> {
    let mu = &setup.mu;
    let y = scalar_ode_on_grid(
        |t, y| {
            let m = mu.mu(t);
            (mu.mu_dot(t) / m - (setup.gamma)(t)) * y + (setup.sigma)(t) / m * y * y + m * (setup.beta)(t)
        },
        mu.mu(0.0) * setup.v0,
        grid,
    )?;
    Ok(y.iter().zip(grid).map(|(y, &t)| y / mu.mu(t)).collect())
}

/// Max of `|v_closed - v_ode|` over a uniform grid of `[0, t_max]`.
pub fn riccati_oracle_deviation(setup: &RiccatiSetup, t_max: f64, points: usize) -> Result<f64> {
    let grid: Vec<f64> = (0..points.max(2)).map(|k| t_max * k as f64 / (points.max(2) - 1) as f64).collect();
    let closed = riccati_majorant_on_grid(setup, &grid)?;
    let ode = riccati_ode_oracle(setup, &grid)?;
    Ok(closed.iter().zip(&ode).map(|(c, o)| (c.v - o).abs()).fold(0.0, f64::max))
}

/// Parameters of the power-law family
/// `gamma = c1 (1+t)^nu1`, `sigma = c2 (1+t)^nu2`, `beta = c3 (1+t)^nu3`,
/// `mu = c (1+t)^nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerFamily {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub c: f64,
    pub nu: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFamilyReport {
    /// The chosen `(c, nu)` satisfies the exponent and constant conditions.
    pub chosen_admissible: bool,
    /// Some `(c, nu)` exists for these coefficients.
    pub mu_exists: bool,
    /// Conditions under which `v(t) -> 0`.
    pub decay: bool,
    /// The canonical choice `nu = nu2 - nu1`, `c = 2 c2/(c1 + nu1 - nu2)`.
    pub canonical: Option<(f64, f64)>,
    pub failed: Vec<String>,
}

/// Pure inequality arithmetic for the power-law family.
pub fn validate_power_family(p: &PowerFamily) -> Result<PowerFamilyReport> {
    let vals = [p.c1, p.c2, p.c3, p.nu1, p.nu2, p.nu3, p.c, p.nu, p.v0];
    crate::error::ensure_finite(&vals, "power family parameters")?;
    if !(p.c2 > 0.0 && p.c3 > 0.0 && p.c > 0.0 && p.v0 >= 0.0) {
        return Err(Error::InvalidParameter("need c2 > 0, c3 > 0, c > 0, v0 >= 0".into()));
    }
    let mut failed = Vec::new();
    let mut check = |ok: bool, label: &str| {
        if !ok {
            failed.push(label.to_string());
        }
        ok
    };
    let chosen = [
        check(p.nu1 >= -1.0, "ν1 ≥ −1"),
        check(p.nu2 - p.nu1 <= p.nu, "ν2 − ν1 ≤ ν"),
        check(p.nu <= p.nu1 - p.nu3, "ν ≤ ν1 − ν3"),
        check(p.c1 > p.nu, "c1 > ν"),
        check(2.0 * p.c2 / (p.c1 - p.nu) <= p.c, "2c2/(c1 − ν) ≤ c"),
        check(p.c <= (p.c1 - p.nu) / (2.0 * p.c3), "c ≤ (c1 − ν)/(2c3)"),
        check(p.c * p.v0 < 1.0, "c v(0) < 1"),
    ]
    .iter()
    .all(|&b| b);
    let slack = p.c1 + p.nu1 - p.nu2;
    let exists = [
        check(p.nu1 >= -1.0, "ν1 ≥ −1 (existence)"),
        check(p.nu2 + p.nu3 <= 2.0 * p.nu1, "ν2 + ν3 ≤ 2ν1"),
        check(p.c1 > p.nu2 - p.nu1, "c1 > ν2 − ν1"),
        check(2.0 * (p.c2 * p.c3).sqrt() <= slack, "2√(c2c3) ≤ c1 + ν1 − ν2"),
        check(2.0 * p.c2 * p.v0 < slack, "2c2 v(0) < c1 + ν1 − ν2"),
    ]
    .iter()
    .all(|&b| b);
    let decay = [
        check(p.nu1 > p.nu3, "ν1 > ν3 (decay)"),
        check(2.0 * (p.c2 * p.c3).sqrt() <= p.c1, "2√(c2c3) ≤ c1 (decay)"),
        check(2.0 * p.c2 * p.v0 < p.c1, "2c2 v(0) < c1 (decay)"),
    ]
    .iter()
    .all(|&b| b)
        && exists;
    let canonical = (slack > 0.0).then(|| (p.nu2 - p.nu1, 2.0 * p.c2 / slack));
    Ok(PowerFamilyReport { chosen_admissible: chosen, mu_exists: exists, decay, canonical, failed })
}

impl PowerFamily {
    pub fn setup(&self) -> RiccatiSetup {
        let p = *self;
        RiccatiSetup::new(
            move |t| p.c1 * (1.0 + t).powf(p.nu1),
            move |t| p.c2 * (1.0 + t).powf(p.nu2),
            move |t| p.c3 * (1.0 + t).powf(p.nu3),
            Envelope::Power { c: p.c, nu: p.nu },
            p.v0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub passes: bool,
    /// `max |u - w|` over the grid.
    pub max_gap: f64,
    /// `max (w - u)`; positive values are violations before tolerance.
    pub max_excess: f64,
    pub lattice_points: usize,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
}

/// Integrates `w' = f(t, w)` and `u' = g(t, u)` on a shared grid and checks
/// `u >= w - 1e-9 max(1, |u|)`.
///
/// The precondition `f(t, x) <= g(t, x)` is sampled on a lattice of 17 values
/// spanning both trajectories at each of 64 grid times.
pub fn comparison_check(
    f: impl Fn(f64, f64) -> f64,
    g: impl Fn(f64, f64) -> f64,
    w0: f64,
    u0: f64,
    t_max: f64,
) -> Result<ComparisonReport> {
    if !(w0 <= u0) {
        return Err(Error::InvalidParameter(format!("need w0 <= u0, got {w0} > {u0}")));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidParameter("t_max must be positive".into()));
    }
    let grid = log_grid(t_max, 256);
    let w = scalar_ode_on_grid(&f, w0, &grid)?;
    let u = scalar_ode_on_grid(&g, u0, &grid)?;

    let mut lattice_points = 0;
    let stride = (grid.len() / 64).max(1);
    for k in (0..grid.len()).step_by(stride) {
        let t = grid[k];
        let lo = w[k].min(u[k]);
        let hi = w[k].max(u[k]);
        let pad = 0.1 * (1.0 + (hi - lo) + lo.abs().max(hi.abs()) * 1e-3);
        for j in 0..17 {
            let x = (lo - pad) + (hi - lo + 2.0 * pad) * j as f64 / 16.0;
            let (fx, gx) = (f(t, x), g(t, x));
            lattice_points += 1;
            if !(fx <= gx + 1e-12 * fx.abs().max(gx.abs()).max(1.0)) {
                return Err(Error::PreconditionSampleFailed { t, w: x, u: x, f: fx, g: gx });
            }
        }
    }

    let mut max_gap = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut passes = true;
    for (wi, ui) in w.iter().zip(&u) {
        max_gap = max_gap.max((ui - wi).abs());
        max_excess = max_excess.max(wi - ui);
        if *ui < wi - 1e-9 * ui.abs().max(1.0) {
            passes = false;
        }
    }
    Ok(ComparisonReport { passes, max_gap, max_excess, lattice_points, t: grid, w, u })
}

/// Data of `u' <= -a(t) f(u) + b(t)`.
#[derive(Clone)]
pub struct AppendixSetup {
    pub a: ScalarFn,
    pub b: ScalarFn,
    pub f: ScalarFn,
    pub u0: f64,
    /// `f(u) >= c > 0` for `u >= 1`; asserted by the caller.
    pub has_condition4: bool,
}

impl fmt::Debug for AppendixSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AppendixSetup")
            .field("u0", &self.u0)
            .field("has_condition4", &self.has_condition4)
            .finish_non_exhaustive()
    }
}

impl AppendixSetup {
    pub fn new(
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u0: f64,
        has_condition4: bool,
    ) -> Self {
        AppendixSetup { a: Arc::new(a), b: Arc::new(b), f: Arc::new(f), u0, has_condition4 }
    }

    /// `f(u) = u` below 1 and `e^{1-u}` above, `a = 1`, `b = 3/(t + c)`,
    /// `u0 = 1 + log c`.
    pub fn counterexample(c: f64) -> Self {
        AppendixSetup::new(
            |_| 1.0,
            move |t| 3.0 / (t + c),
            |u| if u <= 1.0 { u } else { (1.0 - u).exp() },
            1.0 + c.ln(),
            false,
        )
    }

    /// Counterexample data with `f(u) = min(u, 1)`.
    pub fn counterexample_repaired(c: f64) -> Self {
        AppendixSetup::new(|_| 1.0, move |t| 3.0 / (t + c), |u| u.min(1.0), 1.0 + c.ln(), true)
    }

    fn validate(&self, grid: &[f64]) -> Result<()> {
        if !(self.u0 >= 0.0) || !self.u0.is_finite() {
            return Err(Error::InvalidParameter(format!("u0 must be nonnegative, got {}", self.u0)));
        }
        for &t in grid {
            let (a, b) = ((self.a)(t), (self.b)(t));
            if !(a > 0.0) || !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidParameter(format!("need a > 0, b >= 0 at t={t}: a={a}, b={b}")));
            }
        }
        if (self.f)(0.0) != 0.0 {
            return Err(Error::InvalidParameter("need f(0) = 0".into()));
        }
        let top = 10.0 * self.u0.max(1.0);
        for k in 1..=200 {
            let u = top * k as f64 / 200.0;
            if !((self.f)(u) > 0.0) {
                return Err(Error::InvalidParameter(format!("need f(u) > 0 at u={u}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppendixReport {
    pub decays: bool,
    pub u_final: f64,
    pub threshold: f64,
    pub has_condition4: bool,
    pub trace: Vec<(f64, f64)>,
}

/// Integrates `u' = -a f(u) + b` and reports whether
/// `u(t_max) < 0.01 max(1, u0)`.
pub fn appendix_decay_check(setup: &AppendixSetup, t_max: f64) -> Result<AppendixReport> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidParameter("t_max must be positive".into()));
    }
    let grid = log_grid(t_max, 512);
    setup.validate(&grid)?;
    let u = scalar_ode_on_grid(|t, u| -(setup.a)(t) * (setup.f)(u) + (setup.b)(t), setup.u0, &grid)?;
    let u_final = *u.last().unwrap();
    if !u_final.is_finite() {
        return Err(Error::NonFinite("appendix trajectory".into()));
    }
    let threshold = 0.01 * setup.u0.max(1.0);
    Ok(AppendixReport {
        decays: u_final < threshold,
        u_final,
        threshold,
        has_condition4: setup.has_condition4,
        trace: grid.into_iter().zip(u).collect(),
    })
}

/// Power-law family with `c1 = 4`, `c2 = c3 = 1`, zero exponents, `mu = 1`,
/// `v0 = 1/2`.
pub fn example1_params() -> PowerFamily {
    PowerFamily { c1: 4.0, c2: 1.0, c3: 1.0, nu1: 0.0, nu2: 0.0, nu3: 0.0, c: 1.0, nu: 0.0, v0: 0.5 }
}

/// `gamma = 2`, `mu = e^t`, `sigma = sigma0 e^t`, `beta = beta0 e^{-t}`, `v0 = 1/2`.
pub fn example2_setup(sigma0: f64, beta0: f64) -> RiccatiSetup {
    RiccatiSetup::new(
        |_| 2.0,
        move |t| sigma0 * t.exp(),
        move |t| beta0 * (-t).exp(),
        Envelope::Exponential { mu0: 1.0, nu: 1.0 },
        0.5,
    )
}

/// `gamma = 1/sqrt(log(t + t0))`, `mu = c log(t + t0)`, with `sigma` and
/// `beta` at `fraction` of their admissible maxima.
pub fn example3_setup(t0: f64, c: f64, fraction: f64, v0: f64) -> RiccatiSetup {
    let bound = move |t: f64| (t + t0).ln().sqrt() - 1.0 / (t + t0);
    RiccatiSetup::new(
        move |t| 1.0 / (t + t0).ln().sqrt(),
        move |t| fraction * 0.5 * c * bound(t),
        move |t| fraction * bound(t) / (2.0 * c * (t + t0).ln().powi(2)),
        Envelope::Logarithmic { c, t0 },
        v0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    RiccatiExample1,
    RiccatiExample2,
    RiccatiExample3,
    Comparison,
    Appendix,
    AppendixCounterexample,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::RiccatiExample1,
        Scenario::RiccatiExample2,
        Scenario::RiccatiExample3,
        Scenario::Comparison,
        Scenario::Appendix,
        Scenario::AppendixCounterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::RiccatiExample1 => "riccati-example1",
            Scenario::RiccatiExample2 => "riccati-example2",
            Scenario::RiccatiExample3 => "riccati-example3",
            Scenario::Comparison => "comparison",
            Scenario::Appendix => "appendix",
            Scenario::AppendixCounterexample => "appendix-counterexample",
        }
    }
}

impl Scenario {
    /// 1000, except 100 for the exponential family whose coefficients
    /// overflow past `t = 709`.
    pub fn default_horizon(self) -> f64 {
        match self {
            Scenario::RiccatiExample2 => 100.0,
            _ => 1e3,
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario '{s}'")))
    }
}

/// Scenario outcome: pass flag, JSON details and a `(t, u)` trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub passes: bool,
    pub details: serde_json::Value,
    pub trace: Vec<(f64, f64)>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "schema": "dsm-ineq/1",
            "scenario": self.scenario,
            "passes": self.passes,
            "details": self.details,
        })
    }
}

/// Horizon of the closed-form vs ODE comparison.
pub const ORACLE_HORIZON: f64 = 10.0;

fn riccati_scenario(name: &str, setup: &RiccatiSetup, t_max: f64, extra: serde_json::Value) -> Result<ScenarioReport> {
    let grid = log_grid(t_max, 512);
    let conditions = setup.check_conditions(&grid)?;
    let points = riccati_majorant_on_grid(setup, &grid)?;
    let m0 = setup.mu.mu(0.0) * setup.v0;
    let below_envelope = points.iter().all(|p| p.v < 1.0 / setup.mu.mu(p.t));
    let bracket_ok = points.iter().all(|p| p.bracket < 1.0 && p.bracket >= m0 - 1e-12);
    let deviation = riccati_oracle_deviation(setup, ORACLE_HORIZON, 201)?;
    let saturating = saturating_trajectory(setup, &grid)?;
    let saturating_ok = saturating.iter().zip(&grid).all(|(v, &t)| *v < 1.0 / setup.mu.mu(t));
    let passes = conditions.passes && below_envelope && bracket_ok && deviation <= 1e-6 && saturating_ok;
    Ok(ScenarioReport {
        scenario: name.into(),
        passes,
        details: json!({
            "conditions": conditions,
            "majorant_below_envelope": below_envelope,
            "bracket_in_range": bracket_ok,
            "oracle_max_deviation": deviation,
            "oracle_horizon": ORACLE_HORIZON,
            "saturating_below_envelope": saturating_ok,
            "t_max": t_max,
            "parameters": extra,
        }),
        trace: points.iter().map(|p| (p.t, p.v)).collect(),
    })
}

/// Runs a named scenario with its default parameters; `t_max` overrides the
/// horizon given by [`Scenario::default_horizon`].
pub fn run_scenario(s: Scenario, t_max: Option<f64>) -> Result<ScenarioReport> {
    let t_max = t_max.unwrap_or(s.default_horizon());
    match s {
        Scenario::RiccatiExample1 => {
            let p = example1_params();
            let family = validate_power_family(&p)?;
            let mut rep = riccati_scenario(s.name(), &p.setup(), t_max, json!(p))?;
            rep.passes &= family.chosen_admissible && family.mu_exists;
            rep.details["family"] = json!(family);
            Ok(rep)
        }
        Scenario::RiccatiExample2 => riccati_scenario(
            s.name(),
            &example2_setup(0.5, 0.5),
            t_max,
            json!({"gamma0": 2.0, "nu": 1.0, "mu0": 1.0, "sigma0": 0.5, "beta0": 0.5, "v0": 0.5}),
        ),
        Scenario::RiccatiExample3 => riccati_scenario(
            s.name(),
            &example3_setup(3.0, 1.0, 0.5, 0.5),
            t_max,
            json!({"t0": 3.0, "c": 1.0, "fraction": 0.5, "v0": 0.5}),
        ),
        Scenario::Comparison => {
            let eq = comparison_check(|_, w| -w, |_, u| -u, 1.0, 1.0, t_max)?;
            let setup = example1_params().setup();
            let horizon = t_max.min(ORACLE_HORIZON);
            let ric = riccati_pair_comparison(&setup, horizon)?;
            let passes = eq.passes && eq.max_gap <= 1e-12 && ric.passes;
            Ok(ScenarioReport {
                scenario: s.name().into(),
                passes,
                details: json!({
                    "equality_pair": {"passes": eq.passes, "max_gap": eq.max_gap, "lattice_points": eq.lattice_points},
                    "riccati_pair": {"passes": ric.passes, "max_excess": ric.max_excess, "lattice_points": ric.lattice_points, "t_max": horizon},
                }),
                trace: eq.t.iter().copied().zip(eq.u.iter().copied()).collect(),
            })
        }
        Scenario::Appendix => {
            let rep = appendix_decay_check(&AppendixSetup::counterexample_repaired(1.0), t_max)?;
            Ok(appendix_scenario(s.name(), rep, true))
        }
        Scenario::AppendixCounterexample => {
            let rep = appendix_decay_check(&AppendixSetup::counterexample(1.0), t_max)?;
            Ok(appendix_scenario(s.name(), rep, false))
        }
    }
}

fn appendix_scenario(name: &str, rep: AppendixReport, expect_decay: bool) -> ScenarioReport {
    ScenarioReport {
        scenario: name.into(),
        passes: rep.decays == expect_decay,
        details: json!({
            "decays": rep.decays,
            "u_final": rep.u_final,
            "threshold": rep.threshold,
            "has_condition4": rep.has_condition4,
        }),
        trace: rep.trace,
    }
}

/// `w' = a w^2 + b` with the setup's own `sigma`, `beta` against the majorant
/// ODE in `w` scale.
pub fn riccati_pair_comparison(setup: &RiccatiSetup, t_max: f64) -> Result<ComparisonReport> {
    let gamma_int = |t: f64| integrate(|s| (setup.gamma)(s), 0.0, t).unwrap_or(f64::NAN);
    comparison_check(
        |t, w| {
            let g = gamma_int(t);
            (setup.sigma)(t) * (-g).exp() * w * w + (setup.beta)(t) * g.exp()
        },
        |t, u| {
            let g = gamma_int(t);
            setup.sigma_max(t) * (-g).exp() * u * u + setup.beta_max(t) * g.exp()
        },
        setup.v0,
        setup.v0,
        t_max,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn constant_setup(gamma0: f64, mu0: f64, v0: f64) -> RiccatiSetup {
        RiccatiSetup::new(move |_| gamma0, |_| 0.0, |_| 0.0, Envelope::Exponential { mu0, nu: 0.0 }, v0)
    }

    #[test]
    fn majorant_initial_value() {
        let s = constant_setup(1.0, 2.0, 0.0);
        assert_eq!(riccati_majorant(&s, 0.0).unwrap(), 0.0);
        let s = constant_setup(1.0, 2.0, 0.3);
        assert_relative_eq!(riccati_majorant(&s, 0.0).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn majorant_constant_coefficients() {
        let (g0, m0, v0) = (0.7, 1.5, 0.4);
        let s = constant_setup(g0, m0, v0);
        for &t in &[0.5f64, 2.0, 7.0] {
            let exact = (g0 * t).exp() / m0 * (1.0 - 1.0 / (1.0 / (1.0 - m0 * v0) + g0 * t / 2.0));
            assert_relative_eq!(riccati_majorant(&s, t).unwrap(), exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn majorant_rejects_large_initial_product() {
        let s = constant_setup(1.0, 2.0, 0.5);
        assert!(matches!(riccati_majorant(&s, 1.0), Err(Error::ConditionViolated(_))));
    }

    #[test]
    fn example1_closed_form() {
        let s = example1_params().setup();
        for &t in &[0.0f64, 1.0, 3.5, 10.0] {
            let p = riccati_majorant_point(&s, t).unwrap();
            assert_relative_eq!(p.v, 1.0 - 1.0 / (2.0 + 2.0 * t), epsilon = 1e-12);
            assert_relative_eq!(p.gamma_integral, 4.0 * t, epsilon = 1e-9);
        }
    }

    #[test]
    fn example2_closed_form_and_oracle() {
        let s = example2_setup(0.5, 0.5);
        for &t in &[0.0f64, 1.0, 4.0, 10.0] {
            let exact_u = t.exp() * (1.0 - 1.0 / (2.0 + t / 2.0));
            assert_relative_eq!(riccati_majorant(&s, t).unwrap(), exact_u, max_relative = 1e-10);
        }
        assert!(riccati_oracle_deviation(&s, 10.0, 101).unwrap() <= 1e-6);
    }

    #[test]
    fn example1_oracle_in_both_scales() {
        let s = example1_params().setup();
        assert!(riccati_oracle_deviation(&s, 10.0, 101).unwrap() <= 1e-6);
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.5).collect();
        let w = riccati_ode_oracle_w(&s, &grid).unwrap();
        for (t, u) in grid.iter().zip(w) {
            let closed = riccati_majorant(&s, *t).unwrap();
            assert!((u - closed).abs() <= 1e-8 * closed.abs().max(1.0), "t={t}: {u} vs {closed}");
        }
    }

    #[test]
    fn example2_sigma_equal_mu0_is_inadmissible() {
        let s = example2_setup(1.0, 0.5);
        let rep = s.check_conditions(&log_grid(100.0, 64)).unwrap();
        assert!(!rep.passes);
        assert!(rep.violation.unwrap().condition.starts_with("σ(t) ≤"));
    }

    #[test]
    fn example3_conditions_and_decay() {
        let s = example3_setup(3.0, 1.0, 0.5, 0.5);
        let grid = log_grid(1e3, 512);
        assert!(s.check_conditions(&grid).unwrap().passes);
        assert!(riccati_oracle_deviation(&s, 10.0, 101).unwrap() <= 1e-6);
        let pts = riccati_majorant_on_grid(&s, &grid).unwrap();
        assert!(pts.last().unwrap().v < pts[0].v);
    }

    #[test]
    fn power_family_validator() {
        let rep = validate_power_family(&example1_params()).unwrap();
        assert!(rep.chosen_admissible && rep.mu_exists, "{rep:?}");
        assert!(!rep.decay);
        assert_eq!(rep.canonical, Some((0.0, 0.5)));

        let decaying = PowerFamily { nu3: -1.0, nu: 0.0, ..example1_params() };
        assert!(validate_power_family(&decaying).unwrap().decay);

        let bad = PowerFamily { c: 3.0, ..example1_params() };
        let rep = validate_power_family(&bad).unwrap();
        assert!(!rep.chosen_admissible);
        assert!(rep.failed.iter().any(|f| f.starts_with("c ≤")));
    }

    #[test]
    fn comparison_equality_and_explicit_pairs() {
        let eq = comparison_check(|_, w| -w, |_, u| -u, 1.0, 1.0, 10.0).unwrap();
        assert!(eq.passes && eq.max_gap <= 1e-12);
        let rep = comparison_check(|_, w| -w, |_, u| -u + 1.0, 0.0, 0.0, 10.0).unwrap();
        assert!(rep.passes);
        for (t, u) in rep.t.iter().zip(&rep.u) {
            assert!((u - (1.0 - (-t).exp())).abs() < 1e-9);
        }
        assert!(rep.w.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn comparison_reports_precondition_witness() {
        let r = comparison_check(|_, w| -w + 1.0, |_, u| -u, 0.0, 0.0, 5.0);
        assert!(matches!(r, Err(Error::PreconditionSampleFailed { .. })));
        assert!(comparison_check(|_, w| -w, |_, u| -u, 1.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn riccati_pair_ordered() {
        let rep = riccati_pair_comparison(&example1_params().setup(), 10.0).unwrap();
        assert!(rep.passes);
        assert!(rep.max_excess <= 0.0);
    }

    #[test]
    fn appendix_examples() {
        let lin = AppendixSetup::new(|_| 1.0, |_| 0.0, |u| u, 1.0, true);
        let rep = appendix_decay_check(&lin, 20.0).unwrap();
        assert!(rep.decays);
        assert!((rep.u_final - (-20f64).exp()).abs() < 1e-9);

        let ce = appendix_decay_check(&AppendixSetup::counterexample(1.0), 1e3).unwrap();
        assert!(!ce.decays && ce.u_final > 5.0);
        assert!(ce.trace.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12));
        for &(t, u) in ce.trace.iter().step_by(37) {
            assert!(u >= 1.0 + (t + 1.0).ln() - 1e-6, "t={t} u={u}");
        }

        let fixed = appendix_decay_check(&AppendixSetup::counterexample_repaired(1.0), 1e3).unwrap();
        assert!(fixed.decays);

        let no_forcing = AppendixSetup::new(|_| 1.0, |_| 0.0, |u| if u <= 1.0 { u } else { (1.0 - u).exp() }, 1.0, false);
        assert!(appendix_decay_check(&no_forcing, 1e3).unwrap().decays);
    }

    #[test]
    fn appendix_validates_setup() {
        let bad = AppendixSetup::new(|_| 0.0, |_| 0.0, |u| u, 1.0, true);
        assert!(matches!(appendix_decay_check(&bad, 10.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn scenarios_pass_with_defaults() {
        for s in Scenario::ALL {
            let rep = run_scenario(s, None).unwrap_or_else(|e| panic!("{}: {e}", s.name()));
            assert!(rep.passes, "{}: {}", s.name(), rep.details);
            assert_eq!(rep.to_json()["schema"], "dsm-ineq/1");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn passing_setups_stay_below_envelope(
            gamma0 in 1.5f64..4.0,
            nu in 0.0f64..1.0,
            sf in 0.0f64..1.0,
            bf in 0.0f64..1.0,
            v0 in 0.0f64..0.9,
        ) {
            let slack = gamma0 - nu;
            let s = RiccatiSetup::new(
                move |_| gamma0,
                move |t| sf * 0.5 * slack * (nu * t).exp(),
                move |t| bf * slack / 2.0 * (-nu * t).exp(),
                Envelope::Exponential { mu0: 1.0, nu },
                v0,
            );
            let grid = log_grid(20.0, 128);
            prop_assert!(s.check_conditions(&grid).unwrap().passes);
            let pts = riccati_majorant_on_grid(&s, &grid).unwrap();
            for p in &pts {
                prop_assert!(p.v < 1.0 / s.mu.mu(p.t));
                prop_assert!(p.bracket < 1.0 && p.bracket >= v0 - 1e-12);
            }
            let sat = saturating_trajectory(&s, &grid).unwrap();
            for (v, p) in sat.iter().zip(&pts) {
                prop_assert!(*v < 1.0 / s.mu.mu(p.t));
                prop_assert!(*v <= p.v + 1e-9 * p.v.max(1.0));
            }
        }

        #[test]
        fn comparison_never_inverts(k in 0.1f64..3.0, c in 0.0f64..2.0, w0 in -1.0f64..1.0, d in 0.0f64..1.0) {
            let rep = comparison_check(move |_, w| -k * w, move |_, u| -k * u + c, w0, w0 + d, 10.0).unwrap();
            prop_assert!(rep.passes);
        }

        #[test]
        fn condition4_setups_decay(k in 0.5f64..3.0, b0 in 0.1f64..3.0, u0 in 0.0f64..5.0) {
            let s = AppendixSetup::new(move |_| k, move |t| b0 / (1.0 + t).powi(2), |u| u.min(1.0), u0, true);
            prop_assert!(appendix_decay_check(&s, 1e3).unwrap().decays);
        }
    }
}
