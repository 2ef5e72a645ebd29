//! Regularization schedules `eps(t)`, their admissibility diagnostics and the
//! envelopes `mu(t)` used to certify `|z(t) - x(t)| < 1/mu(t)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, log_grid};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    /// `eps0 (t0 + t)^(-nu)`
    Power { eps0: f64, t0: f64, nu: f64 },
    /// `eps0 / log(t0 + t)`, `t0 > 1`
    Log { eps0: f64, t0: f64 },
    /// `eps0 exp(-nu t)`
    Exp { eps0: f64, nu: f64 },
}

fn positive(label: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{label} must be positive and finite, got {v}")))
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Power { eps0, t0, nu } => {
                positive("eps0", eps0)?;
                positive("t0", t0)?;
                positive("nu", nu)
            }
            Schedule::Log { eps0, t0 } => {
                positive("eps0", eps0)?;
                if t0 > 1.0 && t0.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("t0 must exceed 1 for the log schedule, got {t0}")))
                }
            }
            Schedule::Exp { eps0, nu } => {
                positive("eps0", eps0)?;
                positive("nu", nu)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Power { .. } => "power",
            Schedule::Log { .. } => "log",
            Schedule::Exp { .. } => "exp",
        }
    }

    pub fn eps0(&self) -> f64 {
        match *self {
            Schedule::Power { eps0, .. } | Schedule::Log { eps0, .. } | Schedule::Exp { eps0, .. } => eps0,
        }
    }

    pub fn eps(&self, t: f64) -> f64 {
        match *self {
            Schedule::Power { eps0, t0, nu } => eps0 * (t0 + t).powf(-nu),
            Schedule::Log { eps0, t0 } => eps0 / (t0 + t).ln(),
            Schedule::Exp { eps0, nu } => eps0 * (-nu * t).exp(),
        }
    }

    /// Time derivative of `eps`; nonpositive for every family.
    pub fn eps_dot(&self, t: f64) -> f64 {
        match *self {
            Schedule::Power { eps0, t0, nu } => -nu * eps0 * (t0 + t).powf(-nu - 1.0),
            Schedule::Log { eps0, t0 } => {
                let l = (t0 + t).ln();
                -eps0 / ((t0 + t) * l * l)
            }
            Schedule::Exp { eps0, nu } => -nu * eps0 * (-nu * t).exp(),
        }
    }

    /// `|eps'(t)| / eps(t)`.
    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            Schedule::Power { t0, nu, .. } => nu / (t0 + t),
            Schedule::Log { t0, .. } => 1.0 / ((t0 + t) * (t0 + t).ln()),
            Schedule::Exp { nu, .. } => nu,
        }
    }

    /// `sup_t |eps'|/eps`; attained at `t = 0` for every family.
    pub fn sup_rate(&self) -> f64 {
        self.rate(0.0)
    }

    /// `lim_{t -> inf} |eps'|/eps`.
    pub fn rate_limit(&self) -> f64 {
        match *self {
            Schedule::Power { .. } | Schedule::Log { .. } => 0.0,
            Schedule::Exp { nu, .. } => nu,
        }
    }

    /// Same family with `eps0` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Schedule {
        match *self {
            Schedule::Power { eps0, t0, nu } => Schedule::Power { eps0: c * eps0, t0, nu },
            Schedule::Log { eps0, t0 } => Schedule::Log { eps0: c * eps0, t0 },
            Schedule::Exp { eps0, nu } => Schedule::Exp { eps0: c * eps0, nu },
        }
    }

    /// Same family rescaled so that `eps(0) = e`.
    pub fn with_initial(&self, e: f64) -> Schedule {
        self.scaled(e / self.eps(0.0))
    }

    /// `int_a^b eps(s) ds`, closed form except for the log family.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        match *self {
            Schedule::Power { eps0, t0, nu } => {
                let p = 1.0 - nu;
                let l = ((t0 + b) / (t0 + a)).ln();
                if p.abs() * l.abs() < 1e-300 {
                    Ok(eps0 * (t0 + a).powf(p) * l)
                } else {
                    Ok(eps0 * (t0 + a).powf(p) * (p * l).exp_m1() / p)
                }
            }
            Schedule::Exp { eps0, nu } => Ok(-eps0 / nu * (-nu * a).exp() * (-nu * (b - a)).exp_m1()),
            Schedule::Log { .. } => integrate(|s| self.eps(s), a, b),
        }
    }

    /// `C_eps = sup_t eps(0)|eps'(t)|/eps(t)^2`.
    pub fn c_eps(&self) -> f64 {
        match *self {
            Schedule::Power { t0, nu, .. } => {
                if nu <= 1.0 {
                    nu / t0
                } else {
                    f64::INFINITY
                }
            }
            Schedule::Log { t0, .. } => 1.0 / (t0 * t0.ln()),
            Schedule::Exp { .. } => f64::INFINITY,
        }
    }

    /// The sharper constant `|eps'(0)|/eps(0)`, available when
    /// `|eps'|/eps^2` is nonincreasing on a log grid over `[0, 1e6]`.
    pub fn c_eps_refined(&self) -> Option<f64> {
        let grid = log_grid(1e6, 2000);
        let q: Vec<f64> = grid.iter().map(|&t| -self.eps_dot(t) / self.eps(t).powi(2)).collect();
        if q.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) {
            Some(self.rate(0.0))
        } else {
            None
        }
    }

    /// `lim_{t -> inf} |eps'|/eps^2`.
    pub fn eps_dot_over_eps2_limit(&self) -> f64 {
        match *self {
            Schedule::Power { eps0, nu, .. } => {
                if nu < 1.0 {
                    0.0
                } else if nu == 1.0 {
                    1.0 / eps0
                } else {
                    f64::INFINITY
                }
            }
            Schedule::Log { .. } => 0.0,
            Schedule::Exp { .. } => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl Margin {
    fn new(inequality: &str, lhs: f64, rhs: f64) -> Self {
        Margin { inequality: inequality.to_string(), lhs, rhs }
    }

    pub fn holds(&self) -> bool {
        self.lhs < self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    pub theorem: String,
    pub c_eps: f64,
    pub c0: Option<f64>,
    pub c_alpha: Option<f64>,
    pub passes: bool,
    /// Each entry states `lhs < rhs`.
    pub margins: Vec<Margin>,
    pub violated: Option<String>,
    /// Envelope constant `lambda` when the check passes.
    pub lambda: Option<f64>,
}

impl Admissibility {
    fn from_margins(theorem: &str, c_eps: f64, margins: Vec<Margin>) -> Self {
        let violated = margins.iter().find(|m| !m.holds()).map(|m| m.inequality.clone());
        Admissibility {
            theorem: theorem.to_string(),
            c_eps,
            c0: None,
            c_alpha: None,
            passes: violated.is_none(),
            margins,
            violated,
            lambda: None,
        }
    }
}

/// Conditions on `C_eps` and `eps(0)` for the regularized Newton flow.
pub fn check_theorem32(s: &Schedule, n2: f64, dist0: f64) -> Admissibility {
    let c = s.c_eps();
    let e0 = s.eps(0.0);
    if !c.is_finite() {
        let mut a = Admissibility::from_margins("newton", c, vec![Margin::new("C_eps < 1", c, 1.0)]);
        a.violated = Some("C_ε = +∞".into());
        return a;
    }
    let mut margins = vec![Margin::new("C_eps < 1", c, 1.0)];
    if c < 1.0 {
        let rhs = n2 * dist0 / (1.0 - c) * f64::max(1.0, 2.0 * c / (1.0 - c));
        margins.push(Margin::new("N2 |z0-y| / (1-C_eps) max{1, 2C_eps/(1-C_eps)} < eps(0)", rhs, e0));
    }
    let mut a = Admissibility::from_margins("newton", c, margins);
    if a.passes && n2 > 0.0 {
        a.lambda = Some(n2 / (1.0 - c));
    }
    a
}

/// Monotone decay of `eps` with `|eps'|/eps^2 -> 0`, the condition of the
/// simple-iteration convergence theorem.
pub fn check_theorem33(s: &Schedule) -> Admissibility {
    let lim = s.eps_dot_over_eps2_limit();
    let mut a = Admissibility::from_margins("simple", s.c_eps(), vec![Margin::new("lim |eps'|/eps^2 = 0", lim, f64::MIN_POSITIVE)]);
    if !a.passes {
        a.violated = Some(format!("lim |ε'|/ε² = {lim} ≠ 0"));
    }
    a
}

/// Conditions for the projected Gauss-Newton flow. `c_proj` is the constant
/// `C` of the projector condition and `c_alpha = eps(0) max alpha/eps`.
pub fn check_gn_projector(s: &Schedule, n1: f64, n2: f64, dist0: f64, c_proj: f64, c_alpha: f64) -> Admissibility {
    let gamma = 0.5 - c_proj;
    let c0 = gamma - s.sup_rate();
    let e0 = s.eps(0.0);
    let mut margins = vec![Margin::new("C < 1/2", c_proj, 0.5), Margin::new("C0 > 0", 0.0, c0)];
    let lambda = (4.0 * n1 * n2 + n2 * e0.sqrt()) / (2.0 * c0);
    if c0 > 0.0 {
        let first = if c_alpha > 0.0 { c0 / (2.0 * c_alpha) } else { f64::INFINITY };
        let second = if dist0 > 0.0 { 1.0 / dist0 } else { f64::INFINITY };
        margins.push(Margin::new(
            "(4 N1 N2 + N2 sqrt(eps0)) / (2 C0) < eps0 min{C0/(2 C_alpha), 1/|y-z0|}",
            lambda,
            e0 * first.min(second),
        ));
    }
    let mut a = Admissibility::from_margins("gn-projector", s.c_eps(), margins);
    a.c0 = Some(c0);
    a.c_alpha = Some(c_alpha);
    if a.passes && lambda > 0.0 {
        a.lambda = Some(lambda);
    }
    a
}

/// `zeta^zeta (1-zeta)^(1-zeta)`, with the value 1 at `zeta = 1`.
pub fn zeta_kappa(zeta: f64) -> f64 {
    let tail = if zeta >= 1.0 { 1.0 } else { (1.0 - zeta).powf(1.0 - zeta) };
    zeta.powf(zeta) * tail
}

/// `gamma(t)` of the source-condition Gauss-Newton estimate, as a function of `eps`.
pub fn gn_sourcewise_gamma(eps: f64, n1: f64, n2: f64, zeta: f64, v_norm: f64) -> f64 {
    let k = zeta_kappa(zeta);
    1.0 - 0.5 * eps.powf(zeta - 0.5) * n2 * k * v_norm - n1.powf(2.0 * zeta + 1.0) * n2 * v_norm / (n1 * n1 + eps)
}

/// Conditions for the Gauss-Newton flow under the source condition
/// `y - z0 = T(y)^zeta v`.
pub fn check_gn_sourcewise(s: &Schedule, n1: f64, n2: f64, zeta: f64, v_norm: f64, dist0: f64) -> Admissibility {
    let k = zeta_kappa(zeta);
    let grid = log_grid(1e6, 4000);
    let mut c0 = f64::INFINITY;
    let mut lemma_lhs = 0.0f64;
    let mut gamma_min = f64::INFINITY;
    let mut visit = |eps: f64, rate: f64| {
        let g = gn_sourcewise_gamma(eps, n1, n2, zeta, v_norm);
        gamma_min = gamma_min.min(g);
        c0 = c0.min(g - zeta * rate);
        let l = (0.5 * eps.powf(zeta - 0.5) * n1 * k + n1.powf(2.0 * (zeta + 1.0)) / (n1 * n1 + eps)) * v_norm;
        lemma_lhs = lemma_lhs.max(l);
    };
    for &t in &grid {
        visit(s.eps(t), s.rate(t));
    }
    visit(0.0, s.rate_limit());

    let e0 = s.eps(0.0);
    let mut margins = vec![
        Margin::new("[eps^(zeta-1/2) N1 kappa/2 + N1^(2(zeta+1))/(N1^2+eps)] |v| < 1", lemma_lhs, 1.0),
        Margin::new("gamma(t) > 0", 0.0, gamma_min),
        Margin::new("C0 > 0", 0.0, c0),
    ];
    let lambda = n2 * e0.powf(zeta - 0.5) / (2.0 * c0);
    if c0 > 0.0 {
        let first = if k * v_norm > 0.0 { c0 / (2.0 * k * v_norm) } else { f64::INFINITY };
        let second = if dist0 > 0.0 { e0.powf(zeta) / dist0 } else { f64::INFINITY };
        margins.push(Margin::new(
            "N2 eps0^(zeta-1/2) / (2 C0) < min{C0/(2 kappa |v|), eps0^zeta/|y-z0|}",
            lambda,
            first.min(second),
        ));
    }
    let mut a = Admissibility::from_margins("gn-sourcewise", s.c_eps(), margins);
    a.c0 = Some(c0);
    if a.passes && lambda > 0.0 {
        a.lambda = Some(lambda);
    }
    a
}

/// `C_alpha = eps(0) max_t alpha(t)/eps(t)` sampled on `grid`.
pub fn c_alpha_on_grid(s: &Schedule, alpha: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    let e0 = s.eps(0.0);
    grid.iter().map(|&t| e0 * alpha(t) / s.eps(t)).fold(0.0, f64::max)
}

/// Positive function `mu(t)` with `|z(t) - x(t)| < 1/mu(t)`.
#[derive(Debug, Clone)]
pub enum Envelope {
    /// `lambda / eps(t)`
    LambdaOverEps { lambda: f64, schedule: Schedule },
    /// `lambda / eps(t)^zeta`
    LambdaOverEpsZeta { lambda: f64, zeta: f64, schedule: Schedule },
    /// `1/rho(t)` with `rho' + eps rho = A |eps'|/eps`.
    OdeDefined(OdeEnvelope),
    /// `c (1+t)^nu`
    Power { c: f64, nu: f64 },
    /// `mu0 e^(nu t)`
    Exponential { mu0: f64, nu: f64 },
    /// `c log(t + t0)`
    Logarithmic { c: f64, t0: f64 },
    /// `factor * inner`
    Scaled { factor: f64, inner: Box<Envelope> },
}

impl Envelope {
    pub fn mu(&self, t: f64) -> f64 {
        match self {
            Envelope::LambdaOverEps { lambda, schedule } => lambda / schedule.eps(t),
            Envelope::LambdaOverEpsZeta { lambda, zeta, schedule } => lambda / schedule.eps(t).powf(*zeta),
            Envelope::OdeDefined(e) => 1.0 / e.rho(t),
            Envelope::Power { c, nu } => c * (1.0 + t).powf(*nu),
            Envelope::Exponential { mu0, nu } => mu0 * (nu * t).exp(),
            Envelope::Logarithmic { c, t0 } => c * (t + t0).ln(),
            Envelope::Scaled { factor, inner } => factor * inner.mu(t),
        }
    }

    pub fn mu_dot(&self, t: f64) -> f64 {
        match self {
            Envelope::LambdaOverEps { lambda, schedule } => -lambda * schedule.eps_dot(t) / schedule.eps(t).powi(2),
            Envelope::LambdaOverEpsZeta { lambda, zeta, schedule } => {
                -lambda * zeta * schedule.eps_dot(t) / schedule.eps(t).powf(zeta + 1.0)
            }
            Envelope::OdeDefined(e) => {
                let rho = e.rho(t);
                -e.rho_dot(t, rho) / (rho * rho)
            }
            Envelope::Power { c, nu } => c * nu * (1.0 + t).powf(nu - 1.0),
            Envelope::Exponential { mu0, nu } => mu0 * nu * (nu * t).exp(),
            Envelope::Logarithmic { c, t0 } => c / (t + t0),
            Envelope::Scaled { factor, inner } => factor * inner.mu_dot(t),
        }
    }

    /// `ln(mu(t)/mu(0))`, in closed form where one exists.
    pub fn log_growth(&self, t: f64) -> f64 {
        match self {
            Envelope::LambdaOverEps { schedule, .. } => (schedule.eps(0.0) / schedule.eps(t)).ln(),
            Envelope::LambdaOverEpsZeta { zeta, schedule, .. } => zeta * (schedule.eps(0.0) / schedule.eps(t)).ln(),
            Envelope::Power { nu, .. } => nu * (1.0 + t).ln(),
            Envelope::Exponential { nu, .. } => nu * t,
            Envelope::Logarithmic { t0, .. } => ((t + t0).ln() / t0.ln()).ln(),
            Envelope::OdeDefined(_) => (self.mu(t) / self.mu(0.0)).ln(),
            Envelope::Scaled { inner, .. } => inner.log_growth(t),
        }
    }

    pub fn scaled(&self, factor: f64) -> Envelope {
        Envelope::Scaled { factor, inner: Box::new(self.clone()) }
    }

    pub fn form(&self) -> &'static str {
        match self {
            Envelope::LambdaOverEps { .. } => "lambda-over-eps",
            Envelope::LambdaOverEpsZeta { .. } => "lambda-over-eps-zeta",
            Envelope::OdeDefined(_) => "ode-defined",
            Envelope::Power { .. } => "power",
            Envelope::Exponential { .. } => "exponential",
            Envelope::Logarithmic { .. } => "logarithmic",
            Envelope::Scaled { inner, .. } => inner.form(),
        }
    }
}

/// `rho = 1/mu` solving `rho' = -eps rho + A |eps'|/eps`, tabulated on a
/// grid and stepped exactly from the nearest tabulated point.
#[derive(Debug, Clone)]
pub struct OdeEnvelope {
    schedule: Schedule,
    a: f64,
    grid: Vec<f64>,
    rho: Vec<f64>,
}

impl OdeEnvelope {
    /// Exact step of the linear ODE from `(ta, rho_a)` to `tb`.
    fn step(schedule: &Schedule, a: f64, ta: f64, rho_a: f64, tb: f64) -> Result<f64> {
        if tb == ta {
            return Ok(rho_a);
        }
        let decay = (-schedule.integral(ta, tb)?).exp();
        let forcing = match schedule {
            Schedule::Log { .. } => {
                let inner = |s: f64| match schedule.integral(s, tb) {
                    Ok(v) => schedule.rate(s) * (-v).exp(),
                    Err(_) => f64::NAN,
                };
                integrate(inner, ta, tb)?
            }
            _ => integrate(
                |s| schedule.rate(s) * (-schedule.integral(s, tb).unwrap_or(f64::NAN)).exp(),
                ta,
                tb,
            )?,
        };
        Ok(rho_a * decay + a * forcing)
    }

    /// `rho(t)`; NaN if quadrature fails, which monitors surface as non-finite.
    pub fn rho(&self, t: f64) -> f64 {
        let k = match self.grid.binary_search_by(|g| g.total_cmp(&t)) {
            Ok(k) => return self.rho[k],
            Err(0) => 0,
            Err(k) => k - 1,
        };
        Self::step(&self.schedule, self.a, self.grid[k], self.rho[k], t).unwrap_or(f64::NAN)
    }

    fn rho_dot(&self, t: f64, rho: f64) -> f64 {
        -self.schedule.eps(t) * rho + self.a * self.schedule.rate(t)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn tabulated(&self) -> &[f64] {
        &self.rho
    }
}

/// Envelope `mu = 1/rho` with
/// `rho(t) = [A int_0^t |eps'|/eps e^{int_0^s eps} ds + 1/mu0] e^{-int_0^t eps}`.
pub fn mu_ode_envelope(s: &Schedule, a: f64, mu0: f64, t_grid: &[f64]) -> Result<Envelope> {
    s.validate()?;
    positive("A", a)?;
    positive("mu0", mu0)?;
    if t_grid.first() != Some(&0.0) {
        return Err(Error::InvalidParameter("t_grid must start at 0".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("t_grid must be strictly increasing".into()));
    }
    let mut rho = Vec::with_capacity(t_grid.len());
    rho.push(1.0 / mu0);
    for w in t_grid.windows(2) {
        let prev = *rho.last().unwrap();
        rho.push(OdeEnvelope::step(s, a, w[0], prev, w[1])?);
    }
    Ok(Envelope::OdeDefined(OdeEnvelope { schedule: *s, a, grid: t_grid.to_vec(), rho }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiViolation {
    pub t: f64,
    pub condition: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiReport {
    pub passes: bool,
    pub violation: Option<RiccatiViolation>,
    pub points_checked: usize,
}

/// Checks `0 <= sigma <= (mu/2)(gamma - mu'/mu)`,
/// `beta <= (gamma - mu'/mu)/(2 mu)` on `t_grid` and `mu(0) v0 < 1`.
pub fn check_riccati_conditions(
    gamma: &dyn Fn(f64) -> f64,
    sigma: &dyn Fn(f64) -> f64,
    beta: &dyn Fn(f64) -> f64,
    mu: &Envelope,
    v0: f64,
    t_grid: &[f64],
) -> Result<RiccatiReport> {
    if t_grid.first() != Some(&0.0) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("t_grid must start at 0 and increase strictly".into()));
    }
    let fail = |t: f64, condition: &str, lhs: f64, rhs: f64, n: usize| RiccatiReport {
        passes: false,
        violation: Some(RiccatiViolation { t, condition: condition.into(), lhs, rhs }),
        points_checked: n,
    };
    let m0 = mu.mu(0.0) * v0;
    if !m0.is_finite() {
        return Err(Error::NonFinite("mu(0) v(0)".into()));
    }
    if m0 >= 1.0 {
        return Ok(fail(0.0, "μ(0)v(0) ≥ 1", m0, 1.0, 0));
    }
    for (k, &t) in t_grid.iter().enumerate() {
        let (g, s, b, m, md) = (gamma(t), sigma(t), beta(t), mu.mu(t), mu.mu_dot(t));
        if ![g, s, b, m, md].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("Riccati coefficients at t={t}")));
        }
        let slack = g - md / m;
        let sigma_max = 0.5 * m * slack;
        let beta_max = slack / (2.0 * m);
        let tol = |v: f64| 1e-12 * v.abs().max(1.0);
        if s < -tol(0.0) {
            return Ok(fail(t, "σ(t) ≥ 0", 0.0, s, k + 1));
        }
        if s > sigma_max + tol(sigma_max) {
            return Ok(fail(t, "σ(t) ≤ (μ/2)(γ − μ'/μ)", s, sigma_max, k + 1));
        }
        if b > beta_max + tol(beta_max) {
            return Ok(fail(t, "β(t) ≤ (γ − μ'/μ)/(2μ)", b, beta_max, k + 1));
        }
    }
    Ok(RiccatiReport { passes: true, violation: None, points_checked: t_grid.len() })
}
