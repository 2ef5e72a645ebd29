//! Right-hand sides `Phi(h, t)` of the Cauchy problem `z' = Phi(z, t)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{gram_map, regularized_lstsq, regularized_solve, solve_checked, Matrix, ProjectorCache, Vector};
use crate::problem::Problem;
use crate::schedules::{zeta_kappa, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowKind {
    #[serde(rename = "classical-simple")]
    ClassicalSimple,
    #[serde(rename = "classical-newton")]
    ClassicalNewton,
    #[serde(rename = "classical-gn")]
    ClassicalGaussNewton,
    #[serde(rename = "simple")]
    RegSimple,
    #[serde(rename = "newton")]
    RegNewton,
    #[serde(rename = "gn-projector")]
    RegGnProjector,
    #[serde(rename = "gn-sourcewise")]
    RegGnSourcewise,
}

impl FlowKind {
    pub const ALL: [FlowKind; 7] = [
        FlowKind::RegSimple,
        FlowKind::RegNewton,
        FlowKind::RegGnProjector,
        FlowKind::RegGnSourcewise,
        FlowKind::ClassicalSimple,
        FlowKind::ClassicalNewton,
        FlowKind::ClassicalGaussNewton,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlowKind::ClassicalSimple => "classical-simple",
            FlowKind::ClassicalNewton => "classical-newton",
            FlowKind::ClassicalGaussNewton => "classical-gn",
            FlowKind::RegSimple => "simple",
            FlowKind::RegNewton => "newton",
            FlowKind::RegGnProjector => "gn-projector",
            FlowKind::RegGnSourcewise => "gn-sourcewise",
        }
    }

    pub fn is_regularized(self) -> bool {
        matches!(
            self,
            FlowKind::RegSimple | FlowKind::RegNewton | FlowKind::RegGnProjector | FlowKind::RegGnSourcewise
        )
    }

    /// Gauss-Newton kinds track the solution `y` itself rather than the
    /// auxiliary solution `x(t)`.
    pub fn tracks_solution(self) -> bool {
        matches!(self, FlowKind::RegGnProjector | FlowKind::RegGnSourcewise)
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlowKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct Flow {
    kind: FlowKind,
    problem: Problem,
    schedule: Option<Schedule>,
    xi: Option<Vector>,
    projector: Option<ProjectorCache>,
}

impl Flow {
    /// Regularized kinds require a schedule; the projector kind uses `xi`
    /// (default `z0`) and caches the eigendecomposition of `T(xi)`.
    pub fn new(kind: FlowKind, problem: Problem, schedule: Option<Schedule>, xi: Option<Vector>) -> Result<Self> {
        if kind.is_regularized() {
            let s = schedule.ok_or_else(|| Error::InvalidParameter(format!("method {kind} needs a schedule")))?;
            s.validate()?;
        }
        let (xi, projector) = if kind == FlowKind::RegGnProjector {
            let xi = xi.unwrap_or_else(|| problem.z0.clone());
            if xi.len() != problem.dim() {
                return Err(Error::DimensionMismatch { expected: problem.dim(), got: xi.len() });
            }
            let t = gram_map(&problem.jacobian(&xi))?;
            (Some(xi), Some(ProjectorCache::new(&t)?))
        } else {
            (xi, None)
        };
        Ok(Flow { kind, problem, schedule, xi, projector })
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        self.schedule.as_ref()
    }

    pub fn xi(&self) -> Option<&Vector> {
        self.xi.as_ref()
    }

    pub fn eps(&self, t: f64) -> Option<f64> {
        self.schedule.map(|s| s.eps(t))
    }

    fn eps_required(&self, t: f64) -> f64 {
        self.schedule.expect("regularized flow has a schedule").eps(t)
    }

    /// `P_eps(xi)` for the projector kind.
    pub fn projector(&self, eps: f64) -> Option<&Matrix> {
        self.projector.as_ref().map(|p| p.projector(eps))
    }

    /// `Phi(h, t)`.
    pub fn eval(&self, h: &Vector, t: f64) -> Result<Vector> {
        let n = self.problem.dim();
        if h.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: h.len() });
        }
        ensure_finite(h.as_slice(), "flow state")?;
        let f = self.problem.eval(h);
        ensure_finite(f.as_slice(), "F(h)")?;
        let z0 = &self.problem.z0;
        let out = match self.kind {
            FlowKind::ClassicalSimple => -f,
            FlowKind::ClassicalNewton => {
                let j = self.jacobian(h)?;
                -solve_checked(&j, &f)?
            }
            FlowKind::ClassicalGaussNewton => {
                let j = self.jacobian(h)?;
                let t_mat = gram_map(&j)?;
                -solve_checked(&t_mat, &(j.transpose() * f))?
            }
            FlowKind::RegSimple => {
                let e = self.eps_required(t);
                -(f + (h - z0) * e)
            }
            FlowKind::RegNewton => {
                let e = self.eps_required(t);
                let j = self.jacobian(h)?;
                -regularized_solve(&j, e, &(f + (h - z0) * e))?
            }
            FlowKind::RegGnSourcewise => {
                let e = self.eps_required(t);
                let j = self.jacobian(h)?;
                -regularized_lstsq(&j, e, &f, &(h - z0))?
            }
            FlowKind::RegGnProjector => {
                let e = self.eps_required(t);
                let j = self.jacobian(h)?;
                let p = self.projector(e).expect("projector cache built at construction");
                let d = regularized_lstsq(&j, e, &f, &Vector::zeros(n))?;
                (p - Matrix::identity(n, n)) * (h - z0) - p * d
            }
        };
        ensure_finite(out.as_slice(), "flow right-hand side")?;
        Ok(out)
    }

    fn jacobian(&self, h: &Vector) -> Result<Matrix> {
        let j = self.problem.jacobian(h);
        ensure_finite(j.as_slice(), "Jacobian")?;
        Ok(j)
    }
}

/// Solves `F(x) + eps (x - z0) = 0` by damped Newton with Armijo
/// backtracking. Converged once `|F_eps(x)| <= 1e-10 (1 + |F(z0)|)` and the
/// Newton correction is at roundoff level or has stopped shrinking.
pub fn auxiliary_solution(p: &Problem, eps: f64, warm_start: &Vector) -> Result<Vector> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if warm_start.len() != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: warm_start.len() });
    }
    const MAX_ITER: usize = 200;
    const ARMIJO_C: f64 = 1e-4;
    let tol = 1e-10 * (1.0 + p.residual(&p.z0));
    let g = |x: &Vector| p.eval(x) + (x - &p.z0) * eps;

    let mut x = warm_start.clone();
    let mut gx = g(&x);
    let mut norm = gx.norm();
    let mut prev_step = f64::INFINITY;
    for _ in 0..MAX_ITER {
        if !norm.is_finite() {
            return Err(Error::NonFinite("auxiliary residual".into()));
        }
        if norm == 0.0 {
            return Ok(x);
        }
        let d = -regularized_solve(&p.jacobian(&x), eps, &gx)?;
        let step = d.norm();
        if norm <= tol && (step <= 1e-13 * (1.0 + x.norm()) || step >= 0.5 * prev_step) {
            let polished = &x + &d;
            return Ok(if g(&polished).norm() <= norm { polished } else { x });
        }
        prev_step = step;
        let mut lambda = 1.0;
        loop {
            let trial = &x + &d * lambda;
            let gt = g(&trial);
            let nt = gt.norm();
            if nt.is_finite() && nt * nt <= (1.0 - 2.0 * ARMIJO_C * lambda) * norm * norm {
                x = trial;
                gx = gt;
                norm = nt;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-12 {
                // Accept the tiny step; stagnation is reported by the iteration cap.
                x = trial;
                gx = gt;
                norm = nt;
                break;
            }
        }
    }
    if norm <= tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: MAX_ITER, residual: norm })
    }
}

/// Constants beyond `N1`, `N2` needed by the Gauss-Newton estimates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Exponent of the source condition `y - z0 = T(y)^zeta v`.
    pub zeta: Option<f64>,
    /// `|v|` in the source condition.
    pub v_norm: Option<f64>,
    /// Constant `C` of the projector condition.
    pub c_proj: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemiCoefficients {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
}

/// Coefficients of `<Phi(h,t), h-x> <= alpha d - gamma d^2 + sigma d^3`.
pub fn semimonotonicity_coefficients(f: &Flow, t: f64, consts: &TheoryConstants) -> Result<SemiCoefficients> {
    let p = f.problem();
    let e = f
        .eps(t)
        .ok_or_else(|| Error::InvalidParameter(format!("method {} has no semimonotonicity estimate", f.kind())))?;
    match f.kind() {
        FlowKind::RegSimple => Ok(SemiCoefficients { alpha: 0.0, gamma: e, sigma: 0.0 }),
        FlowKind::RegNewton => Ok(SemiCoefficients { alpha: 0.0, gamma: 1.0, sigma: p.require_n2()? / (2.0 * e) }),
        FlowKind::RegGnSourcewise => {
            let n1 = p.require_n1()?;
            let n2 = p.require_n2()?;
            let zeta = consts.zeta.ok_or(Error::MissingConstants("zeta"))?;
            let v = consts.v_norm.ok_or(Error::MissingConstants("|v|"))?;
            Ok(SemiCoefficients {
                alpha: e.powf(zeta) * zeta_kappa(zeta) * v,
                gamma: crate::schedules::gn_sourcewise_gamma(e, n1, n2, zeta, v),
                sigma: n2 / (4.0 * e.sqrt()),
            })
        }
        FlowKind::RegGnProjector => {
            let n1 = p.require_n1()?;
            let n2 = p.require_n2()?;
            let c = consts.c_proj.ok_or(Error::MissingConstants("C"))?;
            let y = p.known_solution.as_ref().ok_or(Error::MissingConstants("known solution"))?;
            let n = p.dim();
            let proj = f.projector(e).expect("projector cache built at construction");
            let alpha = ((proj - Matrix::identity(n, n)) * (y - &p.z0)).norm();
            Ok(SemiCoefficients { alpha, gamma: 0.5 - c, sigma: n1 * n2 / e + n2 / (4.0 * e.sqrt()) })
        }
        _ => unreachable!("classical kinds have no schedule"),
    }
}

/// `<Phi(h,t), h - x_t> - [alpha d - gamma d^2 + sigma d^3]` with
/// `d = |h - x_t|`; nonpositive values certify the estimate at `h`.
pub fn semimonotonicity_margin(f: &Flow, h: &Vector, t: f64, x_t: &Vector, consts: &TheoryConstants) -> Result<f64> {
    let c = semimonotonicity_coefficients(f, t, consts)?;
    let phi = f.eval(h, t)?;
    let diff = h - x_t;
    let d = diff.norm();
    Ok(phi.dot(&diff) - (c.alpha * d - c.gamma * d * d + c.sigma * d * d * d))
}

/// `sup_{eps in grid} |P_eps(xi) (T(xi) + eps I)^-1 (T(y) - T(xi))|`, the
/// constant of the projector condition. Needs the known solution.
pub fn projector_condition(f: &Flow, eps_grid: &[f64]) -> Result<f64> {
    if f.kind() != FlowKind::RegGnProjector {
        return Err(Error::InvalidParameter("projector condition applies to gn-projector only".into()));
    }
    let p = f.problem();
    let y = p.known_solution.as_ref().ok_or(Error::MissingConstants("known solution"))?;
    let xi = f.xi().expect("projector flow has xi");
    let t_xi = gram_map(&p.jacobian(xi))?;
    let diff = gram_map(&p.jacobian(y))? - &t_xi;
    let mut sup = 0.0f64;
    for &e in eps_grid {
        let proj = f.projector(e).expect("projector cache built at construction");
        let mut cols = Matrix::zeros(diff.nrows(), diff.ncols());
        for k in 0..diff.ncols() {
            let col = regularized_solve(&t_xi, e, &diff.column(k).into_owned())?;
            cols.set_column(k, &col);
        }
        sup = sup.max(crate::linalg::spectral_norm(&(proj * cols)));
    }
    Ok(sup)
}
