//! Collocation system for the Feigenbaum functional equation
//! `g(x) = -alpha g(g(x/alpha))` with `g(x) = 1 + sum_i q_i |x|^{z i}`,
//! and dimension-and-degree continuation driven by regularized flows.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{Flow, FlowKind};
use crate::integrator::{integrate, IntegratorConfig, Monitors, Status};
use crate::linalg::{Matrix, Vector};
use crate::problem::{Operator, Problem};
use crate::schedules::Schedule;

/// Placement of the collocation nodes on `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// `x_j = j/n`
    Uniform,
    /// `x_j = (j/n)^{1/z}`
    Power,
    /// Uniform for `z <= 3`, power otherwise.
    #[default]
    Auto,
}

impl Partition {
    fn resolve(self, z: f64) -> Partition {
        match self {
            Partition::Auto if z <= 3.0 => Partition::Uniform,
            Partition::Auto => Partition::Power,
            p => p,
        }
    }

    /// Maps `s in (0, 1]` to a node position.
    fn map(self, z: f64, s: f64) -> f64 {
        match self {
            Partition::Uniform => s,
            _ => s.powf(1.0 / z),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeigenbaumSystem {
    z: f64,
    n: usize,
    partition: Partition,
    nodes: Vec<f64>,
}

impl FeigenbaumSystem {
    /// System on the power partition `x_j = (j/n)^{1/z}`.
    pub fn new(z: f64, n: usize) -> Result<Self> {
        Self::with_partition(z, n, Partition::Power)
    }

    pub fn with_partition(z: f64, n: usize, partition: Partition) -> Result<Self> {
        if !(z >= 2.0) || !z.is_finite() {
            return Err(Error::InvalidParameter(format!("z must be finite and >= 2, got {z}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        let partition = partition.resolve(z);
        let nodes = (1..=n).map(|j| partition.map(z, j as f64 / n as f64)).collect();
        Ok(FeigenbaumSystem { z, n, partition, nodes })
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn check_len(&self, q: &Vector) -> Result<()> {
        if q.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: q.len() });
        }
        crate::error::ensure_finite(q.as_slice(), "coefficients")
    }

    /// `F_j(q)` at the collocation nodes.
    pub fn eval_system(&self, q: &Vector) -> Result<Vector> {
        self.check_len(q)?;
        let out = self.residual_at(q, &self.nodes);
        crate::error::ensure_finite(out.as_slice(), "Feigenbaum system")?;
        Ok(out)
    }

    /// `F(q)` at arbitrary points `xs`.
    pub fn residual_at(&self, q: &Vector, xs: &[f64]) -> Vector {
        let z = self.z;
        let g1 = 1.0 + q.sum();
        Vector::from_iterator(
            xs.len(),
            xs.iter().map(|&x| {
                let gx = g_eval(q, z, x);
                let inner = g_eval(q, z, g1 * x);
                g1 * gx - g_eval(q, z, inner)
            }),
        )
    }

    /// Exact `dF_j/dq_l`, including the chain factor through `g(1) x_j`.
    pub fn eval_jacobian(&self, q: &Vector) -> Result<Matrix> {
        self.check_len(q)?;
        let (z, n) = (self.z, self.n);
        let g1 = 1.0 + q.sum();
        let powers: Vec<f64> = (1..=n).map(|i| z * i as f64).collect();
        let mut jac = Matrix::zeros(n, n);
        for (j, &x) in self.nodes.iter().enumerate() {
            let ax = x.abs();
            let gx = g_eval(q, z, x);
            let a = (g1 * x).abs();
            let w = g_eval(q, z, g1 * x);
            let aw = w.abs();
            // d|g1 x|^p / dg1 summed against q: sum_k q_k p_k |g1 x|^{p_k-1} sgn(g1) |x|
            let d_inner_dg1: f64 =
                (0..n).map(|k| q[k] * powers[k] * a.powf(powers[k] - 1.0)).sum::<f64>() * g1.signum() * ax;
            // g'(w)
            let dg_dw: f64 = (0..n).map(|k| q[k] * powers[k] * aw.powf(powers[k] - 1.0)).sum::<f64>() * w.signum();
            for l in 0..n {
                let p = powers[l];
                let dw = a.powf(p) + d_inner_dg1;
                jac[(j, l)] = gx + g1 * ax.powf(p) - (aw.powf(p) + dg_dw * dw);
            }
        }
        crate::error::ensure_finite(jac.as_slice(), "Feigenbaum Jacobian")?;
        Ok(jac)
    }

    /// `max |F|` on the refinement grid `s_k = k/(4n)`, `k = 1..4n`, mapped
    /// through the partition.
    pub fn discrepancy(&self, q: &Vector) -> Result<f64> {
        self.check_len(q)?;
        let m = 4 * self.n;
        let xs: Vec<f64> = (1..=m).map(|k| self.partition.map(self.z, k as f64 / m as f64)).collect();
        let r = self.residual_at(q, &xs).amax();
        if !r.is_finite() {
            return Err(Error::NonFinite("discrepancy".into()));
        }
        Ok(r)
    }
}

impl Operator for FeigenbaumSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &Vector) -> Vector {
        self.residual_at(x, &self.nodes)
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        self.eval_jacobian(x).unwrap_or_else(|_| Matrix::from_element(self.n, self.n, f64::NAN))
    }
}

/// `g(x) = 1 + sum_i q_i |x|^{z i}`.
pub fn g_eval(q: &Vector, z: f64, x: f64) -> f64 {
    let ax = x.abs();
    1.0 + q.iter().enumerate().map(|(i, qi)| qi * ax.powf(z * (i + 1) as f64)).sum::<f64>()
}

/// `-1/g(1) = -1/(1 + sum q_i)`.
pub fn alpha_from_coefficients(q: &Vector) -> Result<f64> {
    let g1 = 1.0 + q.sum();
    if g1.abs() < 1e-14 {
        return Err(Error::DivisionByZero("g(1) = 1 + sum q_i"));
    }
    Ok(-1.0 / g1)
}

/// `q^5 + 3q^4 + 3q^3 + 3q^2 + 2q - 1`.
pub fn seed_quintic(q: f64) -> f64 {
    ((((q + 3.0) * q + 3.0) * q + 3.0) * q + 2.0) * q - 1.0
}

/// Negative real roots of [`seed_quintic`] in increasing order, by bisection
/// on sign changes over `[-4, 0]`.
pub fn seed_roots_quintic() -> Vec<f64> {
    let steps = 4000;
    let mut roots = Vec::new();
    let x = |k: usize| -4.0 + 4.0 * k as f64 / steps as f64;
    for k in 0..steps {
        let (mut lo, mut hi) = (x(k), x(k + 1));
        let (flo, fhi) = (seed_quintic(lo), seed_quintic(hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo * fhi > 0.0 {
            continue;
        }
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if seed_quintic(lo) * seed_quintic(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots.retain(|&r| r < 0.0);
    roots
}

/// Largest second difference of `g` on a uniform 200-point grid of `[0, 1]`.
pub fn max_second_difference(q: &Vector, z: f64) -> f64 {
    let g: Vec<f64> = (0..200).map(|k| g_eval(q, z, k as f64 / 199.0)).collect();
    g.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_concave(q: &Vector, z: f64) -> bool {
    max_second_difference(q, z) <= 1e-8
}

/// `g` nonincreasing on a uniform 200-point grid of `[0, 1]` with
/// `g(1) < 1`.
///
/// Used to select continuation solutions: for `z >= 5` the converged `g`
/// bends upward just below `x = 1`, so the concavity test rejects it, while
/// spurious branches fail monotonicity.
pub fn is_unimodal(q: &Vector, z: f64) -> bool {
    let g: Vec<f64> = (0..200).map(|k| g_eval(q, z, k as f64 / 199.0)).collect();
    g.windows(2).all(|w| w[1] <= w[0]) && 1.0 + q.sum() < 1.0
}

/// Classification of a solve started from `(seed, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SeedOutcome {
    /// The start point already solves the system with `g(1) = 0`.
    Degenerate,
    NonConcave { q: Vec<f64> },
    Concave { q: Vec<f64> },
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub n_max: usize,
    pub partition: Partition,
    pub integrator: IntegratorConfig,
    /// Stalled runs are kept when `max |F|` at the nodes is at most this.
    pub accept_residual: f64,
    /// Consecutive non-improving dimensions before stopping.
    pub patience: usize,
    /// Starting value of `q_1` for `z = 2`, `n = 1`.
    pub seed: Option<f64>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            n_max: 12,
            partition: Partition::Auto,
            integrator: IntegratorConfig {
                rel_tol: 1e-10,
                abs_tol: 1e-12,
                h_init: 1e-3,
                h_min: 1e-12,
                h_max: 50.0,
                t_max: 400.0,
                residual_stop: 1e-10,
                max_steps: 200_000,
            },
            accept_residual: 1e-8,
            patience: 2,
            seed: None,
        }
    }
}

impl ContinuationOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidParameter("patience must be positive".into()));
        }
        if !(self.accept_residual > 0.0) {
            return Err(Error::InvalidParameter("accept_residual must be positive".into()));
        }
        self.integrator.validate()
    }
}

/// Default schedules: `Exp(1e-10, 0.5)` for regularized Newton and
/// `Exp(1, 0.5)` for the Gauss-Newton flows.
pub fn default_schedule(kind: FlowKind) -> Schedule {
    match kind {
        FlowKind::RegNewton => Schedule::Exp { eps0: 1e-10, nu: 0.5 },
        _ => Schedule::Exp { eps0: 1.0, nu: 0.5 },
    }
}

/// Outcome of one flow solve at fixed `(z, n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub z: f64,
    pub n: usize,
    pub q: Vec<f64>,
    /// `max |F|` at the nodes.
    pub residual: f64,
    pub discrepancy: f64,
    pub concave: bool,
    pub unimodal: bool,
    pub max_second_difference: f64,
    pub alpha: Option<f64>,
    pub status: String,
    pub t_final: f64,
    pub evaluations: usize,
}

/// Integrates `kind` on the system from `start` (which is also the flow's `z0`).
pub fn solve_stage(
    sys: &FeigenbaumSystem,
    start: &Vector,
    kind: FlowKind,
    schedule: Schedule,
    opts: &ContinuationOptions,
) -> Result<StageResult> {
    let op: Arc<dyn Operator> = Arc::new(sys.clone());
    let problem = Problem::new(format!("feigenbaum-z{}-n{}", sys.z(), sys.n()), op, start.clone())?;
    let flow = Flow::new(kind, problem, Some(schedule), None)?;
    let traj = integrate(&flow, &opts.integrator, &Monitors::default())?;
    let last = traj.final_sample().expect("trajectory has the initial sample");
    let q = Vector::from_column_slice(&last.z);
    let residual = sys.eval_system(&q)?.amax();
    let ok = matches!(traj.status, Status::ReachedResidual) || residual <= opts.accept_residual;
    if !ok {
        if let Status::FlowError { message, .. } = &traj.status {
            return Err(Error::SolveFailed(format!("z={} n={}: {message}", sys.z(), sys.n())));
        }
        return Err(Error::NoConvergence { iterations: traj.samples.len(), residual });
    }
    Ok(StageResult {
        z: sys.z(),
        n: sys.n(),
        residual,
        discrepancy: sys.discrepancy(&q)?,
        concave: is_concave(&q, sys.z()),
        unimodal: is_unimodal(&q, sys.z()),
        max_second_difference: max_second_difference(&q, sys.z()),
        alpha: alpha_from_coefficients(&q).ok(),
        q: q.iter().copied().collect(),
        status: traj.status.label().to_string(),
        t_final: last.t,
        evaluations: traj.evaluations,
    })
}

/// Solves `(z = 2, n = 2)` from `(seed, 0)` and classifies the result.
pub fn classify_seed(seed: f64, kind: FlowKind, schedule: Schedule, opts: &ContinuationOptions) -> SeedOutcome {
    let sys = match FeigenbaumSystem::with_partition(2.0, 2, opts.partition) {
        Ok(s) => s,
        Err(e) => return SeedOutcome::Failed { message: e.to_string() },
    };
    let start = Vector::from_vec(vec![seed, 0.0]);
    match solve_stage(&sys, &start, kind, schedule, opts) {
        Err(e) => SeedOutcome::Failed { message: e.to_string() },
        Ok(st) => {
            let q = Vector::from_column_slice(&st.q);
            if (1.0 + q.sum()).abs() < 1e-6 {
                SeedOutcome::Degenerate
            } else if st.concave {
                SeedOutcome::Concave { q: st.q }
            } else {
                SeedOutcome::NonConcave { q: st.q }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationResult {
    pub z: f64,
    pub method: String,
    pub q: Vec<f64>,
    /// `-1/g(1)` of the selected solution.
    pub alpha: f64,
    /// Dimension of the selected solution.
    pub n_selected: usize,
    /// The `n = 1` solutions along the degree chain.
    pub chain: Vec<StageResult>,
    pub stages: Vec<StageResult>,
    /// Message of the stage that ended the dimension sweep early, if any.
    pub stopped_by: Option<String>,
}

/// The degrees visited by the `n = 1` chain: `2, 3, ..., floor(z)`, then `z`.
fn degree_chain(z: f64) -> Vec<f64> {
    let mut out: Vec<f64> = (2..=z.floor() as usize).map(|k| k as f64).collect();
    if z.fract() != 0.0 {
        out.push(z);
    }
    out
}

/// Continuation in degree at `n = 1` followed by continuation in dimension
/// at the target degree; returns the unimodal stage with the smallest
/// discrepancy.
pub fn continuation_solve(
    z: f64,
    kind: FlowKind,
    schedule: Schedule,
    opts: &ContinuationOptions,
) -> Result<ContinuationResult> {
    opts.validate()?;
    schedule.validate()?;
    if !matches!(kind, FlowKind::RegNewton | FlowKind::RegGnSourcewise) {
        return Err(Error::InvalidParameter(format!("continuation supports newton and gn-sourcewise, got {kind}")));
    }
    if !(z >= 2.0) || !z.is_finite() {
        return Err(Error::InvalidParameter(format!("z must be finite and >= 2, got {z}")));
    }
    let seed = match opts.seed {
        Some(s) => s,
        None => seed_roots_quintic().into_iter().find(|r| (r + 1.4).abs() < 0.1).expect("quintic has a root near -1.40"),
    };

    let mut q = Vector::from_element(1, seed);
    let mut chain = Vec::new();
    for zz in degree_chain(z) {
        let sys = FeigenbaumSystem::with_partition(zz, 1, opts.partition)?;
        let st = solve_stage(&sys, &q, kind, schedule, opts)?;
        q = Vector::from_column_slice(&st.q);
        chain.push(st);
    }

    let mut stages = vec![chain.last().cloned().expect("chain is nonempty")];
    let mut best = f64::INFINITY;
    if stages[0].unimodal {
        best = stages[0].discrepancy;
    }
    let mut stall = 0;
    let mut stopped_by = None;
    for n in 2..=opts.n_max {
        let sys = FeigenbaumSystem::with_partition(z, n, opts.partition)?;
        let start = Vector::from_iterator(n, q.iter().copied().chain(std::iter::once(0.0)));
        let st = match solve_stage(&sys, &start, kind, schedule, opts) {
            Ok(st) => st,
            Err(e) => {
                stopped_by = Some(format!("n={n}: {e}"));
                break;
            }
        };
        q = Vector::from_column_slice(&st.q);
        let improves = st.unimodal && st.discrepancy < best;
        if improves {
            best = st.discrepancy;
            stall = 0;
        } else {
            stall += 1;
        }
        stages.push(st);
        if stall >= opts.patience {
            break;
        }
    }

    let selected = stages
        .iter()
        .filter(|s| s.unimodal && s.alpha.is_some())
        .min_by(|a, b| a.discrepancy.total_cmp(&b.discrepancy))
        .ok_or(Error::NoConcaveSolution { z })?
        .clone();
    Ok(ContinuationResult {
        z,
        method: kind.name().to_string(),
        q: selected.q.clone(),
        alpha: selected.alpha.expect("filtered"),
        n_selected: selected.n,
        chain,
        stages,
        stopped_by,
    })
}

/// Common decimal prefix of two values printed with 9 decimals.
///
/// Returns the agreed string (trailing `.` removed) and its number of
/// decimals, or `None` when even the integer parts differ.
pub fn accepted_digits(a: f64, b: f64) -> Option<(String, usize)> {
    let sa = format!("{a:.9}");
    let sb = format!("{b:.9}");
    let common: String = sa.chars().zip(sb.chars()).take_while(|(x, y)| x == y).map(|(x, _)| x).collect();
    let dot = sa.find('.')?;
    if common.len() <= dot {
        return if common.len() == dot && sb.find('.') == Some(dot) {
            Some((common, 0))
        } else {
            None
        };
    }
    let decimals = common.len() - dot - 1;
    let s = if decimals == 0 { common[..dot].to_string() } else { common };
    Some((s, decimals))
}

/// Whether `accepted` carries at least the decimals of `printed` and agrees
/// with it on them.
pub fn digits_match(accepted: &str, printed: &str) -> bool {
    let decimals = |s: &str| s.find('.').map_or(0, |d| s.len() - d - 1);
    let need = decimals(printed);
    if decimals(accepted) < need {
        return false;
    }
    let cut = accepted.find('.').map_or(accepted.len(), |d| if need == 0 { d } else { d + 1 + need });
    &accepted[..cut] == printed
}

/// Both regularized continuations at one degree and their cross-method
/// agreement in the printed sign convention `1/g(1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaComparison {
    pub z: f64,
    pub results: Vec<std::result::Result<ContinuationResult, String>>,
    /// Agreed digits of `1/g(1) = -alpha`.
    pub accepted: Option<String>,
    pub digits: usize,
}

pub fn compare_methods(z: f64, methods: &[(FlowKind, Schedule)], opts: &ContinuationOptions) -> AlphaComparison {
    let results: Vec<_> = methods
        .iter()
        .map(|&(kind, schedule)| continuation_solve(z, kind, schedule, opts).map_err(|e| e.to_string()))
        .collect();
    let alphas: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok()).map(|r| -r.alpha).collect();
    let (accepted, digits) = if alphas.len() == methods.len() && alphas.len() >= 2 {
        let mut acc = accepted_digits(alphas[0], alphas[1]);
        for &a in &alphas[2..] {
            acc = acc.and_then(|(s, _)| {
                let v: f64 = s.parse().ok()?;
                let (t, _) = accepted_digits(v, a)?;
                Some((t.clone(), t.find('.').map_or(0, |d| t.len() - d - 1)))
            });
        }
        match acc {
            Some((s, d)) => (Some(s), d),
            None => (None, 0),
        }
    } else {
        (None, 0)
    };
    AlphaComparison { z, results, accepted, digits }
}
