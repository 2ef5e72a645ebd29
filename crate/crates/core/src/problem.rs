use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, Matrix, Vector};

/// A map `F: R^n -> R^n`. Implementations must be reentrant.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &Vector) -> Vector;

    fn jacobian(&self, x: &Vector) -> Matrix {
        fd_jacobian(|v| self.eval(v), x)
    }
}

/// Central-difference step used by [`fd_jacobian`].
pub fn fd_step(x: &Vector) -> f64 {
    (1e-6 * x.amax()).max(1e-6)
}

/// Central-difference Jacobian with step `max(1e-6, 1e-6 |x|_inf)`.
pub fn fd_jacobian<F: Fn(&Vector) -> Vector>(f: F, x: &Vector) -> Matrix {
    let h = fd_step(x);
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        cols.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    Matrix::from_fn(m, n, |i, k| cols[k][i])
}

type VecFn = dyn Fn(&Vector) -> Vector + Send + Sync;
type MatFn = dyn Fn(&Vector) -> Matrix + Send + Sync;

/// Operator assembled from closures; the Jacobian falls back to central
/// differences when not supplied.
pub struct FnOperator {
    dim: usize,
    f: Box<VecFn>,
    jac: Option<Box<MatFn>>,
}

impl FnOperator {
    pub fn new(dim: usize, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        FnOperator { dim, f: Box::new(f), jac: None }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Box::new(j));
        self
    }
}

impl Operator for FnOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        match &self.jac {
            Some(j) => j(x),
            None => fd_jacobian(|v| (self.f)(v), x),
        }
    }
}

/// An equation `F(z) = 0` together with the constants the convergence
/// theorems consume.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    op: Arc<dyn Operator>,
    /// Bound on `|F'|`.
    pub n1: Option<f64>,
    /// Bound on `|F''|`.
    pub n2: Option<f64>,
    pub known_solution: Option<Vector>,
    pub z0: Vector,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("n1", &self.n1)
            .field("n2", &self.n2)
            .field("known_solution", &self.known_solution)
            .field("z0", &self.z0)
            .finish()
    }
}

impl Problem {
    pub fn new(name: impl Into<String>, op: Arc<dyn Operator>, z0: Vector) -> Result<Self> {
        let dim = op.dim();
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if z0.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: z0.len() });
        }
        if !z0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("initial point".into()));
        }
        let f0 = op.eval(&z0);
        if f0.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: f0.len() });
        }
        let j0 = op.jacobian(&z0);
        if j0.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: j0.ncols() });
        }
        Ok(Problem { name: name.into(), op, n1: None, n2: None, known_solution: None, z0 })
    }

    pub fn with_constants(mut self, n1: Option<f64>, n2: Option<f64>) -> Result<Self> {
        for (label, v) in [("N1", n1), ("N2", n2)] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("{label} must be finite and nonnegative, got {v}")));
                }
            }
        }
        self.n1 = n1;
        self.n2 = n2;
        Ok(self)
    }

    pub fn with_solution(mut self, y: Vector) -> Result<Self> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: y.len() });
        }
        self.known_solution = Some(y);
        Ok(self)
    }

    pub fn with_z0(mut self, z0: Vector) -> Result<Self> {
        if z0.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z0.len() });
        }
        self.z0 = z0;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        self.op.eval(x)
    }

    pub fn jacobian(&self, x: &Vector) -> Matrix {
        self.op.jacobian(x)
    }

    pub fn operator(&self) -> &Arc<dyn Operator> {
        &self.op
    }

    pub fn residual(&self, x: &Vector) -> f64 {
        self.eval(x).norm()
    }

    /// `|z0 - y|` when the solution is known.
    pub fn dist0(&self) -> Option<f64> {
        self.known_solution.as_ref().map(|y| (&self.z0 - y).norm())
    }

    pub fn require_n1(&self) -> Result<f64> {
        self.n1.ok_or(Error::MissingConstants("N1"))
    }

    pub fn require_n2(&self) -> Result<f64> {
        self.n2.ok_or(Error::MissingConstants("N2"))
    }

    /// Sampled estimates of N1 and N2 over the box `[lo, hi]`.
    ///
    /// N2 is estimated from central differences of the Jacobian along random
    /// unit directions. The result is a lower estimate of the true supremum.
    pub fn estimate_constants(&self, lo: &Vector, hi: &Vector, samples: usize, seed: u64) -> Result<ConstantEstimate> {
        let n = self.dim();
        if lo.len() != n || hi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: lo.len().min(hi.len()) });
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidParameter("sampling box has lo > hi".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n1 = 0.0f64;
        let mut n2 = 0.0f64;
        for _ in 0..samples.max(1) {
            let x = Vector::from_fn(n, |i, _| if lo[i] == hi[i] { lo[i] } else { rng.gen_range(lo[i]..=hi[i]) });
            let j = self.jacobian(&x);
            n1 = n1.max(spectral_norm(&j));
            let mut u = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let un = u.norm();
            if un == 0.0 {
                continue;
            }
            u /= un;
            let h = 1e-4 * (1.0 + x.amax());
            let dj = (self.jacobian(&(&x + &u * h)) - self.jacobian(&(&x - &u * h))) / (2.0 * h);
            n2 = n2.max(spectral_norm(&dj));
        }
        if !n1.is_finite() || !n2.is_finite() {
            return Err(Error::NonFinite("constant estimation".into()));
        }
        Ok(ConstantEstimate { n1, n2, samples: samples.max(1), heuristic: true })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantEstimate {
    pub n1: f64,
    pub n2: f64,
    pub samples: usize,
    /// Always true: sampled maxima bound the supremum from below only.
    pub heuristic: bool,
}
