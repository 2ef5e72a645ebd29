//! Dense linear algebra on Euclidean R^n.
//!
//! Factorizations come from nalgebra; this module adds the regularized
//! solves, the Gram map and spectral projectors the flows are built on.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Reciprocal condition number below which a matrix is treated as singular.
pub const RCOND_SINGULAR: f64 = 1e-14;

const SYMMETRY_TOL: f64 = 1e-10;

fn check_square(a: &Matrix) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    Ok(a.nrows())
}

fn check_len(v: &Vector, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    Ok(())
}

/// Solves `(A + eps I) x = b` by LU with partial pivoting and one step of
/// iterative refinement.
pub fn regularized_solve(a: &Matrix, eps: f64, b: &Vector) -> Result<Vector> {
    let n = check_square(a)?;
    check_len(b, n)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    ensure_finite(a.as_slice(), "regularized_solve matrix")?;
    ensure_finite(b.as_slice(), "regularized_solve rhs")?;

    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += eps;
    }
    lu_solve_refined(&m, b)
}

fn lu_solve_refined(m: &Matrix, b: &Vector) -> Result<Vector> {
    let lu = m.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or_else(|| Error::SolveFailed("matrix is exactly singular".into()))?;
    let r = b - m * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    ensure_finite(x.as_slice(), "linear solve result")?;
    Ok(x)
}

/// Reciprocal 2-norm condition number `sigma_min / sigma_max`.
pub fn rcond(a: &Matrix) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0.0;
    }
    sv.min() / max
}

/// Solves `A x = b` without regularization, refusing matrices whose
/// reciprocal condition number is below [`RCOND_SINGULAR`].
pub fn solve_checked(a: &Matrix, b: &Vector) -> Result<Vector> {
    let n = check_square(a)?;
    check_len(b, n)?;
    ensure_finite(a.as_slice(), "solve_checked matrix")?;
    ensure_finite(b.as_slice(), "solve_checked rhs")?;
    let rc = rcond(a);
    if !(rc >= RCOND_SINGULAR) {
        return Err(Error::SolveFailed(format!("reciprocal condition number {rc:.3e} below {RCOND_SINGULAR:e}")));
    }
    lu_solve_refined(a, b)
}

/// `J^T J`, symmetrized to remove rounding asymmetry.
pub fn gram_map(j: &Matrix) -> Result<Matrix> {
    ensure_finite(j.as_slice(), "gram_map input")?;
    let t = j.transpose() * j;
    Ok(symmetrize(&t))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Solves `(J^T J + eps I) d = J^T f + eps s` as the least-squares problem
/// `[J; sqrt(eps) I] d = [f; sqrt(eps) s]`, which avoids squaring the
/// condition number of `J`.
pub fn regularized_lstsq(j: &Matrix, eps: f64, f: &Vector, s: &Vector) -> Result<Vector> {
    let (m, n) = j.shape();
    check_len(f, m)?;
    check_len(s, n)?;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    ensure_finite(j.as_slice(), "regularized_lstsq matrix")?;
    ensure_finite(f.as_slice(), "regularized_lstsq rhs")?;

    let root = eps.sqrt();
    let mut aug = Matrix::zeros(m + n, n);
    aug.view_mut((0, 0), (m, n)).copy_from(j);
    let mut rhs = Vector::zeros(m + n);
    rhs.rows_mut(0, m).copy_from(f);
    for i in 0..n {
        aug[(m + i, i)] = root;
        rhs[m + i] = root * s[i];
    }
    let qr = aug.qr();
    let qtb = qr.q().transpose() * rhs;
    let d = qr
        .r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::SolveFailed("singular triangular factor".into()))?;
    ensure_finite(d.as_slice(), "regularized_lstsq result")?;
    Ok(d)
}

/// Eigendecomposition of a symmetric PSD matrix, eigenvalues sorted
/// descending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SpectralDecomposition {
    pub fn new(t: &Matrix) -> Result<Self> {
        let n = check_square(t)?;
        ensure_finite(t.as_slice(), "spectral decomposition input")?;
        let scale = t.amax().max(1.0);
        let asym = (t - t.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidParameter(format!("matrix not symmetric (max asymmetry {asym:.3e})")));
        }
        let eig = SymmetricEigen::try_new(symmetrize(t), f64::EPSILON, 1000 * n.max(1))
            .ok_or(Error::EigFailed)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = Matrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            eigenvectors.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok(SpectralDecomposition { eigenvalues, eigenvectors })
    }

    /// Number of eigenvalues `>= eps`.
    pub fn count_at_least(&self, eps: f64) -> usize {
        self.eigenvalues.iter().take_while(|&&l| l >= eps).count()
    }

    /// Projector onto the span of the leading `k` eigenvectors.
    pub fn leading_projector(&self, k: usize) -> Matrix {
        let u = self.eigenvectors.columns(0, k);
        u * u.transpose()
    }
}

/// `P = sum over eigenvalues >= eps of u u^T`.
pub fn spectral_projector(t: &Matrix, eps: f64) -> Result<Matrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let dec = SpectralDecomposition::new(t)?;
    Ok(dec.leading_projector(dec.count_at_least(eps)))
}

/// Spectral projectors of a fixed matrix for every possible cutoff,
/// precomputed so that lookup by `eps` is read-only.
#[derive(Debug, Clone)]
pub struct ProjectorCache {
    decomposition: SpectralDecomposition,
    projectors: Vec<Matrix>,
}

impl ProjectorCache {
    pub fn new(t: &Matrix) -> Result<Self> {
        let decomposition = SpectralDecomposition::new(t)?;
        let n = decomposition.eigenvalues.len();
        let projectors = (0..=n).map(|k| decomposition.leading_projector(k)).collect();
        Ok(ProjectorCache { decomposition, projectors })
    }

    pub fn projector(&self, eps: f64) -> &Matrix {
        &self.projectors[self.decomposition.count_at_least(eps)]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.decomposition.eigenvalues
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let b = random_matrix(rng, n, n);
        &b * b.transpose() + Matrix::identity(n, n) * 0.1
    }

    #[test]
    fn zero_matrix_identity_case() {
        let x = regularized_solve(&Matrix::zeros(2, 2), 1.0, &Vector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn diagonal_case() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let x = regularized_solve(&a, 0.5, &Vector::from_vec(vec![3.0, 5.0])).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_explicit_inverse_on_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_spd(&mut rng, 5);
            let b = Vector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
            let eps = 1e-3;
            let x = regularized_solve(&a, eps, &b).unwrap();
            let inv = (&a + Matrix::identity(5, 5) * eps).try_inverse().unwrap();
            let oracle = inv * &b;
            assert!((x - oracle).amax() <= 1e-10);
        }
    }

    #[test]
    fn residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 6);
        let b = Vector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let x = regularized_solve(&a, 2.0, &b).unwrap();
        let r = (&a + Matrix::identity(6, 6) * 2.0) * &x - &b;
        assert!(r.norm() <= 1e-12 * (b.norm() + 1.0));
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        let err = regularized_solve(&a, 1.0, &Vector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn exact_singularity_reported() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![-1.0, 2.0]));
        let err = regularized_solve(&a, 1.0, &Vector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::SolveFailed(_)));
    }

    #[test]
    fn solve_checked_rejects_rank_deficient() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(solve_checked(&a, &Vector::from_vec(vec![1.0, 1.0])), Err(Error::SolveFailed(_))));
        let b = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = solve_checked(&b, &Vector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gram_examples() {
        assert_eq!(gram_map(&Matrix::identity(2, 2)).unwrap(), Matrix::identity(2, 2));
        let j = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert_eq!(gram_map(&j).unwrap(), Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
    }

    #[test]
    fn gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let j = random_matrix(&mut rng, 4, 3);
            let t = gram_map(&j).unwrap();
            let eig = SymmetricEigen::new(t);
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        }
    }

    #[test]
    fn lstsq_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let j = random_matrix(&mut rng, 4, 4);
            let f = Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let s = Vector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let eps = 0.3;
            let d = regularized_lstsq(&j, eps, &f, &s).unwrap();
            let rhs = j.transpose() * &f + &s * eps;
            let oracle = regularized_solve(&gram_map(&j).unwrap(), eps, &rhs).unwrap();
            assert!((d - oracle).amax() <= 1e-12);
        }
    }

    #[test]
    fn projector_diagonal_examples() {
        let t = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 0.1]));
        let p = spectral_projector(&t, 1.0).unwrap();
        assert!((p - Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))).amax() < 1e-14);
        let t = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 2.0]));
        let p = spectral_projector(&t, 1.0).unwrap();
        assert!((p - Matrix::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn projector_rank_matches_eigen_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let b = random_matrix(&mut rng, 5, 5);
            let t = &b * b.transpose();
            let mut ev: Vec<f64> = SymmetricEigen::new(t.clone()).eigenvalues.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let eps = ev[2];
            let expected = ev.iter().filter(|&&l| l >= eps).count();
            let p = spectral_projector(&t, eps).unwrap();
            assert_relative_eq!(p.trace(), expected as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn projector_rejects_asymmetric() {
        let t = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(spectral_projector(&t, 0.5).is_err());
    }

    #[test]
    fn cache_matches_direct_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = random_matrix(&mut rng, 4, 4);
        let t = &b * b.transpose();
        let cache = ProjectorCache::new(&t).unwrap();
        for eps in [1e-6, 0.01, 0.1, 0.5, 1.0, 3.0, 100.0] {
            let direct = spectral_projector(&t, eps).unwrap();
            assert!((cache.projector(eps) - direct).amax() < 1e-12);
        }
    }

    fn spd_strategy(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
            let b = Matrix::from_vec(n, n, v);
            &b * b.transpose()
        })
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vector> {
        proptest::collection::vec(-10.0f64..10.0, n).prop_map(Vector::from_vec)
    }

    proptest! {
        #[test]
        fn solve_is_linear_in_rhs(a in spd_strategy(4), b1 in vec_strategy(4), b2 in vec_strategy(4), eps in 1e-3f64..10.0) {
            let x1 = regularized_solve(&a, eps, &b1).unwrap();
            let x2 = regularized_solve(&a, eps, &b2).unwrap();
            let x12 = regularized_solve(&a, eps, &(&b1 + &b2)).unwrap();
            prop_assert!((x12 - x1 - x2).amax() <= 1e-9);
        }

        #[test]
        fn resolvent_norm_bounded_by_inverse_eps(a in spd_strategy(4), b in vec_strategy(4), eps in 1e-3f64..10.0) {
            let x = regularized_solve(&a, eps, &b).unwrap();
            prop_assert!(x.norm() <= b.norm() / eps * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn half_power_resolvent_bound(a in spd_strategy(4), eps in 1e-4f64..10.0) {
            let eig = SymmetricEigen::new(a);
            let worst = eig.eigenvalues.iter().map(|&s| s.max(0.0).sqrt() / (s.max(0.0) + eps)).fold(0.0, f64::max);
            prop_assert!(worst <= 1.0 / (2.0 * eps.sqrt()) * (1.0 + 1e-12));
        }

        #[test]
        fn projector_is_orthogonal_and_commutes(a in spd_strategy(4), eps in 1e-3f64..2.0) {
            let p = spectral_projector(&a, eps).unwrap();
            prop_assert!((&p * &p - &p).amax() <= 1e-9);
            prop_assert!((&p - p.transpose()).amax() <= 1e-9);
            prop_assert!((&p * &a - &a * &p).amax() <= 1e-9);
        }
    }
}
