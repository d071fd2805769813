//! Small dense linear-algebra helpers: SPD solves with a pseudo-inverse
//! fallback, jittered Cholesky factors and Gaussian draws.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalue ratio below which a symmetric matrix is treated as singular.
pub const RANK_TOL: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

pub fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::dim(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpdSolution {
    pub x: DVector<f64>,
    /// Set when the pseudo-inverse path was taken.
    pub rank_deficient: bool,
    /// `λ_max / λ_min`, infinite for singular matrices.
    pub condition: f64,
}

/// Solves `Q x = rhs` for symmetric `Q`. Positive-definite systems go through
/// Cholesky; when `λ_min ≤ 1e-12 · λ_max` the minimum-norm pseudo-inverse
/// solution is returned and `rank_deficient` is set.
pub fn solve_spd(q: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<SpdSolution> {
    check_symmetric(q, "Gram matrix")?;
    if q.nrows() == 0 || rhs.len() != q.nrows() {
        return Err(Error::dim(format!(
            "solve_spd: matrix is {}x{}, rhs has {} entries",
            q.nrows(),
            q.ncols(),
            rhs.len()
        )));
    }
    let eig = SymmetricEigen::new(q.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if max > 0.0 && min > RANK_TOL * max {
        if let Some(chol) = Cholesky::new(q.clone()) {
            return Ok(SpdSolution {
                x: chol.solve(rhs),
                rank_deficient: false,
                condition,
            });
        }
    }
    log::warn!("solve_spd: matrix is numerically singular (condition {condition:e}); using pseudo-inverse");
    Ok(SpdSolution {
        x: pinv_from_eigen(&eig, max) * rhs,
        rank_deficient: true,
        condition,
    })
}

/// Moore–Penrose inverse of a symmetric matrix, truncating eigenvalues at
/// `RANK_TOL · λ_max`.
pub fn pinv_symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    pinv_from_eigen(&eig, max)
}

fn pinv_from_eigen(eig: &SymmetricEigen<f64, Dyn>, max: f64) -> DMatrix<f64> {
    let n = eig.eigenvalues.len();
    let mut out = DMatrix::zeros(n, n);
    if max <= 0.0 {
        return out;
    }
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > RANK_TOL * max {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// Symmetric square root and inverse square root via the eigendecomposition.
/// Eigenvalues are floored at `floor` before taking roots.
pub fn sym_sqrt_pair(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut root = DMatrix::zeros(n, n);
    let mut inv_root = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let lam = lam.max(floor);
        let v = eig.eigenvectors.column(k);
        let outer = v * v.transpose();
        root += &outer * lam.sqrt();
        inv_root += &outer / lam.sqrt();
    }
    (root, inv_root)
}

/// Jitter added to covariance diagonals before Cholesky factorization.
#[derive(Clone, Copy, Debug)]
pub struct JitterPolicy {
    /// Initial jitter relative to `trace / n`.
    pub relative: f64,
    /// Number of ×10 escalations after the first failure.
    pub escalations: u32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            relative: 1e-8,
            escalations: 3,
        }
    }
}

/// Lower Cholesky factor of `cov + jitter·I`.
#[derive(Clone, Debug)]
pub struct CovarianceFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CovarianceFactor {
    pub fn new(cov: &DMatrix<f64>, policy: JitterPolicy) -> Result<Self> {
        check_symmetric(cov, "covariance")?;
        let n = cov.nrows();
        if n == 0 {
            return Ok(Self {
                lower: DMatrix::zeros(0, 0),
                jitter: 0.0,
            });
        }
        let mean_diag = cov.trace() / n as f64;
        let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut jitter = policy.relative * base;
        for attempt in 0..=policy.escalations {
            let mut work = cov.clone();
            for i in 0..n {
                work[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(work) {
                if attempt > 0 {
                    log::debug!("covariance factorized after {attempt} jitter escalations ({jitter:e})");
                }
                return Ok(Self {
                    lower: chol.unpack(),
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        Err(Error::Numerical(format!(
            "Cholesky factorization failed for {n}x{n} covariance after {} jitter escalations",
            policy.escalations
        )))
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `mean + L z` with `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(self.dim(), rng);
        mean + &self.lower * z
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// One draw from `N(mean, cov + jitter·I)` under the default jitter policy.
pub fn cholesky_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != cov.nrows() {
        return Err(Error::dim(format!(
            "mean has {} entries, covariance is {}x{}",
            mean.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    let factor = CovarianceFactor::new(cov, JitterPolicy::default())?;
    Ok(factor.sample(mean, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let sol = solve_spd(&DMatrix::identity(2, 2), &DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(sol.x.as_slice(), &[3.0, 4.0]);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn scalar_gram_solve() {
        let q = DMatrix::from_element(1, 1, 1.0 / 3.0);
        let sol = solve_spd(&q, &DVector::from_element(1, 0.5)).unwrap();
        assert_abs_diff_eq!(sol.x[0], 1.5, epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_uses_pseudo_inverse() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let sol = solve_spd(&q, &DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert!(sol.rank_deficient);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_gives_zero_solution() {
        let sol = solve_spd(&DMatrix::zeros(1, 1), &DVector::from_element(1, 1.0)).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.x[0], 0.0);
    }

    #[test]
    fn nonsymmetric_is_contract_error() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let err = solve_spd(&q, &DVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn zero_covariance_sample_is_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mu = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let s = cholesky_sample(&mu, &DMatrix::zeros(3, 3), &mut rng).unwrap();
        assert!((s - mu).amax() < 1e-3);
    }

    #[test]
    fn sampling_is_deterministic() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let mu = DVector::zeros(2);
        let a = cholesky_sample(&mu, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = cholesky_sample(&mu, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indefinite_covariance_fails_after_escalation() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = CovarianceFactor::new(&cov, JitterPolicy::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn sqrt_pair_inverts() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let (r, ir) = sym_sqrt_pair(&m, 0.0);
        assert!((&r * &r - &m).amax() < 1e-12);
        assert!((&r * &ir - DMatrix::identity(2, 2)).amax() < 1e-12);
    }
}
