use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C(x, x') = σ² (1 + r/ψ) exp(−r/ψ)` with `r = ‖x − x'‖`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternKernel {
    pub sigma2: f64,
    pub psi: f64,
}

impl Default for MaternKernel {
    fn default() -> Self {
        Self { sigma2: 1.0, psi: 0.5 }
    }
}

impl MaternKernel {
    pub fn new(sigma2: f64, psi: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite() && psi > 0.0 && psi.is_finite()) {
            return Err(Error::config(format!(
                "Matérn kernel needs sigma2 > 0 and psi > 0, got ({sigma2}, {psi})"
            )));
        }
        Ok(Self { sigma2, psi })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt() / self.psi;
        self.sigma2 * (1.0 + r) * (-r).exp()
    }

    /// Kernel matrix between the rows of `a` and `b`.
    pub fn matrix(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra: Vec<Vec<f64>> = (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect();
        let rb: Vec<Vec<f64>> = (0..b.nrows()).map(|i| b.row(i).iter().copied().collect()).collect();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(&ra[i], &rb[j]))
    }
}

/// Prior covariance of a `q`-variate bias over point sets, laid out
/// outcome-major: row `k·|a| + i` is outcome `k` at point `aᵢ`.
pub trait StackedCovariance: Send + Sync {
    fn q(&self) -> usize;

    fn cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Independent, identically distributed GP priors on each outcome.
#[derive(Clone, Copy, Debug)]
pub struct IndependentOutcomes {
    pub kernel: MaternKernel,
    pub q: usize,
}

impl StackedCovariance for IndependentOutcomes {
    fn q(&self) -> usize {
        self.q
    }

    fn cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let block = self.kernel.matrix(a, b);
        let (na, nb) = (a.nrows(), b.nrows());
        let mut out = DMatrix::zeros(self.q * na, self.q * nb);
        for k in 0..self.q {
            out.view_mut((k * na, k * nb), (na, nb)).copy_from(&block);
        }
        out
    }
}
