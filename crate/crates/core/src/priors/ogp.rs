use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Design, NoiseModel};
use crate::numerics::{pinv_symmetric, symmetrize, QuadratureRule, RANK_TOL};

use super::{BiasPrior, ConditionalSampler, GaussianConditional, MaternKernel, StackedCovariance};

/// The orthogonal-GP covariance
/// `C_θ(x, x') = C(x, x') − h(x)ᵀ H⁻¹ h(x')` with
/// `h_j(x) = ∫ g_j(u) C(x, u) du` and `H_{jj'} = ∫∫ g_j(u) C(u, u') g_{j'}(u') du du'`.
///
/// For `q > 1` the base kernel acts independently on each outcome and the
/// constraint functionals sum over outcomes, so the correction couples them:
/// block `(k, k')` is `δ_{kk'} C − h_kᵀ H⁻¹ h_{k'}`.
#[derive(Clone, Debug)]
pub struct OgpKernel {
    base: MaternKernel,
    nodes: DMatrix<f64>,
    /// Per outcome: `W G_k`, node-weighted gradients (`m × p`).
    weighted_gradients: Vec<DMatrix<f64>>,
    h_matrix: DMatrix<f64>,
    h_pinv: DMatrix<f64>,
}

impl OgpKernel {
    pub fn base(&self) -> &MaternKernel {
        &self.base
    }

    /// `H` (`p × p`).
    pub fn h_matrix(&self) -> &DMatrix<f64> {
        &self.h_matrix
    }

    /// `h_k(a)`: rows are points, columns the `p` constraint functionals.
    pub fn h(&self, a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        self.base.matrix(a, &self.nodes) * &self.weighted_gradients[k]
    }
}

impl StackedCovariance for OgpKernel {
    fn q(&self) -> usize {
        self.weighted_gradients.len()
    }

    fn cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.q();
        let (na, nb) = (a.nrows(), b.nrows());
        let base = self.base.matrix(a, b);
        let ha: Vec<DMatrix<f64>> = (0..q).map(|k| self.h(a, k)).collect();
        let hb: Vec<DMatrix<f64>> = (0..q).map(|k| self.h(b, k)).collect();
        let mut out = DMatrix::zeros(q * na, q * nb);
        for k in 0..q {
            let left = &ha[k] * &self.h_pinv;
            for k2 in 0..q {
                let mut block = -(&left * hb[k2].transpose());
                if k == k2 {
                    block += &base;
                }
                out.view_mut((k * na, k2 * nb), (na, nb)).copy_from(&block);
            }
        }
        out
    }
}

/// Builds the orthogonal-GP kernel at the constraint set's anchor, with all
/// integrals evaluated by the constraint set's quadrature rule.
pub fn ogp_kernel(base: &MaternKernel, cs: &ConstraintSet, rule: &Arc<QuadratureRule>) -> Result<OgpKernel> {
    if cs.rule().as_ref() != rule.as_ref() {
        return Err(Error::dim("OGP kernel rule must match the constraint set's rule"));
    }
    let (m, p, q) = (rule.len(), cs.p(), cs.q());
    let w = rule.weights();
    let weighted_gradients: Vec<DMatrix<f64>> = (0..q)
        .map(|k| DMatrix::from_fn(m, p, |i, j| w[i] * cs.gradients()[j].values()[(i, k)]))
        .collect();
    let c_nodes = base.matrix(rule.nodes(), rule.nodes());
    let mut h_matrix = DMatrix::zeros(p, p);
    for wg in &weighted_gradients {
        h_matrix += wg.transpose() * &c_nodes * wg;
    }
    symmetrize(&mut h_matrix);
    let eig = h_matrix.clone().symmetric_eigenvalues();
    if !(eig.max() > 0.0 && eig.min() > RANK_TOL * eig.max()) {
        log::warn!("OGP H matrix is numerically singular; using a pseudo-inverse");
    }
    let h_pinv = pinv_symmetric(&h_matrix);
    Ok(OgpKernel {
        base: *base,
        nodes: rule.nodes().clone(),
        weighted_gradients,
        h_matrix,
        h_pinv,
    })
}

/// Gaussian-process prior with the orthogonal kernel: realizations satisfy
/// the constraints a priori, so no projection step is applied.
#[derive(Clone, Debug)]
pub struct OgpPrior {
    pub kernel: MaternKernel,
    constraints: ConstraintSet,
}

impl OgpPrior {
    pub fn new(kernel: MaternKernel, constraints: ConstraintSet) -> Self {
        Self { kernel, constraints }
    }
}

impl BiasPrior for OgpPrior {
    fn name(&self) -> &'static str {
        "ogp"
    }

    fn is_gaussian_conditional(&self) -> bool {
        true
    }

    fn respects_constraints(&self) -> bool {
        true
    }

    fn prepare(
        &self,
        design: &Design,
        rule: &Arc<QuadratureRule>,
        noise: &NoiseModel,
    ) -> Result<Box<dyn ConditionalSampler>> {
        let kernel = ogp_kernel(&self.kernel, &self.constraints, rule)?;
        if kernel.q() != noise.q() {
            return Err(Error::dim("OGP constraint set and noise model disagree on q"));
        }
        Ok(Box::new(GaussianConditional::new(Arc::new(kernel), design, rule, noise)?))
    }
}
