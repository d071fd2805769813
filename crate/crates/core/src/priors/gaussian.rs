use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{Design, NoiseModel};
use crate::numerics::{symmetrize, CovarianceFactor, JitterPolicy, QuadratureRule};

use super::{
    check_raw, check_residuals, BiasDraw, BiasPrior, ConditionalSampler, GaussianMoments,
    IndependentOutcomes, MaternKernel, Provenance, StackedCovariance,
};

/// Gaussian conditional of a Gaussian-process bias jointly at the design
/// points and quadrature nodes, given noisy residuals at the design points.
///
/// The conditional covariance does not depend on the residuals, so it is
/// factorized once; each draw costs one matrix–vector product for the mean
/// and one triangular product for the noise.
pub struct GaussianConditional {
    prior: Arc<dyn StackedCovariance>,
    points: DMatrix<f64>,
    rule: Arc<QuadratureRule>,
    n: usize,
    q: usize,
    /// `K_PO (K_OO + Σ)⁻¹`, `qN × qn`.
    gain: DMatrix<f64>,
    post_cov: DMatrix<f64>,
    factor: CovarianceFactor,
}

impl std::fmt::Debug for GaussianConditional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaussianConditional")
            .field("n", &self.n)
            .field("grid", &self.rule.len())
            .field("q", &self.q)
            .finish()
    }
}

pub(crate) fn union_points(design: &Design, rule: &QuadratureRule) -> Result<DMatrix<f64>> {
    if design.dim() != rule.dim() {
        return Err(Error::dim(format!(
            "design dimension {} but quadrature dimension {}",
            design.dim(),
            rule.dim()
        )));
    }
    let (n, m) = (design.len(), rule.len());
    Ok(DMatrix::from_fn(n + m, design.dim(), |i, c| {
        if i < n {
            design.points()[(i, c)]
        } else {
            rule.nodes()[(i - n, c)]
        }
    }))
}

impl GaussianConditional {
    pub fn new(
        prior: Arc<dyn StackedCovariance>,
        design: &Design,
        rule: &Arc<QuadratureRule>,
        noise: &NoiseModel,
    ) -> Result<Self> {
        let q = prior.q();
        if noise.q() != q {
            return Err(Error::dim(format!("prior has q = {q}, noise model q = {}", noise.q())));
        }
        let points = union_points(design, rule)?;
        let (n, big_n) = (design.len(), points.nrows());
        let k_full = prior.cov(&points, &points);
        let obs: Vec<usize> = (0..q).flat_map(|k| (0..n).map(move |i| k * big_n + i)).collect();
        let mut s = k_full.select_rows(&obs).select_columns(&obs);
        let sigma = noise.covariance();
        for a in 0..q {
            for b in 0..q {
                for i in 0..n {
                    s[(a * n + i, b * n + i)] += sigma[(a, b)];
                }
            }
        }
        symmetrize(&mut s);
        // noise usually makes S well conditioned; jitter only when needed
        let s_factor = CovarianceFactor::new(
            &s,
            JitterPolicy {
                relative: 0.0,
                escalations: 0,
            },
        )
        .or_else(|_| CovarianceFactor::new(&s, JitterPolicy::default()))?;
        let l = s_factor.lower();
        let k_op = k_full.select_rows(&obs);
        let v = l
            .solve_lower_triangular(&k_op)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let gain = l
            .transpose()
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?
            .transpose();
        let mut post_cov = &k_full - v.tr_mul(&v);
        symmetrize(&mut post_cov);
        let factor = CovarianceFactor::new(&post_cov, JitterPolicy::default())?;
        Ok(Self {
            prior,
            points,
            rule: rule.clone(),
            n,
            q,
            gain,
            post_cov,
            factor,
        })
    }

    pub fn posterior_covariance(&self) -> &DMatrix<f64> {
        &self.post_cov
    }

    pub fn stacked_len(&self) -> usize {
        self.points.nrows() * self.q
    }

    pub fn posterior_mean(&self, residuals: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_residuals(residuals, self.n, self.q)?;
        let r = DVector::from_fn(self.q * self.n, |idx, _| residuals[(idx % self.n, idx / self.n)]);
        Ok(&self.gain * r)
    }
}

impl ConditionalSampler for GaussianConditional {
    fn n_design(&self) -> usize {
        self.n
    }

    fn q(&self) -> usize {
        self.q
    }

    fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }

    fn draw(&self, residuals: &DMatrix<f64>, rng: &mut dyn RngCore) -> Result<BiasDraw> {
        let mean = self.posterior_mean(residuals)?;
        let x = self.factor.sample(&mean, rng);
        BiasDraw::from_stacked(&x, self.n, &self.rule, self.q, Provenance::Raw)
    }

    fn gaussian_moments(&self, residuals: &DMatrix<f64>) -> Option<Result<GaussianMoments>> {
        Some(self.posterior_mean(residuals).map(|mean| GaussianMoments {
            mean,
            cov: self.post_cov.clone(),
        }))
    }

    /// Kriging interpolation of the draw's joint values under the prior.
    fn evaluate(&self, draw: &BiasDraw, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_raw(draw)?;
        if points.ncols() != self.points.ncols() {
            return Err(Error::dim("evaluation points have the wrong dimension"));
        }
        let k_pp = self.prior.cov(&self.points, &self.points);
        let factor = CovarianceFactor::new(&k_pp, JitterPolicy::default())?;
        let l = factor.lower();
        let v = draw.to_stacked();
        let alpha = l
            .solve_lower_triangular(&v)
            .and_then(|z| l.transpose().solve_upper_triangular(&z))
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let k_xp = self.prior.cov(points, &self.points);
        let flat = k_xp * alpha;
        let rows = points.nrows();
        Ok(DMatrix::from_fn(rows, self.q, |i, k| flat[k * rows + i]))
    }
}

/// Independent Matérn GP priors on each (whitened) outcome.
#[derive(Clone, Copy, Debug, Default)]
pub struct GpPrior {
    pub kernel: MaternKernel,
}

impl BiasPrior for GpPrior {
    fn name(&self) -> &'static str {
        "gp"
    }

    fn is_gaussian_conditional(&self) -> bool {
        true
    }

    fn prepare(
        &self,
        design: &Design,
        rule: &Arc<QuadratureRule>,
        noise: &NoiseModel,
    ) -> Result<Box<dyn ConditionalSampler>> {
        let prior = Arc::new(IndependentOutcomes {
            kernel: self.kernel,
            q: noise.q(),
        });
        Ok(Box::new(GaussianConditional::new(prior, design, rule, noise)?))
    }
}

/// One conditional GP draw at the design points and quadrature nodes.
pub fn gp_conditional_draw(
    kernel: &MaternKernel,
    residuals: &DMatrix<f64>,
    noise: &NoiseModel,
    design: &Design,
    rule: &Arc<QuadratureRule>,
    rng: &mut dyn RngCore,
) -> Result<BiasDraw> {
    GpPrior { kernel: *kernel }
        .prepare(design, rule, noise)?
        .draw(residuals, rng)
}
