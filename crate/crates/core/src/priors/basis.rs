use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, Design, NoiseModel};
use crate::numerics::{pinv_symmetric, standard_normal_vector, symmetrize, QuadratureRule};

use super::{check_raw, check_residuals, BiasDraw, BiasPrior, ConditionalSampler, GaussianMoments, Provenance};

/// Cubic B-splines on an interval with a clamped, uniformly spaced knot
/// vector.
#[derive(Clone, Debug)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    size: usize,
}

const DEGREE: usize = 3;

impl BSplineBasis {
    pub fn new(size: usize, lower: f64, upper: f64) -> Result<Self> {
        if size < DEGREE + 1 {
            return Err(Error::config(format!("cubic spline basis needs K >= 4, got {size}")));
        }
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::config(format!("invalid spline interval [{lower}, {upper}]")));
        }
        let interior = size - DEGREE - 1;
        let mut knots = vec![lower; DEGREE + 1];
        for i in 1..=interior {
            knots.push(lower + (upper - lower) * i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(upper, DEGREE + 1));
        Ok(Self { knots, size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn span(&self, x: f64) -> usize {
        let last = self.size - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        if x <= self.knots[DEGREE] {
            return DEGREE;
        }
        let mut span = DEGREE;
        while span < last && x >= self.knots[span + 1] {
            span += 1;
        }
        span
    }

    /// All `K` basis values at `x` (points outside the interval are clamped).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.knots[0], self.knots[self.knots.len() - 1]);
        let span = self.span(x);
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.size];
        for (j, v) in n.iter().enumerate() {
            out[span - DEGREE + j] = *v;
        }
        out
    }

    /// `rows × K` basis matrix for one-column point sets.
    pub fn matrix(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != 1 {
            return Err(Error::dim("spline basis supports one-dimensional inputs only"));
        }
        let mut out = DMatrix::zeros(points.nrows(), self.size);
        for i in 0..points.nrows() {
            let row = self.eval(points[(i, 0)]);
            for (j, v) in row.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Independent Gaussian spline priors `b_k = Σ_j c_{kj} φ_j`,
/// `c_k ~ N(0, τ² I_K)`, optionally with every basis function projected
/// onto the orthogonality set beforehand.
#[derive(Clone, Debug)]
pub struct BasisExpansionPrior {
    pub size: usize,
    pub tau2: f64,
    constraints: Option<ConstraintSet>,
}

impl BasisExpansionPrior {
    pub fn new(size: usize, tau2: f64) -> Result<Self> {
        if size < DEGREE + 1 {
            return Err(Error::config(format!("basis prior needs K >= 4, got {size}")));
        }
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(Error::config(format!("basis prior needs tau2 >= 0, got {tau2}")));
        }
        Ok(Self {
            size,
            tau2,
            constraints: None,
        })
    }

    /// Replaces each basis function, per outcome, by its projection onto the
    /// functions orthogonal to that outcome's gradient components, so every
    /// realization satisfies the constraints of `cs`.
    pub fn orthogonalized(mut self, cs: &ConstraintSet) -> Self {
        self.constraints = Some(cs.clone());
        self
    }
}

/// Conjugate posterior of one outcome's coefficients.
#[derive(Clone, Debug)]
pub struct CoefficientPosterior {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the posterior precision.
    precision_lower: DMatrix<f64>,
}

impl CoefficientPosterior {
    /// `(BᵀB/σ² + I/τ²)⁻¹ Bᵀr/σ²` and its precision factor.
    pub fn new(basis: &DMatrix<f64>, residual: &DVector<f64>, noise_var: f64, tau2: f64) -> Result<Self> {
        let kdim = basis.ncols();
        if tau2 == 0.0 {
            return Ok(Self {
                mean: DVector::zeros(kdim),
                precision_lower: DMatrix::zeros(kdim, kdim),
            });
        }
        let mut precision = basis.tr_mul(basis) / noise_var;
        for i in 0..kdim {
            precision[(i, i)] += 1.0 / tau2;
        }
        symmetrize(&mut precision);
        let chol = match Cholesky::new(precision.clone()) {
            Some(c) => c,
            None => {
                log::warn!("basis posterior precision is ill-conditioned; adding ridge");
                let ridge = 1e-8 * precision.trace() / kdim as f64;
                for i in 0..kdim {
                    precision[(i, i)] += ridge;
                }
                Cholesky::new(precision)
                    .ok_or_else(|| Error::Numerical("basis posterior precision is not positive definite".into()))?
            }
        };
        let mean = chol.solve(&(basis.tr_mul(residual) / noise_var));
        Ok(Self {
            mean,
            precision_lower: chol.unpack(),
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let kdim = self.mean.len();
        if self.precision_lower.iter().all(|v| *v == 0.0) {
            return DMatrix::zeros(kdim, kdim);
        }
        let linv = self
            .precision_lower
            .solve_lower_triangular(&DMatrix::identity(kdim, kdim))
            .unwrap_or_else(|| DMatrix::zeros(kdim, kdim));
        linv.tr_mul(&linv)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let kdim = self.mean.len();
        let z = standard_normal_vector(kdim, rng);
        if self.precision_lower.iter().all(|v| *v == 0.0) {
            return self.mean.clone();
        }
        let step = self
            .precision_lower
            .transpose()
            .solve_upper_triangular(&z)
            .unwrap_or_else(|| DVector::zeros(kdim));
        &self.mean + step
    }
}

struct BasisSampler {
    raw_basis: BSplineBasis,
    raw_grid: DMatrix<f64>,
    /// Per-outcome design/grid basis matrices (identical unless orthogonalized).
    design_mats: Vec<DMatrix<f64>>,
    grid_mats: Vec<DMatrix<f64>>,
    noise_var: Vec<f64>,
    tau2: f64,
    rule: Arc<QuadratureRule>,
    orthogonalized: bool,
}

impl BasisSampler {
    fn posterior(&self, residuals: &DMatrix<f64>, k: usize) -> Result<CoefficientPosterior> {
        let r = residuals.column(k).into_owned();
        CoefficientPosterior::new(&self.design_mats[k], &r, self.noise_var[k], self.tau2)
    }
}

impl ConditionalSampler for BasisSampler {
    fn n_design(&self) -> usize {
        self.design_mats[0].nrows()
    }

    fn q(&self) -> usize {
        self.design_mats.len()
    }

    fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }

    fn draw(&self, residuals: &DMatrix<f64>, rng: &mut dyn RngCore) -> Result<BiasDraw> {
        let (n, q, m) = (self.n_design(), self.q(), self.rule.len());
        check_residuals(residuals, n, q)?;
        let mut design = DMatrix::zeros(n, q);
        let mut grid = DMatrix::zeros(m, q);
        for k in 0..q {
            let c = self.posterior(residuals, k)?.sample(rng);
            design.set_column(k, &(&self.design_mats[k] * &c));
            grid.set_column(k, &(&self.grid_mats[k] * &c));
        }
        BiasDraw::new(
            design,
            crate::numerics::GridFunction::new(grid, self.rule.clone())?,
            Provenance::Raw,
        )
    }

    fn gaussian_moments(&self, residuals: &DMatrix<f64>) -> Option<Result<GaussianMoments>> {
        let run = || -> Result<GaussianMoments> {
            let (n, q, m) = (self.n_design(), self.q(), self.rule.len());
            check_residuals(residuals, n, q)?;
            let big_n = n + m;
            let mut mean = DVector::zeros(q * big_n);
            let mut cov = DMatrix::zeros(q * big_n, q * big_n);
            for k in 0..q {
                let post = self.posterior(residuals, k)?;
                let mut stacked = DMatrix::zeros(big_n, self.raw_basis.size());
                stacked.rows_mut(0, n).copy_from(&self.design_mats[k]);
                stacked.rows_mut(n, m).copy_from(&self.grid_mats[k]);
                mean.rows_mut(k * big_n, big_n).copy_from(&(&stacked * &post.mean));
                cov.view_mut((k * big_n, k * big_n), (big_n, big_n))
                    .copy_from(&(&stacked * post.covariance() * stacked.transpose()));
            }
            Ok(GaussianMoments { mean, cov })
        };
        Some(run())
    }

    /// Recovers the coefficients from the grid values and evaluates the
    /// spline; unavailable for orthogonalized bases.
    fn evaluate(&self, draw: &BiasDraw, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_raw(draw)?;
        if self.orthogonalized {
            return Err(Error::Contract(
                "off-grid evaluation is not available for an orthogonalized basis".into(),
            ));
        }
        let w = self.rule.weights();
        let bw = DMatrix::from_fn(self.raw_grid.nrows(), self.raw_grid.ncols(), |i, j| {
            self.raw_grid[(i, j)] * w[i]
        });
        let gram = bw.tr_mul(&self.raw_grid);
        let basis_at = self.raw_basis.matrix(points)?;
        let mut out = DMatrix::zeros(points.nrows(), draw.q());
        for k in 0..draw.q() {
            let rhs = bw.tr_mul(&draw.grid().values().column(k));
            let c = pinv_symmetric(&gram) * rhs;
            out.set_column(k, &(&basis_at * c));
        }
        Ok(out)
    }
}

impl BiasPrior for BasisExpansionPrior {
    fn name(&self) -> &'static str {
        "basis"
    }

    fn is_gaussian_conditional(&self) -> bool {
        true
    }

    fn respects_constraints(&self) -> bool {
        self.constraints.is_some()
    }

    fn prepare(
        &self,
        design: &Design,
        rule: &Arc<QuadratureRule>,
        noise: &NoiseModel,
    ) -> Result<Box<dyn ConditionalSampler>> {
        if design.dim() != 1 || rule.dim() != 1 {
            return Err(Error::config("the spline basis prior supports one-dimensional X only"));
        }
        if !noise.is_diagonal() {
            return Err(Error::Contract(
                "basis prior needs independent outcomes; whiten the data first".into(),
            ));
        }
        let q = noise.q();
        let dom = design.domain();
        let basis = BSplineBasis::new(self.size, dom.lower()[0], dom.upper()[0])?;
        let raw_design = basis.matrix(design.points())?;
        let raw_grid = basis.matrix(rule.nodes())?;
        let mut design_mats = vec![raw_design.clone(); q];
        let mut grid_mats = vec![raw_grid.clone(); q];
        if let Some(cs) = &self.constraints {
            if cs.q() != q || cs.n_design() != design.len() || cs.rule().as_ref() != rule.as_ref() {
                return Err(Error::dim("constraint set does not match the design, rule or q"));
            }
            let w = rule.weights();
            for k in 0..q {
                let p = cs.p();
                let g_grid = DMatrix::from_fn(rule.len(), p, |i, j| cs.gradients()[j].values()[(i, k)]);
                let g_design = DMatrix::from_fn(design.len(), p, |i, j| cs.design_gradients()[j][(i, k)]);
                let gw = DMatrix::from_fn(rule.len(), p, |i, j| g_grid[(i, j)] * w[i]);
                let gram_k = gw.tr_mul(&g_grid);
                let coupling = gw.tr_mul(&raw_grid); // p × K
                let coef = pinv_symmetric(&gram_k) * coupling;
                grid_mats[k] = &raw_grid - &g_grid * &coef;
                design_mats[k] = &raw_design - &g_design * &coef;
            }
        }
        Ok(Box::new(BasisSampler {
            raw_basis: basis,
            raw_grid,
            design_mats,
            grid_mats,
            noise_var: (0..q).map(|k| noise.variance(k)).collect(),
            tau2: self.tau2,
            rule: rule.clone(),
            orthogonalized: self.constraints.is_some(),
        }))
    }
}

/// One conditional draw from the spline prior.
pub fn basis_conditional_draw(
    prior: &BasisExpansionPrior,
    residuals: &DMatrix<f64>,
    noise: &NoiseModel,
    design: &Design,
    rule: &Arc<QuadratureRule>,
    rng: &mut dyn RngCore,
) -> Result<BiasDraw> {
    prior.prepare(design, rule, noise)?.draw(residuals, rng)
}
