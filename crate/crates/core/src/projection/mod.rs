//! Projection of bias draws onto the orthogonality set `F_θ̃`.
//!
//! Three routes are provided:
//! - [`functional_project`]: the closed-form Hilbert-space projection
//!   `b* = b − Σ_j λ_j g_j` with `Qλ = η`, `η_j = Σ_k ⟨b_k, g_{j,k}⟩`;
//! - [`finite_dim_project_gaussian`] / [`whitened_project_sample`]: the
//!   Gaussian law of a discretized bias vector conditioned on `Aᵀx = 0`, and
//!   the covariance-whitened projection of individual samples;
//! - [`moment_project_nongaussian`]: the whitened projection with the
//!   covariance replaced by the sample covariance of conditional draws.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConstraintSet;
use crate::numerics::{
    inner_product_unchecked, pinv_symmetric, solve_spd, sym_sqrt_pair, symmetrize, GridFunction, RANK_TOL,
};
use crate::priors::{BiasDraw, ConditionalSampler, Provenance};

/// Gram condition number above which the pseudo-inverse path is reported.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionReport {
    pub lambda: Vec<f64>,
    /// Post-projection constraint values (`⟨g_j, b*⟩` or `Aᵀb*`).
    pub constraint_residuals: Vec<f64>,
    pub gram_condition: f64,
    pub rank_deficient: bool,
}

fn check_compatible(b: &BiasDraw, cs: &ConstraintSet) -> Result<()> {
    if !b.grid().same_rule(&cs.gradients()[0]) {
        return Err(Error::dim("bias draw and constraints use different quadrature rules"));
    }
    if b.q() != cs.q() || b.n() != cs.n_design() {
        return Err(Error::dim(format!(
            "bias draw is {}x{} at the design, constraints expect {}x{}",
            b.n(),
            b.q(),
            cs.n_design(),
            cs.q()
        )));
    }
    Ok(())
}

/// `η_j = Σ_k ⟨b_k, g_{j,k}⟩` for every constraint.
pub fn constraint_values(b: &BiasDraw, cs: &ConstraintSet) -> Result<DVector<f64>> {
    check_compatible(b, cs)?;
    Ok(DVector::from_iterator(
        cs.p(),
        cs.gradients().iter().map(|g| inner_product_unchecked(b.grid(), g)),
    ))
}

/// `max_j |⟨b, g_j⟩| / (‖b‖ ‖g_j‖)`, zero when either norm vanishes.
pub fn relative_constraint_residual(b: &BiasDraw, cs: &ConstraintSet) -> Result<f64> {
    let eta = constraint_values(b, cs)?;
    let bn = b.grid().norm();
    Ok(cs
        .gradients()
        .iter()
        .zip(eta.iter())
        .map(|(g, e)| {
            let scale = bn * g.norm();
            if scale > 0.0 {
                e.abs() / scale
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max))
}

/// Closed-form projection onto `F_θ̃`. The design-point values receive the
/// same correction `−Σ_j λ_j g_j(xᵢ)` as the grid values.
pub fn functional_project(b: &BiasDraw, cs: &ConstraintSet) -> Result<(BiasDraw, ProjectionReport)> {
    let eta = constraint_values(b, cs)?;
    let sol = solve_spd(cs.gram(), &eta)?;
    let mut grid = b.grid().values().clone();
    let mut design = b.design_values().clone();
    for (j, lam) in sol.x.iter().enumerate() {
        grid -= cs.gradients()[j].values() * *lam;
        design -= &cs.design_gradients()[j] * *lam;
    }
    let projected = BiasDraw::new(
        design,
        GridFunction::new(grid, b.grid().rule().clone())?,
        Provenance::Projected,
    )?;
    let residuals = constraint_values(&projected, cs)?;
    let rank_deficient = sol.rank_deficient || cs.condition() > CONDITION_LIMIT;
    Ok((
        projected,
        ProjectionReport {
            lambda: sol.x.iter().copied().collect(),
            constraint_residuals: residuals.iter().copied().collect(),
            gram_condition: cs.condition(),
            rank_deficient,
        },
    ))
}

/// Which discretization of the constraint functionals forms the columns of
/// `A` over the stacked (outcome-major, design then grid) bias vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintVariant {
    /// Quadrature-weighted gradients on the grid rows (zeros on design rows),
    /// so `Aᵀb` equals the functional constraint `⟨g_j, b⟩`.
    #[default]
    Quadrature,
    /// Gradients at the design points (zeros on grid rows).
    DesignPoints,
}

/// The `q(n + m) × p` constraint matrix for a stacked bias vector.
pub fn constraint_matrix(cs: &ConstraintSet, variant: ConstraintVariant) -> DMatrix<f64> {
    let (n, q, p) = (cs.n_design(), cs.q(), cs.p());
    let m = cs.rule().len();
    let w = cs.rule().weights();
    let mut a = DMatrix::zeros(q * (n + m), p);
    for j in 0..p {
        for k in 0..q {
            let base = k * (n + m);
            match variant {
                ConstraintVariant::Quadrature => {
                    let g = cs.gradients()[j].values();
                    for i in 0..m {
                        a[(base + n + i, j)] = w[i] * g[(i, k)];
                    }
                }
                ConstraintVariant::DesignPoints => {
                    let g = &cs.design_gradients()[j];
                    for i in 0..n {
                        a[(base + i, j)] = g[(i, k)];
                    }
                }
            }
        }
    }
    a
}

fn check_shapes(n: usize, cov: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<()> {
    if cov.nrows() != n || cov.ncols() != n || a.nrows() != n || a.ncols() == 0 {
        return Err(Error::Contract(format!(
            "projection shapes: vector {n}, covariance {}x{}, constraint matrix {}x{}",
            cov.nrows(),
            cov.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    crate::numerics::check_symmetric(cov, "covariance")
}

/// `(AᵀΣA)⁺` with a rank warning.
fn constrained_gram_inverse(cov: &DMatrix<f64>, a: &DMatrix<f64>) -> (DMatrix<f64>, f64, bool) {
    let mut m = a.transpose() * cov * a;
    symmetrize(&mut m);
    let eig = SymmetricEigen::new(m.clone());
    let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let deficient = !(max > 0.0 && min > RANK_TOL * max);
    if deficient {
        log::warn!("AᵀΣA is numerically singular (condition {condition:e}); using a pseudo-inverse");
    }
    (pinv_symmetric(&m), condition, deficient)
}

/// Mean and covariance of `x ~ N(μ, Σ)` conditioned on `Aᵀx = 0`:
/// `μ − ΣA(AᵀΣA)⁻¹Aᵀμ` and `Σ − ΣA(AᵀΣA)⁻¹AᵀΣ`.
pub fn finite_dim_project_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(mean.len(), cov, a)?;
    let (minv, _, _) = constrained_gram_inverse(cov, a);
    let sa = cov * a;
    let new_mean = mean - &sa * (&minv * (a.transpose() * mean));
    let mut new_cov = cov - &sa * &minv * sa.transpose();
    symmetrize(&mut new_cov);
    Ok((new_mean, new_cov))
}

/// `Σ^{1/2} (I − P_B) Σ^{-1/2} x` with `B = Σ^{1/2} A`: the point of the
/// constraint set nearest to `x` in the Mahalanobis metric of `Σ`, computed
/// literally through the symmetric square roots.
pub fn whitened_project_sample(x: &DVector<f64>, cov: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_shapes(x.len(), cov, a)?;
    let eig_min = cov.clone().symmetric_eigenvalues().min();
    if eig_min <= 0.0 {
        return Err(Error::Contract("whitened projection needs a positive definite covariance".into()));
    }
    let (root, inv_root) = sym_sqrt_pair(cov, 0.0);
    let b = &root * a;
    let mut btb = b.tr_mul(&b);
    symmetrize(&mut btb);
    let y = &inv_root * x;
    let proj = &b * (pinv_symmetric(&btb) * b.tr_mul(&y));
    Ok(root * (y - proj))
}

/// A precomputed whitened projection `x ↦ x − ΣA(AᵀΣA)⁺Aᵀx` — algebraically
/// the same map as [`whitened_project_sample`], without forming `Σ^{-1/2}`,
/// so it stays stable for nearly singular `Σ`.
#[derive(Clone, Debug)]
pub struct WhitenedProjector {
    a: DMatrix<f64>,
    /// `ΣA(AᵀΣA)⁺`
    gain: DMatrix<f64>,
    minv: DMatrix<f64>,
    condition: f64,
    rank_deficient: bool,
}

impl WhitenedProjector {
    pub fn new(cov: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Self> {
        check_shapes(cov.nrows(), cov, a)?;
        let (minv, condition, rank_deficient) = constrained_gram_inverse(cov, a);
        Ok(Self {
            gain: cov * a * &minv,
            minv,
            a: a.clone(),
            condition,
            rank_deficient,
        })
    }

    pub fn apply(&self, x: &DVector<f64>) -> (DVector<f64>, ProjectionReport) {
        let ax = self.a.tr_mul(x);
        let out = x - &self.gain * &ax;
        let lambda = (&self.minv * &ax).iter().copied().collect();
        let residuals = self.a.tr_mul(&out).iter().copied().collect();
        (
            out,
            ProjectionReport {
                lambda,
                constraint_residuals: residuals,
                gram_condition: self.condition,
                rank_deficient: self.rank_deficient,
            },
        )
    }

    pub fn constraint_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

/// Sample-moment projection for priors whose conditional law is only
/// available through draws: `samples` conditional draws give the sample
/// covariance `Φ` (plus a `1e-8·trace/dim` ridge), and a fresh draw is
/// whitened-projected under `Φ`.
pub fn moment_project_nongaussian(
    sampler: &dyn ConditionalSampler,
    residuals: &DMatrix<f64>,
    cs: &ConstraintSet,
    samples: usize,
    variant: ConstraintVariant,
    rng: &mut dyn RngCore,
) -> Result<(BiasDraw, ProjectionReport)> {
    let n = sampler.n_design();
    let q = sampler.q();
    let dim = q * (n + sampler.rule().len());
    if samples < 10 * dim {
        return Err(Error::config(format!(
            "moment projection needs at least {} samples for a {dim}-dimensional bias vector, got {samples}",
            10 * dim
        )));
    }
    if cs.n_design() != n || cs.q() != q || cs.rule().as_ref() != sampler.rule().as_ref() {
        return Err(Error::dim("constraint set does not match the sampler's design, rule or q"));
    }
    let mut draws = DMatrix::zeros(dim, samples);
    for s in 0..samples {
        draws.set_column(s, &sampler.draw(residuals, rng)?.to_stacked());
    }
    let beta = draws.column_mean();
    for mut col in draws.column_iter_mut() {
        col -= &beta;
    }
    let mut phi = &draws * draws.transpose() / (samples as f64 - 1.0);
    symmetrize(&mut phi);
    let a = constraint_matrix(cs, variant);
    let fresh = sampler.draw(residuals, rng)?.to_stacked();
    let mut ridge = 1e-8 * phi.trace() / dim as f64;
    for attempt in 0..4 {
        let mut reg = phi.clone();
        for i in 0..dim {
            reg[(i, i)] += ridge;
        }
        let projector = WhitenedProjector::new(&reg, &a)?;
        if !projector.rank_deficient {
            let (out, report) = projector.apply(&fresh);
            let draw = BiasDraw::from_stacked(&out, n, cs.rule(), q, Provenance::Projected)?;
            return Ok((draw, report));
        }
        log::debug!("moment projection: escalating ridge (attempt {attempt})");
        ridge *= 10.0;
    }
    Err(Error::Numerical(
        "sample covariance stays singular on the constraint directions after ridge escalation".into(),
    ))
}

#[cfg(test)]
mod tests;
