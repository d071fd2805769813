use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{
    inner_product_unchecked, GridFunction, QuadratureRule, RANK_TOL,
};

use super::{model_gradient, ComputerModel, Design};

/// The orthogonality constraints defining `F_θ̃`: gradients `g_j(·, θ̃)` on the
/// quadrature grid (and at the design points) plus their Gram matrix `Q`.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    anchor: Vec<f64>,
    gradients: Vec<GridFunction>,
    /// `g_j(xᵢ, θ̃)` at the design points, `n × q` each.
    design_gradients: Vec<DMatrix<f64>>,
    gram: DMatrix<f64>,
    condition: f64,
}

impl ConstraintSet {
    /// Assembles the constraint set from precomputed gradients.
    pub fn from_parts(
        anchor: Vec<f64>,
        gradients: Vec<GridFunction>,
        design_gradients: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if gradients.is_empty() {
            return Err(Error::dim("constraint set needs at least one gradient"));
        }
        if gradients.len() != design_gradients.len() {
            return Err(Error::dim("grid and design gradient counts differ"));
        }
        let q = gradients[0].q();
        let n = design_gradients[0].nrows();
        for (g, dg) in gradients.iter().zip(&design_gradients) {
            if !g.same_rule(&gradients[0]) || g.q() != q {
                return Err(Error::dim("gradients must share one rule and output dimension"));
            }
            if dg.ncols() != q || dg.nrows() != n {
                return Err(Error::dim("design gradients have inconsistent shape"));
            }
        }
        let gram = gram_matrix(&gradients);
        let eig = gram.clone().symmetric_eigenvalues();
        let (min, max) = (eig.min(), eig.max());
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(max > 0.0 && min > RANK_TOL * max) {
            log::warn!("constraint Gram matrix is numerically singular (condition {condition:e})");
        }
        Ok(Self {
            anchor,
            gradients,
            design_gradients,
            gram,
            condition,
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn gradients(&self) -> &[GridFunction] {
        &self.gradients
    }

    pub fn design_gradients(&self) -> &[DMatrix<f64>] {
        &self.design_gradients
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn rule(&self) -> &Arc<QuadratureRule> {
        self.gradients[0].rule()
    }

    pub fn p(&self) -> usize {
        self.gradients.len()
    }

    pub fn q(&self) -> usize {
        self.gradients[0].q()
    }

    pub fn n_design(&self) -> usize {
        self.design_gradients[0].nrows()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn is_rank_deficient(&self) -> bool {
        !(self.condition.is_finite() && self.condition < 1.0 / RANK_TOL)
    }

    /// Re-derives `Q` from the stored gradients.
    pub fn recompute_gram(&self) -> DMatrix<f64> {
        gram_matrix(&self.gradients)
    }
}

fn gram_matrix(gradients: &[GridFunction]) -> DMatrix<f64> {
    let p = gradients.len();
    let mut gram = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let v = inner_product_unchecked(&gradients[a], &gradients[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    gram
}

/// Builds `F_θ̃` at `anchor`: gradients on the rule and at the design points,
/// and the Gram matrix `Q_{jj'} = Σ_k ⟨g_{j,k}, g_{j',k}⟩`.
pub fn build_constraint_set(
    model: &ComputerModel,
    anchor: &[f64],
    rule: &Arc<QuadratureRule>,
    design: &Design,
) -> Result<ConstraintSet> {
    if !model.theta_domain().contains(anchor) {
        return Err(Error::config(format!("anchor {anchor:?} lies outside the parameter domain")));
    }
    let mut gradients = Vec::with_capacity(model.p());
    let mut design_gradients = Vec::with_capacity(model.p());
    for j in 0..model.p() {
        gradients.push(model_gradient(model, j, anchor, rule)?);
        design_gradients.push(model.gradient_many(j, anchor, design.points())?);
    }
    ConstraintSet::from_parts(anchor.to_vec(), gradients, design_gradients)
}
