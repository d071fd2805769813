//! Bias-function priors and their conditional samplers.
//!
//! A [`BiasPrior`] is prepared once for a fixed design, quadrature rule and
//! noise model; the resulting [`ConditionalSampler`] then draws the bias at
//! the design points and quadrature nodes given residuals `y − f(·, θ)`.
//! Draws are returned jointly on both point sets so they can be projected and
//! fed to the likelihood without re-evaluation.

mod basis;
mod gaussian;
mod kernel;
mod ogp;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{Design, NoiseModel};
use crate::numerics::{GridFunction, QuadratureRule};

pub use basis::{basis_conditional_draw, BSplineBasis, BasisExpansionPrior, CoefficientPosterior};
pub use gaussian::{gp_conditional_draw, GaussianConditional, GpPrior};
pub use kernel::{IndependentOutcomes, MaternKernel, StackedCovariance};
pub use ogp::{ogp_kernel, OgpKernel, OgpPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    Projected,
}

/// A bias function sampled at the design points (`n × q`) and on the
/// quadrature grid.
#[derive(Clone, Debug)]
pub struct BiasDraw {
    design_values: DMatrix<f64>,
    grid: GridFunction,
    provenance: Provenance,
}

impl BiasDraw {
    pub fn new(design_values: DMatrix<f64>, grid: GridFunction, provenance: Provenance) -> Result<Self> {
        if design_values.ncols() != grid.q() {
            return Err(Error::dim(format!(
                "design values have {} outcomes, grid values {}",
                design_values.ncols(),
                grid.q()
            )));
        }
        if design_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("bias draw has non-finite design values".into()));
        }
        Ok(Self {
            design_values,
            grid,
            provenance,
        })
    }

    /// Unpacks an outcome-major stacked vector: for each outcome `k`, the `n`
    /// design values followed by the grid values.
    pub fn from_stacked(
        stacked: &DVector<f64>,
        n: usize,
        rule: &Arc<QuadratureRule>,
        q: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let m = rule.len();
        if stacked.len() != q * (n + m) {
            return Err(Error::dim(format!(
                "stacked vector has {} entries, expected {}",
                stacked.len(),
                q * (n + m)
            )));
        }
        let design = DMatrix::from_fn(n, q, |i, k| stacked[k * (n + m) + i]);
        let grid = DMatrix::from_fn(m, q, |i, k| stacked[k * (n + m) + n + i]);
        Self::new(design, GridFunction::new(grid, rule.clone())?, provenance)
    }

    pub fn to_stacked(&self) -> DVector<f64> {
        let (n, m, q) = (self.n(), self.grid.values().nrows(), self.q());
        DVector::from_fn(q * (n + m), |idx, _| {
            let (k, i) = (idx / (n + m), idx % (n + m));
            if i < n {
                self.design_values[(i, k)]
            } else {
                self.grid.values()[(i - n, k)]
            }
        })
    }

    pub fn design_values(&self) -> &DMatrix<f64> {
        &self.design_values
    }

    pub fn grid(&self) -> &GridFunction {
        &self.grid
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n(&self) -> usize {
        self.design_values.nrows()
    }

    pub fn q(&self) -> usize {
        self.design_values.ncols()
    }
}

/// Mean and covariance of the stacked (outcome-major, design then grid)
/// conditional distribution.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Draws from `Π(b | θ, y)` for one prepared design/rule/noise combination.
pub trait ConditionalSampler: Send + Sync {
    fn n_design(&self) -> usize;

    fn q(&self) -> usize;

    fn rule(&self) -> &Arc<QuadratureRule>;

    /// `residuals` is `n × q`: field values minus model output at the design.
    fn draw(&self, residuals: &DMatrix<f64>, rng: &mut dyn RngCore) -> Result<BiasDraw>;

    /// Exact conditional moments, when the conditional law is Gaussian.
    fn gaussian_moments(&self, residuals: &DMatrix<f64>) -> Option<Result<GaussianMoments>>;

    /// Values of a raw draw at arbitrary points (`rows × q`).
    fn evaluate(&self, draw: &BiasDraw, points: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

pub trait BiasPrior: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn is_gaussian_conditional(&self) -> bool;

    /// True when prior realizations already satisfy the orthogonality
    /// constraints, so no projection step is needed.
    fn respects_constraints(&self) -> bool {
        false
    }

    fn prepare(
        &self,
        design: &Design,
        rule: &Arc<QuadratureRule>,
        noise: &NoiseModel,
    ) -> Result<Box<dyn ConditionalSampler>>;
}

pub(crate) fn check_residuals(residuals: &DMatrix<f64>, n: usize, q: usize) -> Result<()> {
    if residuals.nrows() != n || residuals.ncols() != q {
        return Err(Error::dim(format!(
            "residuals are {}x{}, expected {n}x{q}",
            residuals.nrows(),
            residuals.ncols()
        )));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("residuals contain non-finite values".into()));
    }
    Ok(())
}

pub(crate) fn check_raw(draw: &BiasDraw) -> Result<()> {
    if draw.provenance() != Provenance::Raw {
        return Err(Error::Contract(
            "only raw (unprojected) draws can be evaluated off-grid".into(),
        ));
    }
    Ok(())
}
