//! Anchor estimation, the `L²` loss, the projection sampler (draw bias →
//! project → adaptive Metropolis for θ) and posterior summaries.

mod sampler;
mod summary;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::reference::{normal_cdf, LinearlyTransformed};
use crate::model::{ComputerModel, FieldObservations, NoiseModel};
use crate::numerics::{latin_hypercube, multistart_nelder_mead, BoxDomain, NelderMeadOptions, QuadratureRule};

pub use crate::bench::coverage_experiment;
pub use sampler::{run_projection_sampler, Chain, ChainState, ProjectionKind, SamplerConfig};
pub use summary::{
    effective_sample_size, read_chain_csv, summarize_chain, summarize_draws, write_chain_csv, PosteriorSummary,
};

/// Prior SD `γ` of each calibration parameter.
pub const DEFAULT_PRIOR_SD: f64 = 10.0;

/// Independent `N(0, γ²)` priors on each coordinate, truncated to `Θ`.
#[derive(Clone, Debug)]
pub struct ThetaPrior {
    sd: f64,
    domain: BoxDomain,
}

impl ThetaPrior {
    pub fn new(sd: f64, domain: BoxDomain) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::config(format!("prior SD must be positive, got {sd}")));
        }
        Ok(Self { sd, domain })
    }

    pub fn standard(domain: BoxDomain) -> Self {
        Self {
            sd: DEFAULT_PRIOR_SD,
            domain,
        }
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    /// Unnormalized log density; `-∞` outside `Θ`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if !self.domain.contains(theta) {
            return f64::NEG_INFINITY;
        }
        -0.5 * theta.iter().map(|t| (t / self.sd).powi(2)).sum::<f64>()
    }

    /// Marginal CDF of coordinate `j` under the truncated prior.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.domain.lower()[j], self.domain.upper()[j]);
        let (a, b) = (normal_cdf(lo / self.sd), normal_cdf(hi / self.sd));
        ((normal_cdf(x.clamp(lo, hi) / self.sd) - a) / (b - a)).clamp(0.0, 1.0)
    }
}

/// The data a loss is measured against.
pub enum LossTarget<'a> {
    /// The real process `y_R`, integrated by quadrature.
    Function(&'a dyn Fn(&[f64]) -> Vec<f64>),
    /// Field observations; the loss is the mean square over all `n·q` entries.
    Field(&'a FieldObservations),
}

/// `Σ_k ∫ (y_{R,k} − f_k(·, t))²` by quadrature, or the empirical mean
/// square `(1/nq) Σ_k Σ_i (y_{F,k}(xᵢ) − f_k(xᵢ, t))²` for field data
/// (`rule` is ignored then).
pub fn l2_loss(target: LossTarget<'_>, model: &ComputerModel, t: &[f64], rule: &QuadratureRule) -> Result<f64> {
    if !model.theta_domain().contains(t) {
        return Err(Error::config(format!("parameter {t:?} lies outside the domain")));
    }
    match target {
        LossTarget::Function(truth) => {
            let f = model.eval_many(rule.nodes(), t)?;
            let w = rule.weights();
            let mut acc = 0.0;
            for i in 0..rule.len() {
                let y = truth(&rule.node(i));
                if y.len() != f.ncols() {
                    return Err(Error::dim(format!("truth has {} outcomes, model {}", y.len(), f.ncols())));
                }
                acc += w[i] * y.iter().enumerate().map(|(k, v)| (v - f[(i, k)]).powi(2)).sum::<f64>();
            }
            Ok(acc)
        }
        LossTarget::Field(field) => {
            if field.q() != model.q() {
                return Err(Error::dim(format!("field has q = {}, model q = {}", field.q(), model.q())));
            }
            let f = model.eval_many(field.design().points(), t)?;
            Ok((field.values() - f).norm_squared() / (field.n() * field.q()) as f64)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnchorEstimate {
    pub theta: Vec<f64>,
    pub loss: f64,
    pub converged_starts: usize,
}

pub const ANCHOR_STARTS: usize = 10;

/// `θ̃ = argmin_t (1/nq) Σ (y_F − f(·, t))²` by Nelder–Mead from
/// [`ANCHOR_STARTS`] Latin-hypercube starts over `Θ`.
pub fn estimate_anchor(field: &FieldObservations, model: &ComputerModel) -> Result<AnchorEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    estimate_anchor_from(field, model, &latin_hypercube(ANCHOR_STARTS, model.theta_domain(), &mut rng))
}

pub fn estimate_anchor_from(
    field: &FieldObservations,
    model: &ComputerModel,
    starts: &[Vec<f64>],
) -> Result<AnchorEstimate> {
    if field.n() == 0 {
        return Err(Error::config("anchor estimation needs at least one observation"));
    }
    if field.q() != model.q() || field.design().dim() != model.d() {
        return Err(Error::dim("field data and model disagree on q or d"));
    }
    let scale = (field.n() * field.q()) as f64;
    let points = field.design().points();
    let objective = |t: &[f64]| -> Result<f64> {
        let f = model.eval_many(points, t)?;
        Ok((field.values() - f).norm_squared() / scale)
    };
    let report = multistart_nelder_mead(objective, starts, model.theta_domain(), &NelderMeadOptions::default())?;
    let mut theta = report.best.x.clone();
    model.theta_domain().clamp(&mut theta);
    Ok(AnchorEstimate {
        theta,
        loss: report.best.value,
        converged_starts: report.runs.iter().filter(|r| r.converged).count(),
    })
}

/// Field data and model transformed by `Σ̂_F^{-1/2}`, so the noise is
/// `N(0, I_q)`.
#[derive(Clone, Debug)]
pub struct WhitenedProblem {
    pub field: FieldObservations,
    pub model: ComputerModel,
    pub noise: NoiseModel,
    pub transform: DMatrix<f64>,
}

pub fn whiten(field: &FieldObservations, model: &ComputerModel, noise: &NoiseModel) -> Result<WhitenedProblem> {
    if noise.q() != field.q() || noise.q() != model.q() {
        return Err(Error::dim("noise, field data and model disagree on q"));
    }
    let w = noise.whitening()?;
    let values = field.values() * w.transpose();
    let sim = LinearlyTransformed::new(model.simulator().clone(), w.clone())?;
    Ok(WhitenedProblem {
        field: FieldObservations::new(field.design().clone(), values)?,
        model: ComputerModel::with_gradient_mode(Arc::new(sim), model.theta_domain().clone(), model.gradient_mode())?,
        noise: NoiseModel::identity(noise.q()),
        transform: w,
    })
}
