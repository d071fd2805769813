use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComputerModel, ConstraintSet, FieldObservations, NoiseModel};
use crate::numerics::{standard_normal_vector, symmetrize, CovarianceFactor, JitterPolicy};
use crate::priors::{BiasDraw, BiasPrior, ConditionalSampler, Provenance};
use crate::projection::{
    constraint_matrix, functional_project, moment_project_nongaussian, relative_constraint_residual,
    ConstraintVariant, ProjectionReport, WhitenedProjector,
};

use super::ThetaPrior;

/// How conditional bias draws are mapped onto `F_θ̃`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Closed-form functional projection.
    #[default]
    Functional,
    /// Exact Gaussian conditioning on the discretized constraints.
    FiniteDim,
    /// Sample-moment projection (works for any prior).
    Moment,
    /// No projection; for priors that already respect the constraints.
    None,
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burnin: usize,
    pub seed: u64,
    pub projection: ProjectionKind,
    pub variant: ConstraintVariant,
    /// Draws per moment projection; `None` means `10 ×` the bias-vector length.
    pub moment_samples: Option<usize>,
    /// When false the θ-step targets the prior alone.
    pub likelihood: bool,
    pub store_draws: bool,
    pub diagnostics: bool,
    /// Acceptance rate targeted by the global proposal scale during burn-in.
    pub target_acceptance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            burnin: 1000,
            seed: 0,
            projection: ProjectionKind::Functional,
            variant: ConstraintVariant::Quadrature,
            moment_samples: None,
            likelihood: true,
            store_draws: false,
            diagnostics: false,
            target_acceptance: 0.3,
        }
    }
}

/// Tolerance of the per-iteration orthogonality check.
pub const CONSTRAINT_TOL: f64 = 1e-8;
const PROPOSAL_FLOOR: f64 = 1e-6;
const INITIAL_PROPOSAL_SD: f64 = 0.01;

/// Mutable state of one chain. The proposal lives in coordinates normalized
/// by the widths of `Θ`.
#[derive(Clone, Debug)]
pub struct ChainState {
    theta: Vec<f64>,
    bias: Option<BiasDraw>,
    proposal_cov: DMatrix<f64>,
    accept_count: usize,
    iter: usize,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn bias(&self) -> Option<&BiasDraw> {
        self.bias.as_ref()
    }

    pub fn proposal_cov(&self) -> &DMatrix<f64> {
        &self.proposal_cov
    }

    pub fn accept_count(&self) -> usize {
        self.accept_count
    }

    pub fn iter(&self) -> usize {
        self.iter
    }
}

/// Post-burn-in output of [`run_projection_sampler`].
#[derive(Clone, Debug)]
pub struct Chain {
    pub thetas: Vec<Vec<f64>>,
    pub loglik: Vec<f64>,
    pub accepted: Vec<bool>,
    pub max_constraint_residual: Vec<f64>,
    pub draws: Vec<BiasDraw>,
    pub reports: Vec<ProjectionReport>,
    pub acceptance_rate: f64,
    /// Final proposal covariance in the original θ units.
    pub proposal_cov: DMatrix<f64>,
    pub burnin: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn p(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.thetas.iter().map(|t| t[j]).collect()
    }
}

enum Projector {
    Functional,
    Linear(WhitenedProjector),
    Moment(usize),
    Identity,
}

struct Likelihood<'a> {
    y: &'a DMatrix<f64>,
    root: DMatrix<f64>,
    enabled: bool,
}

impl Likelihood<'_> {
    fn eval(&self, f: &DMatrix<f64>, bias: &DMatrix<f64>) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let r = self.y - f - bias;
        -0.5 * (r * &self.root).norm_squared()
    }
}

/// Welford accumulator for the empirical covariance of (normalized) θ.
struct RunningMoments {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningMoments {
    fn new(p: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(p),
            m2: DMatrix::zeros(p, p),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        let mut c = &self.m2 / (self.n.max(2) - 1) as f64;
        symmetrize(&mut c);
        c
    }
}

/// Gibbs sampler alternating (1) a conditional bias draw given the current
/// θ, (2) projection onto `F_θ̃`, (3) an adaptive Metropolis step for θ
/// given the projected bias.
///
/// `cs` must have been built at the anchor on the same design as `field`.
/// The θ proposal follows Haario et al.: empirical covariance of past draws
/// scaled by `2.38²/p` plus a floor, with a global scale tuned towards
/// `target_acceptance`; adaptation stops at the end of burn-in.
pub fn run_projection_sampler(
    field: &FieldObservations,
    model: &ComputerModel,
    prior: &dyn BiasPrior,
    theta_prior: &ThetaPrior,
    cs: &ConstraintSet,
    noise: &NoiseModel,
    config: &SamplerConfig,
) -> Result<Chain> {
    if config.iters <= config.burnin {
        return Err(Error::config(format!(
            "iters ({}) must exceed burnin ({})",
            config.iters, config.burnin
        )));
    }
    let (n, q, p) = (field.n(), field.q(), model.p());
    if model.q() != q || noise.q() != q || cs.q() != q || cs.n_design() != n || cs.p() != p {
        return Err(Error::dim("field data, model, noise and constraint set are inconsistent"));
    }
    if theta_prior.domain().dim() != p {
        return Err(Error::dim("θ prior has the wrong dimension"));
    }
    let domain = model.theta_domain().clone();
    let widths = domain.widths();
    let lower = domain.lower().to_vec();
    let to_theta = |u: &DVector<f64>| -> Vec<f64> { (0..p).map(|j| lower[j] + u[j] * widths[j]).collect() };
    let to_unit = |t: &[f64]| -> DVector<f64> { DVector::from_fn(p, |j, _| (t[j] - lower[j]) / widths[j]) };

    let sampler = prior.prepare(field.design(), cs.rule(), noise)?;
    let dim = q * (n + cs.rule().len());
    let projector = match config.projection {
        ProjectionKind::Functional => Projector::Functional,
        ProjectionKind::FiniteDim => {
            let moments = sampler
                .gaussian_moments(&DMatrix::zeros(n, q))
                .ok_or_else(|| Error::config(format!("finite_dim projection needs a Gaussian prior, got {}", prior.name())))??;
            Projector::Linear(WhitenedProjector::new(&moments.cov, &constraint_matrix(cs, config.variant))?)
        }
        ProjectionKind::Moment => Projector::Moment(config.moment_samples.unwrap_or(10 * dim)),
        ProjectionKind::None => {
            if !prior.respects_constraints() {
                log::warn!("prior {} does not respect the constraints and no projection is applied", prior.name());
            }
            Projector::Identity
        }
    };
    let check_constraints = match config.projection {
        ProjectionKind::Functional => true,
        ProjectionKind::FiniteDim | ProjectionKind::Moment => config.variant == ConstraintVariant::Quadrature,
        ProjectionKind::None => false,
    };

    let likelihood = Likelihood {
        y: field.values(),
        root: noise.whitening()?,
        enabled: config.likelihood,
    };

    let mut theta0 = cs.anchor().to_vec();
    domain.clamp(&mut theta0);
    let mut state = ChainState {
        theta: theta0,
        bias: None,
        proposal_cov: DMatrix::identity(p, p) * INITIAL_PROPOSAL_SD.powi(2),
        accept_count: 0,
        iter: 0,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
    };
    let mut f_cur = model.eval_many(field.design().points(), &state.theta)?;
    let mut moments = RunningMoments::new(p);
    let mut log_scale = 0.0f64;
    let adapt_start = (10 * p).max(50);
    let mut factor = CovarianceFactor::new(&state.proposal_cov, JitterPolicy::default())?;

    let kept = config.iters - config.burnin;
    let mut chain = Chain {
        thetas: Vec::with_capacity(kept),
        loglik: Vec::with_capacity(kept),
        accepted: Vec::with_capacity(kept),
        max_constraint_residual: Vec::with_capacity(kept),
        draws: Vec::new(),
        reports: Vec::new(),
        acceptance_rate: 0.0,
        proposal_cov: DMatrix::zeros(p, p),
        burnin: config.burnin,
    };
    let mut kept_accepts = 0usize;

    for iter in 0..config.iters {
        state.iter = iter;
        let sampler_err = |e: Error| Error::Sampler {
            iter,
            message: e.to_string(),
        };

        // 1–2: conditional bias draw, projected onto F_θ̃
        let residuals = field.values() - &f_cur;
        let (bias, report) = draw_projected(sampler.as_ref(), &projector, &residuals, cs, config, &mut state.rng)
            .map_err(sampler_err)?;
        let residual = relative_constraint_residual(&bias, cs).map_err(sampler_err)?;
        if check_constraints && residual > CONSTRAINT_TOL {
            return Err(Error::Sampler {
                iter,
                message: format!("projected bias violates the constraints (relative residual {residual:e})"),
            });
        }

        // 3: Metropolis step for θ given the projected bias
        let b = bias.design_values();
        let ll_cur = likelihood.eval(&f_cur, b);
        let u_cur = to_unit(&state.theta);
        let step = factor.lower() * standard_normal_vector(p, &mut state.rng);
        let proposal = to_theta(&(&u_cur + step));
        let mut accepted = false;
        let mut ll = ll_cur;
        let lp_prop = theta_prior.log_density(&proposal);
        if lp_prop.is_finite() {
            let f_prop = model.eval_many(field.design().points(), &proposal).map_err(sampler_err)?;
            let ll_prop = likelihood.eval(&f_prop, b);
            if !ll_prop.is_finite() || !ll_cur.is_finite() {
                return Err(Error::Sampler {
                    iter,
                    message: "non-finite log-likelihood".into(),
                });
            }
            let log_ratio = ll_prop + lp_prop - ll_cur - theta_prior.log_density(&state.theta);
            if log_ratio >= 0.0 || state.rng.random::<f64>().ln() < log_ratio {
                state.theta = proposal;
                f_cur = f_prop;
                ll = ll_prop;
                accepted = true;
                state.accept_count += 1;
            }
        }

        if iter < config.burnin {
            moments.push(&to_unit(&state.theta));
            let gain = (iter as f64 + 1.0).powf(-0.6);
            log_scale += gain * (f64::from(u8::from(accepted)) - config.target_acceptance);
            log_scale = log_scale.clamp(-10.0, 10.0);
            let base = if moments.n >= adapt_start {
                moments.covariance() * (2.38f64.powi(2) / p as f64) + DMatrix::identity(p, p) * PROPOSAL_FLOOR
            } else {
                DMatrix::identity(p, p) * INITIAL_PROPOSAL_SD.powi(2)
            };
            state.proposal_cov = base * (2.0 * log_scale).exp();
            factor = CovarianceFactor::new(&state.proposal_cov, JitterPolicy::default())?;
        } else {
            kept_accepts += usize::from(accepted);
            chain.thetas.push(state.theta.clone());
            chain.loglik.push(ll);
            chain.accepted.push(accepted);
            chain.max_constraint_residual.push(residual);
            if config.store_draws {
                chain.draws.push(bias.clone());
            }
            if config.diagnostics {
                chain.reports.push(report);
            }
        }
        state.bias = Some(bias);
    }

    chain.acceptance_rate = kept_accepts as f64 / kept as f64;
    if !(0.05..=0.7).contains(&chain.acceptance_rate) {
        log::warn!(
            "post-burn-in acceptance rate {:.3} is outside [0.05, 0.7]",
            chain.acceptance_rate
        );
    }
    let scale = DMatrix::from_diagonal(&DVector::from_vec(widths.clone()));
    chain.proposal_cov = &scale * &state.proposal_cov * &scale;
    Ok(chain)
}

fn draw_projected(
    sampler: &dyn ConditionalSampler,
    projector: &Projector,
    residuals: &DMatrix<f64>,
    cs: &ConstraintSet,
    config: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(BiasDraw, ProjectionReport)> {
    match projector {
        Projector::Functional => functional_project(&sampler.draw(residuals, rng)?, cs),
        Projector::Linear(proj) => {
            let raw = sampler.draw(residuals, rng)?;
            let (x, report) = proj.apply(&raw.to_stacked());
            let draw = BiasDraw::from_stacked(&x, raw.n(), sampler.rule(), raw.q(), Provenance::Projected)?;
            Ok((draw, report))
        }
        Projector::Moment(m) => moment_project_nongaussian(sampler, residuals, cs, *m, config.variant, rng),
        Projector::Identity => {
            let raw = sampler.draw(residuals, rng)?;
            let x = raw.to_stacked();
            // already in F_θ̃ by construction of the prior
            let draw = BiasDraw::from_stacked(&x, raw.n(), sampler.rule(), raw.q(), Provenance::Projected)?;
            let eta = crate::projection::constraint_values(&draw, cs)?;
            let report = ProjectionReport {
                lambda: vec![0.0; cs.p()],
                constraint_residuals: eta.iter().copied().collect(),
                gram_condition: cs.condition(),
                rank_deficient: cs.is_rank_deficient(),
            };
            Ok((draw, report))
        }
    }
}
