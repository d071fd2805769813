use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::{BoxDomain, GridFunction, QuadratureRule};

/// A deterministic computer model `f: X × Θ → ℝ^q`.
///
/// Implementations must be safe to evaluate concurrently.
pub trait Simulator: Send + Sync {
    /// Dimension `d` of the controllable input `x`.
    fn input_dim(&self) -> usize;
    /// Dimension `p` of the calibration parameter `t`.
    fn param_dim(&self) -> usize;
    /// Number of outcomes `q`.
    fn output_dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates every row of `xs` at the same parameter, returning `n × q`.
    fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.output_dim();
        let mut out = DMatrix::zeros(xs.nrows(), q);
        let mut x = vec![0.0; xs.ncols()];
        for i in 0..xs.nrows() {
            for (k, v) in x.iter_mut().enumerate() {
                *v = xs[(i, k)];
            }
            let y = self.eval(&x, t)?;
            for k in 0..q {
                out[(i, k)] = y[k];
            }
        }
        Ok(out)
    }

    fn has_analytic_gradient(&self) -> bool {
        false
    }

    /// `∂f/∂t_j (x, t)`; only called when `has_analytic_gradient` is true.
    fn gradient(&self, _x: &[f64], _t: &[f64], _j: usize) -> Result<Vec<f64>> {
        Err(Error::Model("simulator has no analytic gradient".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradientMode {
    Analytic,
    /// Central differences with step `relative_step · width(Θ_j)`,
    /// one-sided within one step of the boundary.
    FiniteDifference { relative_step: f64 },
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A simulator together with its parameter domain `Θ` and gradient policy.
#[derive(Clone)]
pub struct ComputerModel {
    sim: Arc<dyn Simulator>,
    theta_domain: BoxDomain,
    gradient_mode: GradientMode,
}

impl fmt::Debug for ComputerModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComputerModel")
            .field("d", &self.sim.input_dim())
            .field("p", &self.sim.param_dim())
            .field("q", &self.sim.output_dim())
            .field("theta_domain", &self.theta_domain)
            .field("gradient_mode", &self.gradient_mode)
            .finish()
    }
}

impl ComputerModel {
    /// Uses analytic gradients when the simulator provides them, finite
    /// differences otherwise.
    pub fn new(sim: Arc<dyn Simulator>, theta_domain: BoxDomain) -> Result<Self> {
        let mode = if sim.has_analytic_gradient() {
            GradientMode::Analytic
        } else {
            GradientMode::FiniteDifference {
                relative_step: DEFAULT_FD_STEP,
            }
        };
        Self::with_gradient_mode(sim, theta_domain, mode)
    }

    pub fn with_gradient_mode(
        sim: Arc<dyn Simulator>,
        theta_domain: BoxDomain,
        gradient_mode: GradientMode,
    ) -> Result<Self> {
        if theta_domain.dim() != sim.param_dim() {
            return Err(Error::dim(format!(
                "parameter domain has dimension {}, simulator expects p = {}",
                theta_domain.dim(),
                sim.param_dim()
            )));
        }
        match gradient_mode {
            GradientMode::Analytic if !sim.has_analytic_gradient() => {
                return Err(Error::config("analytic gradients requested but not provided"));
            }
            GradientMode::FiniteDifference { relative_step } if !(relative_step > 0.0) => {
                return Err(Error::config("finite-difference step must be positive"));
            }
            _ => {}
        }
        Ok(Self {
            sim,
            theta_domain,
            gradient_mode,
        })
    }

    pub fn simulator(&self) -> &Arc<dyn Simulator> {
        &self.sim
    }

    pub fn theta_domain(&self) -> &BoxDomain {
        &self.theta_domain
    }

    pub fn gradient_mode(&self) -> GradientMode {
        self.gradient_mode
    }

    pub fn d(&self) -> usize {
        self.sim.input_dim()
    }

    pub fn p(&self) -> usize {
        self.sim.param_dim()
    }

    pub fn q(&self) -> usize {
        self.sim.output_dim()
    }

    pub fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let y = self.sim.eval(x, t)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite output at x = {x:?}, t = {t:?}")));
        }
        Ok(y)
    }

    pub fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        let y = self.sim.eval_many(xs, t)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("non-finite output at t = {t:?}")));
        }
        Ok(y)
    }

    /// `g_j(x, t)` at every row of `xs`, as an `n × q` matrix.
    pub fn gradient_many(&self, j: usize, t: &[f64], xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if j >= self.p() {
            return Err(Error::dim(format!("gradient index {j} out of range for p = {}", self.p())));
        }
        if t.len() != self.p() {
            return Err(Error::dim(format!("parameter has {} entries, p = {}", t.len(), self.p())));
        }
        match self.gradient_mode {
            GradientMode::Analytic => {
                let q = self.q();
                let mut out = DMatrix::zeros(xs.nrows(), q);
                for i in 0..xs.nrows() {
                    let x: Vec<f64> = xs.row(i).iter().copied().collect();
                    let g = self.sim.gradient(&x, t, j)?;
                    for k in 0..q {
                        out[(i, k)] = g[k];
                    }
                }
                Ok(out)
            }
            GradientMode::FiniteDifference { relative_step } => {
                self.finite_difference(j, t, xs, relative_step)
            }
        }
    }

    fn finite_difference(
        &self,
        j: usize,
        t: &[f64],
        xs: &DMatrix<f64>,
        relative_step: f64,
    ) -> Result<DMatrix<f64>> {
        let (lo, hi) = (self.theta_domain.lower()[j], self.theta_domain.upper()[j]);
        let h = relative_step * (hi - lo);
        let mut plus = t.to_vec();
        let mut minus = t.to_vec();
        let (fwd, bwd) = (t[j] + h <= hi, t[j] - h >= lo);
        let span = match (fwd, bwd) {
            (true, true) => {
                plus[j] += h;
                minus[j] -= h;
                2.0 * h
            }
            (true, false) => {
                plus[j] += h;
                h
            }
            (false, true) => {
                minus[j] -= h;
                h
            }
            (false, false) => {
                return Err(Error::config("finite-difference step exceeds the parameter domain"))
            }
        };
        let up = self.eval_many(xs, &plus)?;
        let down = self.eval_many(xs, &minus)?;
        Ok((up - down) / span)
    }

    /// Largest relative gap between analytic and central-difference gradients
    /// over the given parameters and locations. `None` without analytic
    /// gradients.
    pub fn gradient_consistency(&self, thetas: &[Vec<f64>], xs: &DMatrix<f64>) -> Result<Option<f64>> {
        if !self.sim.has_analytic_gradient() {
            return Ok(None);
        }
        let fd = Self::with_gradient_mode(
            self.sim.clone(),
            self.theta_domain.clone(),
            GradientMode::FiniteDifference {
                relative_step: DEFAULT_FD_STEP,
            },
        )?;
        let exact = Self::with_gradient_mode(
            self.sim.clone(),
            self.theta_domain.clone(),
            GradientMode::Analytic,
        )?;
        let mut worst: f64 = 0.0;
        for t in thetas {
            for j in 0..self.p() {
                let a = exact.gradient_many(j, t, xs)?;
                let b = fd.gradient_many(j, t, xs)?;
                let scale = a.amax();
                let gap = (&a - &b).amax();
                worst = worst.max(if scale > 0.0 { gap / scale } else { gap });
            }
        }
        Ok(Some(worst))
    }
}

/// `g_j(·, t) = ∂f/∂t_j (·, t)` on the nodes of `rule`.
pub fn model_gradient(
    model: &ComputerModel,
    j: usize,
    t: &[f64],
    rule: &Arc<QuadratureRule>,
) -> Result<GridFunction> {
    if rule.dim() != model.d() {
        return Err(Error::dim(format!(
            "quadrature rule has dimension {}, model input dimension is {}",
            rule.dim(),
            model.d()
        )));
    }
    let values = model.gradient_many(j, t, rule.nodes())?;
    GridFunction::new(values, rule.clone())
}
