//! Reference simulators used by the replication studies.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::Simulator;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn check_args(x: &[f64], t: &[f64], d: usize, p: usize) -> Result<()> {
    if x.len() != d || t.len() != p {
        return Err(Error::dim(format!(
            "expected x in R^{d} and t in R^{p}, got {} and {}",
            x.len(),
            t.len()
        )));
    }
    Ok(())
}

/// `f(x, t) = t·x` on `x ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearModel;

impl Simulator for LinearModel {
    fn input_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        check_args(x, t, 1, 1)?;
        Ok(vec![t[0] * x[0]])
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, x: &[f64], t: &[f64], _j: usize) -> Result<Vec<f64>> {
        check_args(x, t, 1, 1)?;
        Ok(vec![x[0]])
    }
}

/// `y_R(x) = 4x + x sin 5x`.
pub fn linear_model_truth(x: &[f64]) -> Vec<f64> {
    vec![4.0 * x[0] + x[0] * (5.0 * x[0]).sin()]
}

/// `f(x, t) = 7 sin²(2πt₁ − π) + 2 (2πt₂ − π)² sin(2πx − π)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrigModel;

impl TrigModel {
    fn value(x: f64, t: &[f64]) -> f64 {
        let a = 2.0 * PI * t[0] - PI;
        let c = 2.0 * PI * t[1] - PI;
        7.0 * a.sin().powi(2) + 2.0 * c * c * (2.0 * PI * x - PI).sin()
    }
}

impl Simulator for TrigModel {
    fn input_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        check_args(x, t, 1, 2)?;
        Ok(vec![Self::value(x[0], t)])
    }
    fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        check_args(&[0.0], t, 1, 2)?;
        Ok(DMatrix::from_fn(xs.nrows(), 1, |i, _| Self::value(xs[(i, 0)], t)))
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, x: &[f64], t: &[f64], j: usize) -> Result<Vec<f64>> {
        check_args(x, t, 1, 2)?;
        let g = match j {
            0 => {
                let a = 2.0 * PI * t[0] - PI;
                28.0 * PI * a.sin() * a.cos()
            }
            1 => 8.0 * PI * (2.0 * PI * t[1] - PI) * (2.0 * PI * x[0] - PI).sin(),
            _ => return Err(Error::dim(format!("gradient index {j} out of range"))),
        };
        Ok(vec![g])
    }
}

/// Bivariate pair `f₁(x, t) = t·x`, `f₂(x, t) = Φ(t(x − 0.5))`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BivariateModel;

impl Simulator for BivariateModel {
    fn input_dim(&self) -> usize {
        1
    }
    fn param_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        check_args(x, t, 1, 1)?;
        Ok(vec![t[0] * x[0], normal_cdf(t[0] * (x[0] - 0.5))])
    }
    fn has_analytic_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, x: &[f64], t: &[f64], _j: usize) -> Result<Vec<f64>> {
        check_args(x, t, 1, 1)?;
        let u = x[0] - 0.5;
        Ok(vec![x[0], u * normal_pdf(t[0] * u)])
    }
}

/// `y_R(x) = (4x + x sin 5x, 1 / (1 + exp(−6(x − 0.5))))`.
pub fn bivariate_truth(x: &[f64]) -> Vec<f64> {
    let x = x[0];
    vec![
        4.0 * x + x * (5.0 * x).sin(),
        1.0 / (1.0 + (-6.0 * (x - 0.5)).exp()),
    ]
}

/// Restricts a simulator to a subset of its outcomes.
pub struct SelectOutcomes {
    inner: Arc<dyn Simulator>,
    outcomes: Vec<usize>,
}

impl SelectOutcomes {
    pub fn new(inner: Arc<dyn Simulator>, outcomes: Vec<usize>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.iter().any(|&k| k >= inner.output_dim()) {
            return Err(Error::dim(format!("invalid outcome selection {outcomes:?}")));
        }
        Ok(Self { inner, outcomes })
    }
}

impl Simulator for SelectOutcomes {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn output_dim(&self) -> usize {
        self.outcomes.len()
    }
    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let y = self.inner.eval(x, t)?;
        Ok(self.outcomes.iter().map(|&k| y[k]).collect())
    }
    fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.inner.eval_many(xs, t)?.select_columns(&self.outcomes))
    }
    fn has_analytic_gradient(&self) -> bool {
        self.inner.has_analytic_gradient()
    }
    fn gradient(&self, x: &[f64], t: &[f64], j: usize) -> Result<Vec<f64>> {
        let g = self.inner.gradient(x, t, j)?;
        Ok(self.outcomes.iter().map(|&k| g[k]).collect())
    }
}

/// `x ↦ W f(x, t)` for a fixed `q × q` matrix `W` (used for whitening).
pub struct LinearlyTransformed {
    inner: Arc<dyn Simulator>,
    transform: DMatrix<f64>,
}

impl LinearlyTransformed {
    pub fn new(inner: Arc<dyn Simulator>, transform: DMatrix<f64>) -> Result<Self> {
        let q = inner.output_dim();
        if transform.nrows() != q || transform.ncols() != q {
            return Err(Error::dim(format!(
                "transform must be {q}x{q}, got {}x{}",
                transform.nrows(),
                transform.ncols()
            )));
        }
        Ok(Self { inner, transform })
    }
}

impl Simulator for LinearlyTransformed {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        let y = nalgebra::DVector::from_vec(self.inner.eval(x, t)?);
        Ok((&self.transform * y).iter().copied().collect())
    }
    fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.inner.eval_many(xs, t)? * self.transform.transpose())
    }
    fn has_analytic_gradient(&self) -> bool {
        self.inner.has_analytic_gradient()
    }
    fn gradient(&self, x: &[f64], t: &[f64], j: usize) -> Result<Vec<f64>> {
        let g = nalgebra::DVector::from_vec(self.inner.gradient(x, t, j)?);
        Ok((&self.transform * g).iter().copied().collect())
    }
}
