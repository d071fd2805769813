use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{standard_normal_vector, sym_sqrt_pair, BoxDomain};

/// Design locations `x₁…xₙ`, one row per point.
#[derive(Clone, Debug)]
pub struct Design {
    points: DMatrix<f64>,
    domain: BoxDomain,
}

impl Design {
    pub fn new(points: DMatrix<f64>, domain: BoxDomain) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::config("design needs at least one point"));
        }
        if points.ncols() != domain.dim() {
            return Err(Error::dim(format!(
                "design points have {} columns, domain has dimension {}",
                points.ncols(),
                domain.dim()
            )));
        }
        for i in 0..points.nrows() {
            let row: Vec<f64> = points.row(i).iter().copied().collect();
            if !domain.contains(&row) {
                return Err(Error::config(format!("design point {i} {row:?} lies outside the domain")));
            }
        }
        Ok(Self { points, domain })
    }

    /// `n` points drawn uniformly over the domain.
    pub fn uniform<R: Rng + ?Sized>(n: usize, domain: &BoxDomain, rng: &mut R) -> Result<Self> {
        let d = domain.dim();
        let mut points = DMatrix::zeros(n, d);
        for i in 0..n {
            for k in 0..d {
                let (a, b) = (domain.lower()[k], domain.upper()[k]);
                points[(i, k)] = a + (b - a) * rng.random::<f64>();
            }
        }
        Self::new(points, domain.clone())
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Field measurements `y_F(xᵢ)`, an `n × q` matrix aligned with the design.
#[derive(Clone, Debug)]
pub struct FieldObservations {
    design: Design,
    values: DMatrix<f64>,
}

impl FieldObservations {
    pub fn new(design: Design, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != design.len() {
            return Err(Error::dim(format!(
                "{} observations for {} design points",
                values.nrows(),
                design.len()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::dim("field observations need q >= 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("field observations contain non-finite values".into()));
        }
        Ok(Self { design, values })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn q(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps only the listed outcome columns.
    pub fn select_outcomes(&self, outcomes: &[usize]) -> Result<Self> {
        if outcomes.is_empty() || outcomes.iter().any(|&k| k >= self.q()) {
            return Err(Error::dim(format!("invalid outcome selection {outcomes:?}")));
        }
        let values = self.values.select_columns(outcomes);
        Self::new(self.design.clone(), values)
    }
}

/// Observation noise covariance `Σ_F`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    sigma: DMatrix<f64>,
}

impl NoiseModel {
    /// Accepts any symmetric positive semi-definite matrix; calibration further
    /// requires positive definiteness (see [`NoiseModel::whitening`]).
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        crate::numerics::check_symmetric(&sigma, "noise covariance")?;
        if sigma.nrows() == 0 {
            return Err(Error::dim("noise covariance must be at least 1x1"));
        }
        let eig = sigma.clone().symmetric_eigenvalues();
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        if eig.min() < -1e-12 * scale {
            return Err(Error::Contract(format!(
                "noise covariance is not positive semi-definite (min eigenvalue {})",
                eig.min()
            )));
        }
        Ok(Self { sigma })
    }

    pub fn isotropic(q: usize, sd: f64) -> Result<Self> {
        Self::new(DMatrix::identity(q, q) * (sd * sd))
    }

    pub fn identity(q: usize) -> Self {
        Self {
            sigma: DMatrix::identity(q, q),
        }
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn q(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.sigma[(k, k)]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.sigma.clone().cholesky().is_some()
    }

    pub fn is_diagonal(&self) -> bool {
        let q = self.q();
        (0..q).all(|i| (0..q).all(|j| i == j || self.sigma[(i, j)] == 0.0))
    }

    /// `Σ_F^{-1/2}` (symmetric root).
    pub fn whitening(&self) -> Result<DMatrix<f64>> {
        if !self.is_positive_definite() {
            return Err(Error::Contract("whitening needs a positive definite noise covariance".into()));
        }
        Ok(sym_sqrt_pair(&self.sigma, 0.0).1)
    }

    /// A single noise vector `Σ^{1/2} z`.
    pub fn draw<R: Rng + ?Sized>(&self, root: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
        root * standard_normal_vector(self.q(), rng)
    }
}

/// Simulates `y_F(xᵢ) = y_R(xᵢ) + εᵢ` with `εᵢ ~ N_q(0, Σ_F)` i.i.d.
pub fn sample_field_data<F, R>(
    truth: F,
    noise: &NoiseModel,
    design: &Design,
    rng: &mut R,
) -> Result<FieldObservations>
where
    F: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let q = noise.q();
    let (root, _) = sym_sqrt_pair(noise.covariance(), 0.0);
    let mut values = DMatrix::zeros(design.len(), q);
    for i in 0..design.len() {
        let y = truth(&design.point(i));
        if y.len() != q {
            return Err(Error::dim(format!(
                "truth returned {} outputs, noise model has q = {q}",
                y.len()
            )));
        }
        let eps = noise.draw(&root, rng);
        for k in 0..q {
            values[(i, k)] = y[k] + eps[k];
        }
    }
    FieldObservations::new(design.clone(), values)
}
