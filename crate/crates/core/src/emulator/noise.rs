//! Plug-in estimation of the field noise covariance from smoother residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{FieldObservations, NoiseModel};

/// Nadaraya–Watson smoother settings. Bandwidths are in units of the design
/// domain widths and searched on a log grid by leave-one-out CV.
#[derive(Clone, Debug)]
pub struct SmootherSpec {
    pub min_bandwidth: f64,
    pub max_bandwidth: f64,
    pub grid_points: usize,
}

impl Default for SmootherSpec {
    fn default() -> Self {
        Self {
            min_bandwidth: 0.01,
            max_bandwidth: 1.0,
            grid_points: 20,
        }
    }
}

impl SmootherSpec {
    pub fn bandwidths(&self) -> Vec<f64> {
        let (a, b) = (self.min_bandwidth.ln(), self.max_bandwidth.ln());
        let m = self.grid_points.max(2);
        (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
    }
}

/// A fitted smoother for one outcome: the fitted values and the smoother
/// matrix `S` (fitted = S y).
#[derive(Clone, Debug)]
pub struct SmootherFit {
    pub bandwidth: f64,
    pub fitted: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub loo_score: f64,
}

fn squared_distances(field: &FieldObservations) -> DMatrix<f64> {
    let design = field.design();
    let widths = design.domain().widths();
    let pts = design.points();
    let n = pts.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        (0..pts.ncols())
            .map(|k| ((pts[(i, k)] - pts[(j, k)]) / widths[k]).powi(2))
            .sum()
    })
}

fn kernel_weights(dist2: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    dist2.map(|d| (-0.5 * d / (h * h)).exp())
}

/// Fits one outcome column, choosing the bandwidth that minimizes the
/// leave-one-out squared prediction error.
pub fn fit_smoother(dist2: &DMatrix<f64>, y: &DVector<f64>, spec: &SmootherSpec) -> Result<SmootherFit> {
    let n = y.len();
    let mut best: Option<(f64, f64)> = None;
    for h in spec.bandwidths() {
        let w = kernel_weights(dist2, h);
        let mut score = 0.0;
        let mut ok = true;
        for i in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n {
                if j != i {
                    num += w[(i, j)] * y[j];
                    den += w[(i, j)];
                }
            }
            if den <= 1e-300 {
                ok = false;
                break;
            }
            score += (y[i] - num / den).powi(2);
        }
        if ok && best.is_none_or(|(_, s)| score < s) {
            best = Some((h, score));
        }
    }
    let (h, loo_score) =
        best.ok_or_else(|| Error::Estimation("no bandwidth gives a defined leave-one-out fit".into()))?;
    let mut s = kernel_weights(dist2, h);
    for i in 0..n {
        let total: f64 = s.row(i).sum();
        s.row_mut(i).scale_mut(1.0 / total);
    }
    Ok(SmootherFit {
        bandwidth: h,
        fitted: &s * y,
        matrix: s,
        loo_score: loo_score / n as f64,
    })
}

/// Estimates `Σ_F` from residuals of per-outcome kernel smoothers.
///
/// Residual cross-products are divided by the residual degrees of freedom
/// `tr((I − S_k)ᵀ(I − S_k))` of each smoother (symmetrically, so the result
/// stays positive semi-definite), which removes the shrinkage caused by each
/// observation's own weight in its fitted value.
pub fn estimate_noise_covariance(field: &FieldObservations, spec: &SmootherSpec) -> Result<NoiseModel> {
    let n = field.n();
    if n < 10 {
        return Err(Error::Estimation(format!("need at least 10 observations, got {n}")));
    }
    let dist2 = squared_distances(field);
    let q = field.q();
    let mut residuals = DMatrix::zeros(n, q);
    let mut dof = vec![0.0; q];
    for k in 0..q {
        let y = field.values().column(k).into_owned();
        let fit = fit_smoother(&dist2, &y, spec)?;
        residuals.set_column(k, &(&y - &fit.fitted));
        let resid_op = DMatrix::identity(n, n) - &fit.matrix;
        dof[k] = resid_op.norm_squared();
        log::debug!("outcome {k}: bandwidth {:.4}, residual dof {:.1}", fit.bandwidth, dof[k]);
    }
    let mut sigma = residuals.tr_mul(&residuals);
    for a in 0..q {
        for b in 0..q {
            sigma[(a, b)] /= (dof[a] * dof[b]).sqrt();
        }
    }
    crate::numerics::symmetrize(&mut sigma);
    NoiseModel::new(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference::{bivariate_truth, linear_model_truth};
    use crate::model::{sample_field_data, Design};
    use crate::numerics::BoxDomain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(n: usize, sigma: DMatrix<f64>, seed: u64, truth: fn(&[f64]) -> Vec<f64>) -> FieldObservations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = Design::uniform(n, &BoxDomain::unit(1), &mut rng).unwrap();
        sample_field_data(truth, &NoiseModel::new(sigma).unwrap(), &design, &mut rng).unwrap()
    }

    #[test]
    fn univariate_noise_sd_is_recovered() {
        let f = field(100, DMatrix::from_element(1, 1, 0.04), 21, linear_model_truth);
        let est = estimate_noise_covariance(&f, &SmootherSpec::default()).unwrap();
        let sd = est.variance(0).sqrt();
        assert!((0.15..=0.25).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn noiseless_data_gives_small_covariance() {
        let f = field(100, DMatrix::zeros(1, 1), 4, linear_model_truth);
        let est = estimate_noise_covariance(&f, &SmootherSpec::default()).unwrap();
        assert!(est.variance(0) <= 1e-3, "{}", est.variance(0));
    }

    #[test]
    fn bivariate_covariance_within_thirty_percent_on_average() {
        let truth = DMatrix::from_row_slice(2, 2, &[0.04, 0.012, 0.012, 0.04]);
        let mut mean = DMatrix::zeros(2, 2);
        let reps = 50;
        for r in 0..reps {
            let f = field(400, truth.clone(), 100 + r, bivariate_truth);
            mean += estimate_noise_covariance(&f, &SmootherSpec::default()).unwrap().covariance();
        }
        mean /= reps as f64;
        for a in 0..2 {
            for b in 0..2 {
                let rel = (mean[(a, b)] - truth[(a, b)]).abs() / truth[(a, b)];
                assert!(rel <= 0.3, "entry ({a},{b}): {} vs {}", mean[(a, b)], truth[(a, b)]);
            }
        }
    }

    #[test]
    fn whitened_residual_variances_near_one() {
        let truth = DMatrix::from_row_slice(2, 2, &[0.04, 0.012, 0.012, 0.04]);
        let f = field(400, truth, 9, bivariate_truth);
        let est = estimate_noise_covariance(&f, &SmootherSpec::default()).unwrap();
        let w = est.whitening().unwrap();
        let xs = f.design().points();
        let mut res = DMatrix::zeros(f.n(), 2);
        for i in 0..f.n() {
            let t = bivariate_truth(&[xs[(i, 0)]]);
            let e = DVector::from_vec(vec![f.values()[(i, 0)] - t[0], f.values()[(i, 1)] - t[1]]);
            res.row_mut(i).copy_from(&(&w * e).transpose());
        }
        for k in 0..2 {
            let v = res.column(k).norm_squared() / f.n() as f64;
            assert!((0.7..=1.3).contains(&v), "outcome {k}: {v}");
        }
    }

    #[test]
    fn too_few_observations() {
        let f = field(5, DMatrix::from_element(1, 1, 0.04), 1, linear_model_truth);
        assert!(matches!(
            estimate_noise_covariance(&f, &SmootherSpec::default()),
            Err(Error::Estimation(_))
        ));
    }
}
