//! Deterministic kernel-interpolator emulators.
//!
//! Each outcome gets an independent anisotropic squared-exponential
//! interpolator `k(u, v) = s² exp(−½ Σ_a (u_a − v_a)² / ℓ_a²)` with a relative
//! nugget. When the runs form a full product of parameter settings and
//! locations (every run evaluated at the same locations), the Gram matrix is
//! a Kronecker product and is handled exactly through the two factor
//! eigendecompositions; otherwise a dense Cholesky factorization is used.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComputerModel, GradientMode, Simulator, DEFAULT_FD_STEP};
use crate::numerics::{
    latin_hypercube, multistart_nelder_mead, BoxDomain, CovarianceFactor, JitterPolicy,
    NelderMeadOptions,
};

use super::RunTable;

pub const KERNEL_NAME: &str = "squared_exponential";

/// Iterative-refinement sweeps applied to the interpolation weights, using the
/// nugget-regularized system as preconditioner. Each sweep shrinks the
/// training-point residual along an eigendirection with eigenvalue `λ` by
/// `ν / (λ + ν)` without amplifying directions below the nugget.
const REFINEMENT_STEPS: usize = 3;

#[derive(Clone, Debug)]
pub struct SurrogateOptions {
    /// Fraction of runs held out to measure prediction error, in `[0, 0.5]`.
    pub holdout_fraction: f64,
    pub multistarts: usize,
    /// Nugget relative to the signal variance, used while selecting
    /// length-scales.
    pub nugget: f64,
    /// Relative nugget of the final interpolation solve. The solve goes
    /// through an eigendecomposition, so it may sit far below `nugget`.
    pub interpolation_nugget: f64,
    pub seed: u64,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            holdout_fraction: 0.1,
            multistarts: 5,
            nugget: 1e-8,
            interpolation_nugget: 1e-12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeRecord {
    /// Length-scales in the original input units, ordered `[t.., x..]`.
    pub length_scales: Vec<f64>,
    pub variance: f64,
    pub mean: f64,
    pub holdout_rmse: Option<f64>,
    pub holdout_relative_rmse: Option<f64>,
}

/// Persistable description of a fitted surrogate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SurrogateRecord {
    pub kernel: String,
    pub nugget: f64,
    #[serde(default = "default_interpolation_nugget")]
    pub interpolation_nugget: f64,
    pub training_digest: String,
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub outcomes: Vec<OutcomeRecord>,
}

fn default_interpolation_nugget() -> f64 {
    SurrogateOptions::default().interpolation_nugget
}

#[derive(Clone, Debug)]
enum Interpolator {
    Constant,
    Dense {
        train: DMatrix<f64>,
        alpha: DVector<f64>,
    },
    Kronecker {
        thetas: DMatrix<f64>,
        locations: DMatrix<f64>,
        /// `m × n` weights; prediction is `r_t(t)ᵀ A r_x(x)`.
        weights: DMatrix<f64>,
    },
}

#[derive(Clone, Debug)]
struct OutcomeFit {
    mean: f64,
    /// In scaled input units.
    length_scales: Vec<f64>,
    variance: f64,
    interp: Interpolator,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingSummary {
    pub holdout_rows: usize,
    pub rmse: Vec<Option<f64>>,
    pub relative_rmse: Vec<Option<f64>>,
}

/// A fitted emulator `f̂(x, t)`.
#[derive(Debug)]
pub struct Surrogate {
    p: usize,
    d: usize,
    input_lower: Vec<f64>,
    input_scale: Vec<f64>,
    nugget: f64,
    interpolation_nugget: f64,
    outcomes: Vec<OutcomeFit>,
    theta_hull: BoxDomain,
    digest: String,
    summary: TrainingSummary,
    extrapolated: AtomicBool,
}

/// Training inputs in scaled coordinates, optionally factored as a product.
struct Layout {
    scaled: DMatrix<f64>,
    product: Option<Product>,
}

struct Product {
    thetas: DMatrix<f64>,
    locations: DMatrix<f64>,
    /// `(theta index, location index)` per run row
    cells: Vec<(usize, usize)>,
}

fn se_corr(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let z = (a[k] - b[k]) / ls[k];
        s += z * z;
    }
    (-0.5 * s).exp()
}

fn corr_matrix(pts: &DMatrix<f64>, ls: &[f64]) -> DMatrix<f64> {
    let n = pts.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| pts.row(i).iter().copied().collect()).collect();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = se_corr(&rows[i], &rows[j], ls);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

impl Layout {
    fn build(scaled: DMatrix<f64>, p: usize) -> Self {
        let product = Self::detect_product(&scaled, p);
        Self { scaled, product }
    }

    fn detect_product(scaled: &DMatrix<f64>, p: usize) -> Option<Product> {
        let n = scaled.nrows();
        let key = |i: usize, range: std::ops::Range<usize>| -> Vec<u64> {
            range.map(|k| scaled[(i, k)].to_bits()).collect()
        };
        let mut t_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut x_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut t_rows = Vec::new();
        let mut x_rows = Vec::new();
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            let tk = key(i, 0..p);
            let xk = key(i, p..scaled.ncols());
            let a = *t_index.entry(tk).or_insert_with(|| {
                t_rows.push(i);
                t_rows.len() - 1
            });
            let b = *x_index.entry(xk).or_insert_with(|| {
                x_rows.push(i);
                x_rows.len() - 1
            });
            cells.push((a, b));
        }
        let (m, nx) = (t_rows.len(), x_rows.len());
        if m < 2 || nx < 2 || m * nx != n {
            return None;
        }
        let thetas = DMatrix::from_fn(m, p, |a, k| scaled[(t_rows[a], k)]);
        let locations = DMatrix::from_fn(nx, scaled.ncols() - p, |b, k| scaled[(x_rows[b], p + k)]);
        Some(Product {
            thetas,
            locations,
            cells,
        })
    }
}

struct Profile {
    nll: f64,
    variance: f64,
    interp: Interpolator,
}

fn profile(layout: &Layout, y: &DVector<f64>, ls: &[f64], p: usize, nugget: f64, keep: bool) -> Result<Profile> {
    let n = y.len() as f64;
    match &layout.product {
        Some(prod) => {
            let (m, nx) = (prod.thetas.nrows(), prod.locations.nrows());
            let mut ymat = DMatrix::zeros(m, nx);
            for (i, &(a, b)) in prod.cells.iter().enumerate() {
                ymat[(a, b)] = y[i];
            }
            let rt = corr_matrix(&prod.thetas, &ls[..p]);
            let rx = corr_matrix(&prod.locations, &ls[p..]);
            let et = SymmetricEigen::new(rt.clone());
            let ex = SymmetricEigen::new(rx.clone());
            let rotated = et.eigenvectors.transpose() * &ymat * &ex.eigenvectors;
            let mut quad = 0.0;
            let mut logdet = 0.0;
            let mut scaled = rotated.clone();
            for a in 0..m {
                for b in 0..nx {
                    let dval = et.eigenvalues[a].max(0.0) * ex.eigenvalues[b].max(0.0) + nugget;
                    logdet += dval.ln();
                    quad += rotated[(a, b)].powi(2) / dval;
                    scaled[(a, b)] /= dval;
                }
            }
            let variance = quad / n;
            let nll = 0.5 * n * variance.ln() + 0.5 * logdet;
            let interp = if keep {
                let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
                    let mut z = et.eigenvectors.transpose() * rhs * &ex.eigenvectors;
                    for a in 0..m {
                        for b in 0..nx {
                            z[(a, b)] /= et.eigenvalues[a].max(0.0) * ex.eigenvalues[b].max(0.0) + nugget;
                        }
                    }
                    &et.eigenvectors * z * ex.eigenvectors.transpose()
                };
                let mut weights = &et.eigenvectors * scaled * ex.eigenvectors.transpose();
                for _ in 0..REFINEMENT_STEPS {
                    let resid = &ymat - &rt * &weights * &rx;
                    weights += solve(&resid);
                }
                Interpolator::Kronecker {
                    thetas: prod.thetas.clone(),
                    locations: prod.locations.clone(),
                    weights,
                }
            } else {
                Interpolator::Constant
            };
            Ok(Profile { nll, variance, interp })
        }
        None => {
            let r0 = corr_matrix(&layout.scaled, ls);
            let mut r = r0.clone();
            for i in 0..r.nrows() {
                r[(i, i)] += nugget;
            }
            let factor = CovarianceFactor::new(
                &r,
                JitterPolicy {
                    relative: 0.0,
                    escalations: 3,
                },
            )
            .or_else(|_| CovarianceFactor::new(&r, JitterPolicy::default()))?;
            let l = factor.lower();
            let z = l.solve_lower_triangular(y).ok_or_else(|| Error::Fit("triangular solve failed".into()))?;
            let quad = z.norm_squared();
            let logdet: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let variance = quad / n;
            let nll = 0.5 * n * variance.ln() + 0.5 * logdet;
            let interp = if keep {
                let eig = SymmetricEigen::new(r0.clone());
                let solve = |rhs: &DVector<f64>| -> DVector<f64> {
                    let mut z = eig.eigenvectors.tr_mul(rhs);
                    for (c, lam) in eig.eigenvalues.iter().enumerate() {
                        z[c] /= lam.max(0.0) + nugget;
                    }
                    &eig.eigenvectors * z
                };
                let mut alpha = solve(y);
                for _ in 0..REFINEMENT_STEPS {
                    alpha += solve(&(y - &r0 * &alpha));
                }
                Interpolator::Dense {
                    train: layout.scaled.clone(),
                    alpha,
                }
            } else {
                Interpolator::Constant
            };
            Ok(Profile { nll, variance, interp })
        }
    }
}

fn is_constant(col: &DVector<f64>) -> bool {
    let mean = col.mean();
    col.iter().all(|v| (v - mean).abs() <= 1e-12 * mean.abs().max(1.0))
}

/// Fits one interpolator per outcome, choosing length-scales by maximizing
/// the profiled marginal likelihood from `multistarts` random starts.
fn fit_outcome(layout: &Layout, y: &DVector<f64>, p: usize, opts: &SurrogateOptions, seed: u64) -> Result<(f64, Vec<f64>)> {
    let dims = layout.scaled.ncols();
    let mean = y.mean();
    let centered = y.map(|v| v - mean);
    if is_constant(y) {
        return Ok((mean, vec![1.0; dims]));
    }
    let bounds = BoxDomain::new(vec![(0.01f64).ln(); dims], vec![(10.0f64).ln(); dims])?;
    let start_box = BoxDomain::new(vec![(0.05f64).ln(); dims], vec![(2.0f64).ln(); dims])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = latin_hypercube(opts.multistarts.max(1), &start_box, &mut rng);
    let nm = NelderMeadOptions {
        diameter_tol: 1e-4,
        max_iters: 400,
        initial_step: 0.1,
    };
    let objective = |log_ls: &[f64]| -> Result<f64> {
        let ls: Vec<f64> = log_ls.iter().map(|v| v.exp()).collect();
        match profile(layout, &centered, &ls, p, opts.nugget, false) {
            Ok(pr) => Ok(pr.nll),
            Err(_) => Ok(f64::INFINITY),
        }
    };
    let best = match multistart_nelder_mead(objective, &starts, &bounds, &nm) {
        Ok(rep) => rep.best.x,
        Err(e) => return Err(Error::Fit(format!("length-scale search failed: {e}"))),
    };
    Ok((mean, best.iter().map(|v| v.exp()).collect()))
}

fn condition(layout: &Layout, y: &DVector<f64>, mean: f64, ls: Vec<f64>, p: usize, nugget: f64) -> Result<OutcomeFit> {
    if is_constant(y) {
        return Ok(OutcomeFit {
            mean,
            length_scales: ls,
            variance: 0.0,
            interp: Interpolator::Constant,
        });
    }
    let centered = y.map(|v| v - mean);
    let pr = profile(layout, &centered, &ls, p, nugget, true)?;
    Ok(OutcomeFit {
        mean,
        length_scales: ls,
        variance: pr.variance,
        interp: pr.interp,
    })
}

impl OutcomeFit {
    fn predict(&self, u: &[f64], p: usize) -> f64 {
        match &self.interp {
            Interpolator::Constant => self.mean,
            Interpolator::Dense { train, alpha } => {
                let mut acc = 0.0;
                for i in 0..train.nrows() {
                    acc += se_corr(u, &row_vec(train, i), &self.length_scales) * alpha[i];
                }
                self.mean + acc
            }
            Interpolator::Kronecker {
                thetas,
                locations,
                weights,
            } => {
                let v = self.location_weights(&u[..p], thetas, weights);
                self.mean + self.contract(&u[p..], locations, &v, p)
            }
        }
    }

    /// `Aᵀ r_t(t)`.
    fn location_weights(&self, t: &[f64], thetas: &DMatrix<f64>, weights: &DMatrix<f64>) -> DVector<f64> {
        let rt = DVector::from_fn(thetas.nrows(), |a, _| {
            se_corr(t, &row_vec(thetas, a), &self.length_scales[..t.len()])
        });
        weights.tr_mul(&rt)
    }

    fn contract(&self, x: &[f64], locations: &DMatrix<f64>, v: &DVector<f64>, p: usize) -> f64 {
        let ls = &self.length_scales[p..];
        let mut acc = 0.0;
        for b in 0..locations.nrows() {
            let mut s = 0.0;
            for k in 0..x.len() {
                let z = (x[k] - locations[(b, k)]) / ls[k];
                s += z * z;
            }
            acc += (-0.5 * s).exp() * v[b];
        }
        acc
    }
}

fn scaling(inputs: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let cols = inputs.ncols();
    let mut lower = vec![0.0; cols];
    let mut scale = vec![1.0; cols];
    for k in 0..cols {
        let c = inputs.column(k);
        let (lo, hi) = (c.min(), c.max());
        lower[k] = lo;
        if hi > lo {
            scale[k] = hi - lo;
        }
    }
    (lower, scale)
}

fn scale_inputs(inputs: &DMatrix<f64>, lower: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(inputs.nrows(), inputs.ncols(), |i, k| (inputs[(i, k)] - lower[k]) / scale[k])
}

fn theta_hull(runs: &RunTable) -> Result<BoxDomain> {
    let p = runs.p();
    let mut lo = vec![0.0; p];
    let mut hi = vec![0.0; p];
    for k in 0..p {
        let c = runs.inputs().column(k);
        lo[k] = c.min();
        hi[k] = c.max();
        if hi[k] <= lo[k] {
            hi[k] = lo[k] + f64::EPSILON.max(lo[k].abs() * 1e-12);
        }
    }
    BoxDomain::new(lo, hi)
}

/// Selects held-out rows: whole parameter settings for product tables,
/// individual rows otherwise.
fn holdout_split(layout: &Layout, n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return ((0..n).collect(), Vec::new());
    }
    let held: Vec<bool> = match &layout.product {
        Some(prod) => {
            let m = prod.thetas.nrows();
            let k = ((fraction * m as f64).round() as usize).min(m - 2);
            let mut ids: Vec<usize> = (0..m).collect();
            ids.shuffle(rng);
            let out: std::collections::HashSet<usize> = ids.into_iter().take(k).collect();
            prod.cells.iter().map(|(a, _)| out.contains(a)).collect()
        }
        None => {
            let k = (fraction * n as f64).round() as usize;
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(rng);
            let out: std::collections::HashSet<usize> = ids.into_iter().take(k).collect();
            (0..n).map(|i| out.contains(&i)).collect()
        }
    };
    let train = (0..n).filter(|&i| !held[i]).collect();
    let test = (0..n).filter(|&i| held[i]).collect();
    (train, test)
}

/// Fits the emulator. Length-scales are selected on the training split and
/// the final interpolator conditions on every run.
pub fn fit_surrogate(runs: &RunTable, opts: &SurrogateOptions) -> Result<Surrogate> {
    if !(0.0..=0.5).contains(&opts.holdout_fraction) {
        return Err(Error::config(format!(
            "holdout fraction {} outside [0, 0.5]",
            opts.holdout_fraction
        )));
    }
    let (p, q, n) = (runs.p(), runs.q(), runs.len());
    let (lower, scale) = scaling(runs.inputs());
    let scaled = scale_inputs(runs.inputs(), &lower, &scale);
    if (0..scaled.ncols()).all(|k| scaled.column(k).amax() == 0.0) {
        return Err(Error::Fit("all run inputs are identical".into()));
    }
    let full = Layout::build(scaled.clone(), p);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (train, test) = holdout_split(&full, n, opts.holdout_fraction, &mut rng);
    if train.len() < 10 {
        return Err(Error::Fit(format!("only {} training rows after holdout", train.len())));
    }
    let train_layout = Layout::build(scaled.select_rows(&train), p);

    let mut outcomes = Vec::with_capacity(q);
    let mut summary = TrainingSummary {
        holdout_rows: test.len(),
        ..Default::default()
    };
    for k in 0..q {
        let y_all = runs.outputs().column(k).into_owned();
        let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y_all[i]));
        let (mean, ls) = fit_outcome(&train_layout, &y_train, p, opts, opts.seed.wrapping_add(k as u64 + 1))?;
        if !test.is_empty() {
            let fitted = condition(&train_layout, &y_train, mean, ls.clone(), p, opts.interpolation_nugget)?;
            let mse = test
                .iter()
                .map(|&i| (fitted.predict(&row_vec(&scaled, i), p) - y_all[i]).powi(2))
                .sum::<f64>()
                / test.len() as f64;
            let rmse = mse.sqrt();
            let sd = (y_all.map(|v| (v - y_all.mean()).powi(2)).sum() / (n as f64 - 1.0)).sqrt();
            summary.rmse.push(Some(rmse));
            summary.relative_rmse.push(Some(if sd > 0.0 { rmse / sd } else { rmse }));
        } else {
            summary.rmse.push(None);
            summary.relative_rmse.push(None);
        }
        outcomes.push(condition(&full, &y_all, y_all.mean(), ls, p, opts.interpolation_nugget)?);
    }
    Ok(Surrogate {
        p,
        d: runs.d(),
        input_lower: lower,
        input_scale: scale,
        nugget: opts.nugget,
        interpolation_nugget: opts.interpolation_nugget,
        outcomes,
        theta_hull: theta_hull(runs)?,
        digest: runs.digest(),
        summary,
        extrapolated: AtomicBool::new(false),
    })
}

impl Surrogate {
    pub fn summary(&self) -> &TrainingSummary {
        &self.summary
    }

    /// True once any evaluation requested a parameter outside the bounding
    /// box of the training parameters.
    pub fn extrapolation_flagged(&self) -> bool {
        self.extrapolated.load(Ordering::Relaxed)
    }

    pub fn theta_hull(&self) -> &BoxDomain {
        &self.theta_hull
    }

    fn check_extrapolation(&self, t: &[f64]) {
        let inside = t.iter().enumerate().all(|(k, v)| {
            let (lo, hi) = (self.theta_hull.lower()[k], self.theta_hull.upper()[k]);
            let slack = 1e-9 * (hi - lo).max(1.0);
            *v >= lo - slack && *v <= hi + slack
        });
        if !inside && !self.extrapolated.swap(true, Ordering::Relaxed) {
            log::warn!("surrogate evaluated at t = {t:?}, outside the training parameter range");
        }
    }

    fn scale_point(&self, t: &[f64], x: &[f64]) -> Vec<f64> {
        t.iter()
            .chain(x)
            .enumerate()
            .map(|(k, v)| (v - self.input_lower[k]) / self.input_scale[k])
            .collect()
    }

    pub fn record(&self) -> SurrogateRecord {
        SurrogateRecord {
            kernel: KERNEL_NAME.to_string(),
            nugget: self.nugget,
            interpolation_nugget: self.interpolation_nugget,
            training_digest: self.digest.clone(),
            p: self.p,
            d: self.d,
            q: self.outcomes.len(),
            outcomes: self
                .outcomes
                .iter()
                .enumerate()
                .map(|(k, o)| OutcomeRecord {
                    length_scales: o
                        .length_scales
                        .iter()
                        .zip(&self.input_scale)
                        .map(|(l, s)| l * s)
                        .collect(),
                    variance: o.variance,
                    mean: o.mean,
                    holdout_rmse: self.summary.rmse[k],
                    holdout_relative_rmse: self.summary.relative_rmse[k],
                })
                .collect(),
        }
    }

    /// Rebuilds a surrogate from persisted hyperparameters and the run table
    /// they were fitted on.
    pub fn from_record(record: &SurrogateRecord, runs: &RunTable) -> Result<Self> {
        if record.kernel != KERNEL_NAME {
            return Err(Error::config(format!("unsupported kernel '{}'", record.kernel)));
        }
        if record.training_digest != runs.digest() {
            return Err(Error::config("run table does not match the surrogate's training digest"));
        }
        if record.p != runs.p() || record.d != runs.d() || record.q != runs.q() || record.outcomes.len() != runs.q() {
            return Err(Error::dim("surrogate record shape does not match run table"));
        }
        let p = runs.p();
        let (lower, scale) = scaling(runs.inputs());
        let layout = Layout::build(scale_inputs(runs.inputs(), &lower, &scale), p);
        let mut outcomes = Vec::with_capacity(runs.q());
        for (k, rec) in record.outcomes.iter().enumerate() {
            let ls: Vec<f64> = rec.length_scales.iter().zip(&scale).map(|(l, s)| l / s).collect();
            let y = runs.outputs().column(k).into_owned();
            outcomes.push(condition(&layout, &y, rec.mean, ls, p, record.interpolation_nugget)?);
        }
        Ok(Self {
            p,
            d: runs.d(),
            input_lower: lower,
            input_scale: scale,
            nugget: record.nugget,
            interpolation_nugget: record.interpolation_nugget,
            outcomes,
            theta_hull: theta_hull(runs)?,
            digest: record.training_digest.clone(),
            summary: TrainingSummary {
                holdout_rows: 0,
                rmse: record.outcomes.iter().map(|o| o.holdout_rmse).collect(),
                relative_rmse: record.outcomes.iter().map(|o| o.holdout_relative_rmse).collect(),
            },
            extrapolated: AtomicBool::new(false),
        })
    }
}

impl Simulator for Surrogate {
    fn input_dim(&self) -> usize {
        self.d
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn output_dim(&self) -> usize {
        self.outcomes.len()
    }

    fn eval(&self, x: &[f64], t: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d || t.len() != self.p {
            return Err(Error::dim("surrogate input has the wrong dimension"));
        }
        self.check_extrapolation(t);
        let u = self.scale_point(t, x);
        Ok(self.outcomes.iter().map(|o| o.predict(&u, self.p)).collect())
    }

    fn eval_many(&self, xs: &DMatrix<f64>, t: &[f64]) -> Result<DMatrix<f64>> {
        if xs.ncols() != self.d || t.len() != self.p {
            return Err(Error::dim("surrogate input has the wrong dimension"));
        }
        self.check_extrapolation(t);
        let ts = self.scale_point(t, &[]);
        let q = self.outcomes.len();
        let mut out = DMatrix::zeros(xs.nrows(), q);
        for (k, o) in self.outcomes.iter().enumerate() {
            match &o.interp {
                Interpolator::Kronecker {
                    thetas,
                    locations,
                    weights,
                } => {
                    let v = o.location_weights(&ts, thetas, weights);
                    for i in 0..xs.nrows() {
                        let x: Vec<f64> = (0..self.d)
                            .map(|c| (xs[(i, c)] - self.input_lower[self.p + c]) / self.input_scale[self.p + c])
                            .collect();
                        out[(i, k)] = o.mean + o.contract(&x, locations, &v, self.p);
                    }
                }
                _ => {
                    for i in 0..xs.nrows() {
                        let x: Vec<f64> = xs.row(i).iter().copied().collect();
                        out[(i, k)] = o.predict(&self.scale_point(t, &x), self.p);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Wraps a fitted surrogate as a computer model with finite-difference
/// gradients.
pub fn surrogate_as_model(surrogate: Arc<Surrogate>, theta_domain: BoxDomain) -> Result<ComputerModel> {
    ComputerModel::with_gradient_mode(
        surrogate,
        theta_domain,
        GradientMode::FiniteDifference {
            relative_step: DEFAULT_FD_STEP,
        },
    )
}
