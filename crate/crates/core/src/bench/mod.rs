//! Replication studies: the benchmark models, experiment configuration,
//! the per-replication pipeline, result tables and posterior density data.

mod config;
mod density;
mod experiment;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{l2_loss, LossTarget};
use crate::emulator::{fit_surrogate, surrogate_as_model, RunTable, Surrogate, SurrogateOptions};
use crate::error::{Error, Result};
use crate::model::reference::{bivariate_truth, linear_model_truth, BivariateModel, LinearModel, TrigModel};
use crate::model::{sample_field_data, ComputerModel, Design, FieldObservations, NoiseModel, Simulator};
use crate::numerics::{gauss_legendre_rule, nelder_mead, BoxDomain, NelderMeadOptions};

pub use config::{ExperimentConfig, KernelConfig, PriorId};
pub use density::{emit_density_data, write_density_csv, DensityTable, DEFAULT_DENSITY_GRID};
pub use experiment::{
    coverage_experiment, run_bivariate_study, run_experiment, run_replication, BivariateReplication,
    BivariateStudy, CoverageTable, ReplicationResult, ResultRecord, TableRow, BIVARIATE_BAND, MAX_FAILURE_FRACTION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Model1,
    Model2,
    Model3,
    Bivariate,
    CustomRuntable,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::Model1 => "model1",
            ModelId::Model2 => "model2",
            ModelId::Model3 => "model3",
            ModelId::Bivariate => "bivariate",
            ModelId::CustomRuntable => "custom-runtable",
        }
    }

    /// Default observation-noise covariance of the synthetic studies.
    pub fn default_noise(self) -> NoiseModel {
        match self {
            ModelId::Bivariate => NoiseModel::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.012, 0.012, 0.04]))
                .expect("bivariate noise covariance is valid"),
            _ => NoiseModel::isotropic(1, 0.2).expect("valid isotropic noise"),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "model1" => ModelId::Model1,
            "model2" => ModelId::Model2,
            "model3" => ModelId::Model3,
            "bivariate" => ModelId::Bivariate,
            "custom-runtable" => ModelId::CustomRuntable,
            other => return Err(Error::config(format!("unknown model id {other:?}"))),
        })
    }
}

/// `θ*` of Models 2 and 3.
pub const TRIG_THETA_STAR: [f64; 2] = [0.2, 0.3];
/// Points per axis of the Model 3 parameter grid.
pub const MODEL3_GRID: usize = 7;

pub fn model1_domain() -> BoxDomain {
    BoxDomain::interval(0.0, 10.0).expect("valid interval")
}

/// `Θ` of Models 2 and 3: the box on which `θ*` is the unique minimizer.
pub fn trig_domain() -> BoxDomain {
    BoxDomain::new(vec![0.0, 0.0], vec![0.25, 0.5]).expect("valid box")
}

/// A synthetic calibration problem.
pub struct Benchmark {
    pub id: ModelId,
    pub field: FieldObservations,
    pub model: ComputerModel,
    pub theta_star: Vec<f64>,
    pub truth: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    /// Model 3 only: the simulator runs and the surrogate fitted to them.
    pub runs: Option<RunTable>,
    pub surrogate: Option<Arc<Surrogate>>,
}

impl fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Benchmark")
            .field("id", &self.id)
            .field("n", &self.field.n())
            .field("theta_star", &self.theta_star)
            .finish()
    }
}

/// Minimizer of the population `L²` loss over a 1-D domain.
fn population_minimizer(model: &ComputerModel, truth: &dyn Fn(&[f64]) -> Vec<f64>) -> f64 {
    let rule = gauss_legendre_rule(64, &BoxDomain::unit(1)).expect("valid rule");
    let opts = NelderMeadOptions {
        diameter_tol: 1e-10,
        ..NelderMeadOptions::default()
    };
    let loss = |t: &[f64]| l2_loss(LossTarget::Function(truth), model, t, &rule);
    nelder_mead(loss, &[3.5], model.theta_domain(), &opts).expect("loss is evaluable").x[0]
}

fn model1() -> ComputerModel {
    ComputerModel::new(Arc::new(LinearModel), model1_domain()).expect("valid model")
}

fn bivariate() -> ComputerModel {
    ComputerModel::new(Arc::new(BivariateModel), model1_domain()).expect("valid model")
}

/// `θ* = argmin ∫ (4x + x sin 5x − tx)² dx ≈ 3.5653`.
pub fn model1_theta_star() -> f64 {
    static STAR: OnceLock<f64> = OnceLock::new();
    *STAR.get_or_init(|| population_minimizer(&model1(), &linear_model_truth))
}

/// Joint minimizer of the bivariate pair's summed `L²` loss.
pub fn bivariate_theta_star() -> f64 {
    static STAR: OnceLock<f64> = OnceLock::new();
    *STAR.get_or_init(|| population_minimizer(&bivariate(), &bivariate_truth))
}

fn trig_truth(x: &[f64]) -> Vec<f64> {
    TrigModel.eval(x, &TRIG_THETA_STAR).expect("valid arguments")
}

/// The `MODEL3_GRID²` parameter grid over `Θ` (endpoints included).
pub fn model3_theta_grid() -> Vec<Vec<f64>> {
    let dom = trig_domain();
    let axis = |k: usize, i: usize| dom.lower()[k] + dom.widths()[k] * i as f64 / (MODEL3_GRID - 1) as f64;
    (0..MODEL3_GRID)
        .flat_map(|i| (0..MODEL3_GRID).map(move |j| (i, j)))
        .map(|(i, j)| vec![axis(0, i), axis(1, j)])
        .collect()
}

/// Draws a fresh design uniformly on `[0, 1]` and field data
/// `y_R(xᵢ) + εᵢ`. Model 3 also evaluates the simulator on the parameter grid
/// at the design points and replaces the model by a surrogate fitted to those
/// runs.
pub fn generate_benchmark<R: Rng + ?Sized>(id: ModelId, n: usize, noise: &NoiseModel, rng: &mut R) -> Result<Benchmark> {
    let design = Design::uniform(n, &BoxDomain::unit(1), rng)?;
    let (model, theta_star, truth): (ComputerModel, Vec<f64>, Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>) =
        match id {
            ModelId::Model1 => (model1(), vec![model1_theta_star()], Arc::new(linear_model_truth)),
            ModelId::Model2 | ModelId::Model3 => (
                ComputerModel::new(Arc::new(TrigModel), trig_domain())?,
                TRIG_THETA_STAR.to_vec(),
                Arc::new(trig_truth),
            ),
            ModelId::Bivariate => (bivariate(), vec![bivariate_theta_star()], Arc::new(bivariate_truth)),
            ModelId::CustomRuntable => {
                return Err(Error::config("custom-runtable studies read their data from files"));
            }
        };
    if noise.q() != model.q() {
        return Err(Error::dim(format!("{id} has q = {}, noise model q = {}", model.q(), noise.q())));
    }
    let field = sample_field_data(|x| truth(x), noise, &design, rng)?;
    let mut bench = Benchmark {
        id,
        field,
        model,
        theta_star,
        truth,
        runs: None,
        surrogate: None,
    };
    if id == ModelId::Model3 {
        let runs = RunTable::from_product(&model3_theta_grid(), bench.field.design().points(), |t, x| {
            TrigModel.eval(x, t)
        })?;
        let opts = SurrogateOptions {
            seed: rng.random(),
            ..SurrogateOptions::default()
        };
        let surrogate = Arc::new(fit_surrogate(&runs, &opts)?);
        bench.model = surrogate_as_model(surrogate.clone(), trig_domain())?;
        bench.runs = Some(runs);
        bench.surrogate = Some(surrogate);
    }
    Ok(bench)
}
