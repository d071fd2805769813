use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::ProjectionKind;
use crate::error::{Error, Result};
use crate::model::NoiseModel;
use crate::numerics::{BoxDomain, DEFAULT_QUADRATURE_POINTS};
use crate::priors::MaternKernel;
use crate::projection::ConstraintVariant;

use super::ModelId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorId {
    #[default]
    Gp,
    Basis,
    Ogp,
}

impl fmt::Display for PriorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorId::Gp => "gp",
            PriorId::Basis => "basis",
            PriorId::Ogp => "ogp",
        })
    }
}

impl FromStr for PriorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gp" => PriorId::Gp,
            "basis" => PriorId::Basis,
            "ogp" => PriorId::Ogp,
            other => return Err(Error::config(format!("unknown prior {other:?}"))),
        })
    }
}

impl FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "functional" => ProjectionKind::Functional,
            "finite_dim" => ProjectionKind::FiniteDim,
            "moment" => ProjectionKind::Moment,
            "none" => ProjectionKind::None,
            other => return Err(Error::config(format!("unknown projection {other:?}"))),
        })
    }
}

/// Matérn kernel parameters on the whitened scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub sigma2: f64,
    pub psi: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        let k = MaternKernel::default();
        Self {
            sigma2: k.sigma2,
            psi: k.psi,
        }
    }
}

fn default_n() -> usize {
    100
}
fn default_iters() -> usize {
    5000
}
fn default_burnin() -> usize {
    1000
}
fn default_reps() -> usize {
    100
}
fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_POINTS
}
fn default_basis_size() -> usize {
    12
}
fn default_one() -> f64 {
    1.0
}
fn default_level() -> f64 {
    0.95
}

/// One replication study, read from TOML. Only `model` is required.
///
/// ```toml
/// model = "model1"          # model1 | model2 | model3 | bivariate | custom-runtable
/// prior = "gp"              # gp | basis | ogp
/// projection = "functional" # functional | finite_dim | moment | none
/// n = 100
/// sigma = 0.2               # or sigma_matrix = [[0.04, 0.012], [0.012, 0.04]]
/// iters = 5000
/// burnin = 1000
/// replications = 100
/// seed = 7
/// quadrature_points = 32
/// output = "results/model1"
///
/// [kernel]
/// sigma2 = 1.0
/// psi = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelId,
    #[serde(default)]
    pub prior: PriorId,
    #[serde(default)]
    pub projection: ProjectionKind,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Noise SD for single-outcome models.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Full noise covariance (overrides `sigma`).
    #[serde(default)]
    pub sigma_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default = "default_basis_size")]
    pub basis_size: usize,
    #[serde(default = "default_one")]
    pub tau2: f64,
    #[serde(default)]
    pub moment_samples: Option<usize>,
    #[serde(default)]
    pub constraint_variant: ConstraintVariant,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Record projection reports in memory (not part of the digest).
    #[serde(default)]
    pub diagnostics: bool,
    /// Directory for `summary.json`, `table.csv` and chain files.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker cap; `ORTHOCAL_THREADS` takes precedence.
    #[serde(default)]
    pub threads: Option<usize>,
    /// custom-runtable: simulator runs CSV.
    #[serde(default)]
    pub runtable: Option<PathBuf>,
    /// custom-runtable: field data CSV with columns `x_1..x_d, y_1..y_q`.
    #[serde(default)]
    pub field_data: Option<PathBuf>,
    #[serde(default)]
    pub theta_lower: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_upper: Option<Vec<f64>>,
    /// custom-runtable: reference value for coverage, if known.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn new(model: ModelId) -> Self {
        toml::from_str(&format!("model = \"{model}\"")).expect("defaults deserialize")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("iters", self.iters),
            ("replications", self.replications),
            ("quadrature_points", self.quadrature_points),
            ("basis_size", self.basis_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.iters <= self.burnin {
            return Err(Error::config("iters must exceed burnin"));
        }
        if !(self.tau2 > 0.0) || !(self.kernel.sigma2 > 0.0) || !(self.kernel.psi > 0.0) {
            return Err(Error::config("tau2 and kernel parameters must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config("level must lie in (0, 1)"));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(Error::config("sigma must be positive"));
            }
        }
        if self.moment_samples == Some(0) || self.threads == Some(0) {
            return Err(Error::config("moment_samples and threads must be positive"));
        }
        match (self.prior, self.projection) {
            (PriorId::Ogp, ProjectionKind::None) => {}
            (PriorId::Ogp, _) => {
                return Err(Error::config("the ogp prior satisfies the constraints a priori; use projection = \"none\""))
            }
            _ => {}
        }
        if self.model == ModelId::CustomRuntable
            && (self.runtable.is_none()
                || self.field_data.is_none()
                || self.theta_lower.is_none()
                || self.theta_upper.is_none())
        {
            return Err(Error::config(
                "custom-runtable needs runtable, field_data, theta_lower and theta_upper",
            ));
        }
        self.noise()?;
        Ok(())
    }

    /// The noise covariance used to simulate field data.
    pub fn noise(&self) -> Result<NoiseModel> {
        if let Some(rows) = &self.sigma_matrix {
            let q = rows.len();
            if q == 0 || rows.iter().any(|r| r.len() != q) {
                return Err(Error::config("sigma_matrix must be square"));
            }
            return NoiseModel::new(DMatrix::from_fn(q, q, |i, j| rows[i][j]));
        }
        let default = self.model.default_noise();
        match self.sigma {
            Some(s) => NoiseModel::isotropic(default.q(), s),
            None => Ok(default),
        }
    }

    pub fn kernel(&self) -> Result<MaternKernel> {
        MaternKernel::new(self.kernel.sigma2, self.kernel.psi)
    }

    pub fn custom_domain(&self) -> Result<BoxDomain> {
        match (&self.theta_lower, &self.theta_upper) {
            (Some(lo), Some(hi)) => BoxDomain::new(lo.clone(), hi.clone()),
            _ => Err(Error::config("theta_lower and theta_upper are required")),
        }
    }

    /// SHA-256 over every field that affects results (everything except the
    /// output location, worker count and diagnostics switch).
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["output", "threads", "diagnostics"] {
                map.remove(key);
            }
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Method label used in result tables, e.g. `PGP` or `PGP(finite_dim)`.
    pub fn method_label(&self) -> String {
        let base = match self.prior {
            PriorId::Gp => "PGP",
            PriorId::Basis => "PBasis",
            PriorId::Ogp => return "OGP".into(),
        };
        match self.projection {
            ProjectionKind::Functional => base.into(),
            ProjectionKind::FiniteDim => format!("{base}(finite_dim)"),
            ProjectionKind::Moment => format!("{base}(moment)"),
            ProjectionKind::None => format!("{base}(unprojected)"),
        }
    }
}
