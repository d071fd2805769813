use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calibrate::{
    estimate_anchor, run_projection_sampler, summarize_chain, whiten, write_chain_csv, AnchorEstimate, Chain,
    PosteriorSummary, SamplerConfig, ThetaPrior,
};
use crate::emulator::{estimate_noise_covariance, fit_surrogate, surrogate_as_model, RunTable, SmootherSpec, SurrogateOptions};
use crate::error::{Error, Result};
use crate::model::reference::SelectOutcomes;
use crate::model::{build_constraint_set, ComputerModel, Design, FieldObservations};
use crate::numerics::{gauss_legendre_rule, BoxDomain};
use crate::priors::{BasisExpansionPrior, BiasPrior, GpPrior, OgpPrior};

use super::{emit_density_data, generate_benchmark, write_density_csv, ExperimentConfig, ModelId, PriorId};
use super::DEFAULT_DENSITY_GRID;

/// Share of failed replications above which an experiment is an error.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub anchor: Option<Vec<f64>>,
    /// Estimated noise covariance `Σ̂_F` (row-major).
    pub noise_estimate: Option<Vec<Vec<f64>>>,
    pub summary: Option<PosteriorSummary>,
    pub covered: Option<Vec<bool>>,
    pub error: Option<String>,
    /// Wall-clock of the sampler phase (kept out of the JSON so reruns are
    /// byte-identical).
    #[serde(skip)]
    pub runtime_s: f64,
}

/// One row per study, matching the Mean / Std. Dev. / Coverage / Runtime
/// layout of the replication tables.
#[derive(Clone, Debug, Serialize)]
pub struct TableRow {
    pub model: String,
    pub method: String,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub coverage: Option<Vec<f64>>,
    pub replications: usize,
    pub failures: usize,
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub replications: Vec<ReplicationResult>,
    pub aggregate: TableRow,
}

impl ResultRecord {
    pub fn failures(&self) -> usize {
        self.aggregate.failures
    }
}

/// One calibration fit on a fixed data set.
pub(crate) struct Fit {
    pub anchor: AnchorEstimate,
    pub noise: DMatrix<f64>,
    pub chain: Chain,
    pub summary: PosteriorSummary,
    pub runtime_s: f64,
}

fn prior_for(config: &ExperimentConfig, cs: &crate::model::ConstraintSet) -> Result<Box<dyn BiasPrior>> {
    Ok(match config.prior {
        PriorId::Gp => Box::new(GpPrior { kernel: config.kernel()? }),
        PriorId::Basis => Box::new(BasisExpansionPrior::new(config.basis_size, config.tau2)?),
        PriorId::Ogp => Box::new(OgpPrior::new(config.kernel()?, cs.clone())),
    })
}

/// Σ̂ → θ̃ → whitening → constraint set → projection sampler → summary.
pub(crate) fn fit_problem(
    field: &FieldObservations,
    model: &ComputerModel,
    config: &ExperimentConfig,
    sampler_seed: u64,
) -> Result<Fit> {
    let noise = estimate_noise_covariance(field, &SmootherSpec::default())?;
    let anchor = estimate_anchor(field, model)?;
    let white = whiten(field, model, &noise)?;
    let rule = Arc::new(gauss_legendre_rule(config.quadrature_points, field.design().domain())?);
    let cs = build_constraint_set(&white.model, &anchor.theta, &rule, field.design())?;
    let prior = prior_for(config, &cs)?;
    let sampler_cfg = SamplerConfig {
        iters: config.iters,
        burnin: config.burnin,
        seed: sampler_seed,
        projection: config.projection,
        variant: config.constraint_variant,
        moment_samples: config.moment_samples,
        diagnostics: config.diagnostics,
        ..SamplerConfig::default()
    };
    let theta_prior = ThetaPrior::standard(model.theta_domain().clone());
    let start = Instant::now();
    let chain = run_projection_sampler(
        &white.field,
        &white.model,
        prior.as_ref(),
        &theta_prior,
        &cs,
        &white.noise,
        &sampler_cfg,
    )?;
    let runtime_s = start.elapsed().as_secs_f64();
    let summary = summarize_chain(&chain, config.level)?;
    Ok(Fit {
        anchor,
        noise: noise.covariance().clone(),
        chain,
        summary,
        runtime_s,
    })
}

fn replication_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng
}

/// Field data CSV with columns `x_1..x_d, y_1..y_q`.
fn read_field_csv(path: &Path, domain: BoxDomain) -> Result<FieldObservations> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let pick = |prefix: &str| -> Vec<usize> {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    };
    let (xc, yc) = (pick("x_"), pick("y_"));
    if xc.is_empty() || yc.is_empty() {
        return Err(Error::config(format!("{} needs x_ and y_ columns", path.display())));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |c: usize| {
            rec[c]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad value {:?}: {e}", &rec[c])))
        };
        xs.push(xc.iter().map(|&c| parse(c)).collect::<Result<Vec<f64>>>()?);
        ys.push(yc.iter().map(|&c| parse(c)).collect::<Result<Vec<f64>>>()?);
    }
    let n = xs.len();
    let design = Design::new(DMatrix::from_fn(n, xc.len(), |i, k| xs[i][k]), domain)?;
    FieldObservations::new(design, DMatrix::from_fn(n, yc.len(), |i, k| ys[i][k]))
}

fn custom_problem(config: &ExperimentConfig, seed: u64) -> Result<(FieldObservations, ComputerModel)> {
    let runs = RunTable::from_path(config.runtable.as_ref().expect("validated"))?;
    let (p, d) = (runs.p(), runs.d());
    let x_cols = runs.inputs().columns(p, d);
    let lower: Vec<f64> = x_cols.column_iter().map(|c| c.min()).collect();
    let upper: Vec<f64> = x_cols.column_iter().map(|c| c.max()).collect();
    let field = read_field_csv(config.field_data.as_ref().expect("validated"), BoxDomain::new(lower, upper)?)?;
    let surrogate = fit_surrogate(&runs, &SurrogateOptions { seed, ..SurrogateOptions::default() })?;
    let model = surrogate_as_model(Arc::new(surrogate), config.custom_domain()?)?;
    Ok((field, model))
}

/// The full pipeline for replication `r`, which draws fresh data from its
/// own random stream.
pub fn run_replication(config: &ExperimentConfig, r: usize) -> Result<(ReplicationResult, Chain)> {
    let mut rng = replication_rng(config.seed, r);
    let (field, model, theta_star) = if config.model == ModelId::CustomRuntable {
        let (field, model) = custom_problem(config, config.seed)?;
        (field, model, config.theta_star.clone())
    } else {
        let bench = generate_benchmark(config.model, config.n, &config.noise()?, &mut rng)?;
        (bench.field, bench.model, Some(bench.theta_star))
    };
    let fit = fit_problem(&field, &model, config, rng.random())?;
    let covered = theta_star.as_ref().map(|t| fit.summary.covers(t));
    let noise = fit.noise.row_iter().map(|row| row.iter().copied().collect()).collect();
    Ok((
        ReplicationResult {
            replication: r,
            anchor: Some(fit.anchor.theta.clone()),
            noise_estimate: Some(noise),
            summary: Some(fit.summary),
            covered,
            error: None,
            runtime_s: fit.runtime_s,
        },
        fit.chain,
    ))
}

/// Worker count: `ORTHOCAL_THREADS`, else the config, else all cores.
pub fn worker_count(config: &ExperimentConfig) -> usize {
    std::env::var("ORTHOCAL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0)
        .or(config.threads)
        .unwrap_or_else(rayon::current_num_threads)
}

fn run_parallel<T, F>(config: &ExperimentConfig, reps: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(config))
        .build()
        .map_err(|e| Error::Experiment(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..reps).into_par_iter().map(job).collect()))
}

fn aggregate(config: &ExperimentConfig, reps: &[ReplicationResult]) -> TableRow {
    let ok: Vec<&ReplicationResult> = reps.iter().filter(|r| r.summary.is_some()).collect();
    let p = ok.first().map_or(0, |r| r.summary.as_ref().unwrap().mean.len());
    let avg = |f: &dyn Fn(&PosteriorSummary) -> &Vec<f64>| -> Vec<f64> {
        (0..p)
            .map(|j| ok.iter().map(|r| f(r.summary.as_ref().unwrap())[j]).sum::<f64>() / ok.len() as f64)
            .collect()
    };
    let with_cover: Vec<&Vec<bool>> = ok.iter().filter_map(|r| r.covered.as_ref()).collect();
    let coverage = (!with_cover.is_empty()).then(|| {
        (0..p)
            .map(|j| with_cover.iter().filter(|c| c[j]).count() as f64 / with_cover.len() as f64)
            .collect()
    });
    TableRow {
        model: config.model.to_string(),
        method: config.method_label(),
        mean: avg(&|s| &s.mean),
        sd: avg(&|s| &s.sd),
        coverage,
        replications: reps.len(),
        failures: reps.len() - ok.len(),
        runtime_s: if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| r.runtime_s).sum::<f64>() / ok.len() as f64
        },
    }
}

fn write_table(row: &TableRow, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "method", "coordinate", "mean", "std_dev", "coverage", "runtime_s"])?;
    for j in 0..row.mean.len() {
        let cov = row.coverage.as_ref().map_or(String::new(), |c| format!("{:.4}", c[j]));
        w.write_record([
            row.model.clone(),
            row.method.clone(),
            format!("theta_{}", j + 1),
            format!("{:.6}", row.mean[j]),
            format!("{:.6}", row.sd[j]),
            cov,
            format!("{:.3}", row.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every replication (in parallel, aggregated in replication order),
/// writing `summary.json`, `table.csv` and `chain_<r>.csv` when an output
/// directory is configured. Individual failures are recorded; more than
/// [`MAX_FAILURE_FRACTION`] of them is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRecord> {
    config.validate()?;
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir)?;
    }
    let outcomes = run_parallel(config, config.replications, |r| {
        let out = run_replication(config, r);
        match out {
            Ok((res, chain)) => {
                if let Some(dir) = &config.output {
                    write_chain_csv(&chain, &dir.join(format!("chain_{r}.csv")))?;
                }
                Ok(res)
            }
            Err(e) => {
                log::warn!("replication {r} failed: {e}");
                Ok(ReplicationResult {
                    replication: r,
                    anchor: None,
                    noise_estimate: None,
                    summary: None,
                    covered: None,
                    error: Some(e.to_string()),
                    runtime_s: 0.0,
                })
            }
        }
    })?;
    let replications = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(config, &replications);
    let record = ResultRecord {
        config_digest: config.digest(),
        config: config.clone(),
        replications,
        aggregate,
    };
    if let Some(dir) = &config.output {
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&record)?)?;
        write_table(&record.aggregate, &dir.join("table.csv"))?;
    }
    let failures = record.failures();
    if failures as f64 > MAX_FAILURE_FRACTION * config.replications as f64 {
        return Err(Error::Experiment(format!(
            "{failures} of {} replications failed; first error: {}",
            config.replications,
            record
                .replications
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_default()
        )));
    }
    Ok(record)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageTable {
    pub coverage: Vec<f64>,
    pub mean_runtime_s: f64,
    pub failures: usize,
    pub record: ResultRecord,
}

/// Empirical coverage of the credible intervals over `replications` fresh
/// data sets.
pub fn coverage_experiment(config: &ExperimentConfig, replications: usize, seed: u64) -> Result<CoverageTable> {
    if replications < 2 {
        return Err(Error::config("coverage needs at least two replications"));
    }
    let cfg = ExperimentConfig {
        replications,
        seed,
        ..config.clone()
    };
    let record = run_experiment(&cfg)?;
    let coverage = record
        .aggregate
        .coverage
        .clone()
        .ok_or_else(|| Error::config("coverage needs a known θ*"))?;
    Ok(CoverageTable {
        coverage,
        mean_runtime_s: record.aggregate.runtime_s,
        failures: record.failures(),
        record,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BivariateReplication {
    pub joint: PosteriorSummary,
    pub outcome1: PosteriorSummary,
    pub outcome2: PosteriorSummary,
    /// Share of joint-fit draws inside `[3.4, 3.7]`.
    pub joint_mass_in_band: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BivariateStudy {
    pub replications: Vec<BivariateReplication>,
    /// Share of replications where the joint SD is below the outcome-2 SD.
    pub joint_sharper_fraction: f64,
}

pub const BIVARIATE_BAND: (f64, f64) = (3.4, 3.7);

/// Joint and per-outcome fits of the bivariate pair on shared data. With an
/// output directory, replication 0's three posteriors are written as
/// `density_uni1.csv`, `density_uni2.csv` and `density_joint.csv`.
pub fn run_bivariate_study(config: &ExperimentConfig) -> Result<BivariateStudy> {
    let cfg = ExperimentConfig {
        model: ModelId::Bivariate,
        ..config.clone()
    };
    cfg.validate()?;
    if let Some(dir) = &cfg.output {
        std::fs::create_dir_all(dir)?;
    }
    let results = run_parallel(&cfg, cfg.replications, |r| -> Result<BivariateReplication> {
        let mut rng = replication_rng(cfg.seed, r);
        let bench = generate_benchmark(ModelId::Bivariate, cfg.n, &cfg.noise()?, &mut rng)?;
        let joint = fit_problem(&bench.field, &bench.model, &cfg, rng.random())?;
        let mut marginals = Vec::with_capacity(2);
        for k in 0..2 {
            let field = bench.field.select_outcomes(&[k])?;
            let sim = SelectOutcomes::new(bench.model.simulator().clone(), vec![k])?;
            let model = ComputerModel::with_gradient_mode(
                Arc::new(sim),
                bench.model.theta_domain().clone(),
                bench.model.gradient_mode(),
            )?;
            marginals.push(fit_problem(&field, &model, &cfg, rng.random())?);
        }
        let draws = joint.chain.coordinate(0);
        let mass = draws
            .iter()
            .filter(|t| (BIVARIATE_BAND.0..=BIVARIATE_BAND.1).contains(*t))
            .count() as f64
            / draws.len() as f64;
        if r == 0 {
            if let Some(dir) = &cfg.output {
                for (name, fit) in [("uni1", &marginals[0]), ("uni2", &marginals[1]), ("joint", &joint)] {
                    let table = emit_density_data(&fit.chain.coordinate(0), DEFAULT_DENSITY_GRID)?;
                    write_density_csv(&table, &dir.join(format!("density_{name}.csv")))?;
                }
            }
        }
        let outcome2 = marginals.pop().expect("two fits").summary;
        let outcome1 = marginals.pop().expect("two fits").summary;
        Ok(BivariateReplication {
            joint: joint.summary,
            outcome1,
            outcome2,
            joint_mass_in_band: mass,
        })
    })?;
    let replications = results.into_iter().collect::<Result<Vec<_>>>()?;
    let sharper = replications.iter().filter(|r| r.joint.sd[0] < r.outcome2.sd[0]).count();
    let study = BivariateStudy {
        joint_sharper_fraction: sharper as f64 / replications.len() as f64,
        replications,
    };
    if let Some(dir) = &cfg.output {
        std::fs::write(dir.join("bivariate.json"), serde_json::to_string_pretty(&study)?)?;
    }
    Ok(study)
}
