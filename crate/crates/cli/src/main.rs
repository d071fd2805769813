use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthocal::bench::{
    emit_density_data, run_bivariate_study, run_experiment, write_density_csv, ExperimentConfig, ModelId, PriorId,
    ResultRecord, DEFAULT_DENSITY_GRID,
};
use orthocal::calibrate::{read_chain_csv, ProjectionKind};

/// Calibration of computer models with orthogonality-projected bias priors.
#[derive(Parser)]
#[command(name = "orthocal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study described by a TOML config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replication study on a bundled benchmark.
    Bench(BenchArgs),
    /// Kernel density estimate of each θ coordinate of a chain CSV.
    Density {
        #[arg(long)]
        chain: PathBuf,
        /// Output CSV; with several coordinates `_theta_<j>` is appended to the stem.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DENSITY_GRID)]
        grid: usize,
    },
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: ModelId,
    #[arg(long, default_value_t = PriorId::Gp)]
    prior: PriorId,
    /// Defaults to `functional`, or `none` for the ogp prior.
    #[arg(long)]
    projection: Option<ProjectionKind>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long)]
    sigma: Option<f64>,
    /// Worker cap (ORTHOCAL_THREADS wins if set).
    #[arg(long)]
    threads: Option<usize>,
}

impl BenchArgs {
    fn into_config(self) -> ExperimentConfig {
        let projection = self.projection.unwrap_or(match self.prior {
            PriorId::Ogp => ProjectionKind::None,
            _ => ProjectionKind::Functional,
        });
        ExperimentConfig {
            prior: self.prior,
            projection,
            replications: self.reps,
            seed: self.seed,
            output: self.out,
            n: self.n,
            iters: self.iters,
            burnin: self.burnin,
            sigma: self.sigma,
            threads: self.threads,
            ..ExperimentConfig::new(self.model)
        }
    }
}

fn report(record: &ResultRecord) {
    let row = &record.aggregate;
    for j in 0..row.mean.len() {
        let cov = row
            .coverage
            .as_ref()
            .map_or_else(|| "-".to_string(), |c| format!("{:.2}", c[j]));
        println!(
            "{} {} theta_{}: mean {:.4} sd {:.4} coverage {} runtime {:.2}s",
            row.model,
            row.method,
            j + 1,
            row.mean[j],
            row.sd[j],
            cov,
            row.runtime_s
        );
    }
    if row.failures > 0 {
        eprintln!("{} of {} replications failed", row.failures, row.replications);
    }
}

fn study(config: ExperimentConfig) -> orthocal::Result<bool> {
    config.validate()?;
    let record = run_experiment(&config)?;
    report(&record);
    if config.model == ModelId::Bivariate {
        let study = run_bivariate_study(&config)?;
        println!(
            "bivariate: joint sd below outcome-2 sd in {:.0}% of replications",
            100.0 * study.joint_sharper_fraction
        );
    }
    Ok(record.failures() == 0)
}

fn density_path(out: &Path, j: usize, p: usize) -> PathBuf {
    if p == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("density");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_theta_{}.{ext}", j + 1))
}

fn density(chain: &Path, out: &Path, grid: usize) -> orthocal::Result<bool> {
    let draws = read_chain_csv(chain)?;
    if draws.is_empty() {
        return Err(orthocal::Error::Config(format!("{} has no draws", chain.display())));
    }
    let p = draws[0].len();
    for j in 0..p {
        let xs: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let table = emit_density_data(&xs, grid)?;
        let path = density_path(out, j, p);
        write_density_csv(&table, &path)?;
        log::info!("wrote {} (bandwidth {:.3e})", path.display(), table.bandwidth);
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out } => ExperimentConfig::from_path(&config).and_then(|mut cfg| {
            if out.is_some() {
                cfg.output = out;
            }
            study(cfg)
        }),
        Command::Bench(args) => study(args.into_config()),
        Command::Density { chain, out, grid } => density(&chain, &out, grid),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
