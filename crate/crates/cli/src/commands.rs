//! Subcommand implementations. Each returns a report for the caller to print
//! and writes its artifacts into the run directory.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use sagabed::bed::{run_pathwise_baseline, run_saga_bed, BedOutcome};
use sagabed::mi::{nmc_estimate, NmcEstimate};
use sagabed::models::sample_prior;
use sagabed::nn::Critic;
use sagabed::posterior::{categorical_sample, kish_ess, mh_sample, summarize, PosteriorModel, PosteriorSummary};
use sagabed::rng::derive_seed;

use crate::config::{ExperimentConfig, Method, ModelKind, Provenance, SamplerKind};
use crate::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const CRITIC_FILE: &str = "critic.txt";
pub const DESIGN_FILE: &str = "design.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const NMC_FILE: &str = "nmc_ref.csv";

// Seed streams for the post-training stages.
const STREAM_NMC: u64 = 200;
const STREAM_Y_STAR: u64 = 300;
const STREAM_MH: u64 = 301;
const STREAM_POOL: u64 = 302;
const STREAM_RESAMPLE: u64 = 303;

/// Overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunOptions {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn matrix_csv(prefix: &str, m: &Array2<f64>) -> String {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}_{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in m.rows() {
        out.push_str(&csv_row(&row.to_vec()));
        out.push('\n');
    }
    out
}

fn read_design(dir: &Path) -> Result<Vec<f64>, CliError> {
    let path = dir.join(DESIGN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let row = text
        .lines()
        .nth(1)
        .ok_or_else(|| CliError::Runtime(format!("{}: no design row", path.display())))?;
    row.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Runtime(format!("{}: bad value `{v}`: {e}", path.display())))
        })
        .collect()
}

#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub outcome: BedOutcome,
    pub nmc: Option<NmcEstimate>,
}

/// Runs the design optimization and writes trace, critic, final design and manifest.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    opts.apply(&mut cfg);
    let model = cfg.build_model()?;
    let bed = cfg.bed_config(model.design_dim());
    let outcome = match cfg.optimizer.method {
        Method::Saga => run_saga_bed(model.as_ref(), &bed)?,
        Method::Pathwise => run_pathwise_baseline(model.as_ref(), &bed)?,
    };

    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write_file(&dir.join(TRACE_FILE), &outcome.trace.to_csv())?;
    write_file(&dir.join(CRITIC_FILE), &outcome.critic.to_text())?;
    let design = Array2::from_shape_vec((1, outcome.design.len()), outcome.design.values().to_vec())
        .expect("one row");
    write_file(&dir.join(DESIGN_FILE), &matrix_csv("xi", &design))?;
    let mut manifest = cfg.clone();
    manifest.provenance = Some(Provenance {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
    });
    write_file(&dir.join(MANIFEST_FILE), &manifest.to_toml())?;

    let nmc = if cfg.nmc.enabled {
        let est = nmc_estimate(
            model.as_ref(),
            outcome.design.values(),
            cfg.nmc.outer,
            cfg.nmc.inner,
            derive_seed(cfg.seed, &[STREAM_NMC]),
        )?;
        append_nmc(&dir, outcome.design.values(), &est, cfg.seed)?;
        Some(est)
    } else {
        None
    };
    Ok(RunReport { dir, outcome, nmc })
}

fn append_nmc(dir: &Path, xi: &[f64], est: &NmcEstimate, seed: u64) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(NMC_FILE);
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("xi,value,std_err,outer,inner,seed\n");
    }
    let xi: Vec<String> = xi.iter().map(|v| format!("{v:?}")).collect();
    let _ = writeln!(
        line,
        "{},{:?},{:?},{},{},{}",
        xi.join(" "),
        est.value,
        est.std_err,
        est.outer,
        est.inner,
        seed
    );
    f.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))
}

/// Nested Monte Carlo reference at `xi`, or at the run's final design when absent.
pub fn cmd_nmc_ref(config_path: &Path, xi: Option<Vec<f64>>, opts: &RunOptions) -> Result<NmcEstimate, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    opts.apply(&mut cfg);
    let model = cfg.build_model()?;
    if cfg.model.kind != ModelKind::Linear {
        return Err(CliError::Unsupported(format!(
            "nested Monte Carlo needs a likelihood; model `{}` has none",
            model.name()
        )));
    }
    let xi = match xi {
        Some(v) => v,
        None => read_design(&cfg.output.dir)?,
    };
    model
        .domain()
        .check(&xi)
        .map_err(|e| CliError::Config(format!("--xi: {e}")))?;
    let est = nmc_estimate(
        model.as_ref(),
        &xi,
        cfg.nmc.outer,
        cfg.nmc.inner,
        derive_seed(cfg.seed, &[STREAM_NMC]),
    )?;
    append_nmc(&cfg.output.dir, &xi, &est, cfg.seed)?;
    Ok(est)
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorRecord {
    pub sampler: String,
    pub seed: u64,
    pub count: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// MH acceptance rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    /// Effective size of the weighted pool (categorical only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_ess: Option<f64>,
    pub design: Vec<f64>,
    pub y_star: Vec<f64>,
}

#[derive(Debug)]
pub struct PosteriorReport {
    pub record: PosteriorRecord,
    pub summary: PosteriorSummary,
    pub samples: Array2<f64>,
    pub samples_path: PathBuf,
}

fn load_critic(dir: &Path) -> Result<Critic, CliError> {
    let path = dir.join(CRITIC_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("missing or unreadable critic file {}: {e}", path.display())))?;
    Critic::from_text(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Samples the posterior for `θ_true`'s simulated outcome at the run's final design.
pub fn cmd_posterior(run_dir: &Path, sampler: Option<SamplerKind>, seed: Option<u64>) -> Result<PosteriorReport, CliError> {
    let manifest = run_dir.join(MANIFEST_FILE);
    let mut cfg = ExperimentConfig::load(&manifest)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let sampler = sampler.unwrap_or(cfg.posterior.sampler);
    let critic = load_critic(run_dir)?;
    let model = cfg.build_model()?;
    let design = read_design(run_dir)?;
    let y_star = model.simulate(&cfg.model.theta_true, &design, derive_seed(cfg.seed, &[STREAM_Y_STAR]))?;
    let pm = PosteriorModel::new(&critic, y_star.clone(), cfg.posterior_tau(), model.as_ref())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", run_dir.join(CRITIC_FILE).display())))?;

    let (samples, acceptance_rate, pool_ess) = match sampler {
        SamplerKind::Mh => {
            let chain = mh_sample(&pm, &cfg.mh_settings(), derive_seed(cfg.seed, &[STREAM_MH]))?;
            (chain.samples, Some(chain.acceptance_rate), None)
        }
        SamplerKind::Categorical => {
            let pool = sample_prior(model.as_ref(), cfg.posterior.pool, derive_seed(cfg.seed, &[STREAM_POOL]))?;
            let ess = kish_ess(&pm.log_weights(&pool)?);
            let draws = categorical_sample(
                &pm,
                &pool,
                cfg.posterior.draws,
                derive_seed(cfg.seed, &[STREAM_RESAMPLE]),
            )?;
            (draws, None, Some(ess))
        }
    };
    let summary = summarize(&samples, sampler.name())?;
    let record = PosteriorRecord {
        sampler: sampler.name().to_string(),
        seed: cfg.seed,
        count: summary.count,
        mean: summary.mean.clone(),
        std: summary.std.clone(),
        acceptance_rate,
        pool_ess,
        design,
        y_star,
    };
    let samples_path = run_dir.join(format!("posterior_{}.csv", sampler.name()));
    write_file(&samples_path, &matrix_csv("theta", &samples))?;
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    write_file(&run_dir.join(format!("posterior_{}.json", sampler.name())), &(json + "\n"))?;
    Ok(PosteriorReport {
        record,
        summary,
        samples,
        samples_path,
    })
}

pub fn cmd_validate_config(config_path: &Path) -> Result<ExperimentConfig, CliError> {
    ExperimentConfig::load(config_path)
}
