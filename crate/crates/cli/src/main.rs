use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sagabed_cli::config::SamplerKind;
use sagabed_cli::{cmd_nmc_ref, cmd_posterior, cmd_run, cmd_validate_config, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "sagabed", version, about = "Gradient-free Bayesian experimental design for implicit models")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the design and write trace, critic, design and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Nested Monte Carlo mutual information at a design (linear model only).
    NmcRef {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated design; defaults to the run's final design.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        xi: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the posterior from a finished run.
    Posterior {
        /// Run directory holding manifest.toml, critic.txt and design.csv.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        sampler: Option<Sampler>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and check a configuration file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampler {
    Mh,
    Categorical,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { config, out, seed } => {
            let report = cmd_run(&config, &RunOptions { out, seed })?;
            let trace = &report.outcome.trace;
            println!("epochs: {}", trace.len());
            println!("final smile: {:.4}", trace.records.last().map_or(f64::NAN, |r| r.smile));
            println!("last-50 mean smile: {:.4}", trace.tail_mean(50));
            println!("design: {:?}", report.outcome.design.values());
            if let Some(nmc) = report.nmc {
                println!("nmc reference: {:.4} ± {:.4}", nmc.value, nmc.std_err);
            }
            println!("artifacts: {}", report.dir.display());
        }
        Command::NmcRef { config, xi, out, seed } => {
            let est = cmd_nmc_ref(&config, xi, &RunOptions { out, seed })?;
            println!(
                "nmc: {:.4} ± {:.4} (N = {}, M = {})",
                est.value, est.std_err, est.outer, est.inner
            );
        }
        Command::Posterior { run, sampler, seed } => {
            let sampler = sampler.map(|s| match s {
                Sampler::Mh => SamplerKind::Mh,
                Sampler::Categorical => SamplerKind::Categorical,
            });
            let report = cmd_posterior(&run, sampler, seed)?;
            let r = &report.record;
            println!("sampler: {} ({} draws)", r.sampler, r.count);
            for (i, (m, s)) in r.mean.iter().zip(&r.std).enumerate() {
                println!("theta_{i}: {m:.4} ± {s:.4}");
            }
            if let Some(a) = r.acceptance_rate {
                println!("acceptance rate: {a:.3}");
            }
            println!("samples: {}", report.samples_path.display());
        }
        Command::ValidateConfig { config } => {
            let cfg = cmd_validate_config(&config)?;
            println!("ok: {} model, {} epochs", cfg.build_model()?.name(), cfg.optimizer.epochs);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
