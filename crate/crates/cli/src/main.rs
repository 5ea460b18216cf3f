//! `eap`: train, evaluate, compare and ablate error-aware policies and the
//! domain-randomization and universal-policy baselines.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eap::ablation::{run_ablation, AblationSpec};
use eap::config::ExperimentConfig;
use eap::env::EnvPopulation;
use eap::experiment::{self, build_population, population_table, CONFIG_FILE};
use eap::Error;

#[derive(Parser)]
#[command(name = "eap", version, about = "Error-aware policy learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method into a run directory.
    Train {
        /// Experiment configuration (TOML); task defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted-path override, e.g. `--set error_fn.T=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue an interrupted run from its newest checkpoint instead.
        #[arg(long, value_name = "RUN_DIR", conflicts_with_all = ["config", "overrides"])]
        resume: Option<PathBuf>,
    },
    /// Zero-shot evaluation of a run on held-out environments.
    Eval {
        /// Run directory produced by `train`.
        run_dir: PathBuf,
        /// Evaluate on this population file's held-out entries instead.
        #[arg(long)]
        population: Option<PathBuf>,
        /// Override evaluation settings, e.g. `--set eval.episodes=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run an ablation sweep.
    Ablate {
        /// Ablation spec (TOML).
        spec: PathBuf,
    },
    /// Compare evaluated runs trained on the same population.
    Compare {
        /// Directory for the comparison files.
        #[arg(long)]
        out: PathBuf,
        /// Evaluated run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Print a population file, or the population a configuration would sample.
    InspectPopulation {
        #[arg(long, conflicts_with = "config")]
        file: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn run(cli: Cli) -> eap::Result<()> {
    match cli.command {
        Command::Train { config, overrides, resume } => {
            let dir = match resume {
                Some(dir) => experiment::resume(&dir)?,
                None => experiment::train(&ExperimentConfig::load(config.as_deref(), &overrides)?)?,
            };
            println!("{}", dir.display());
        }
        Command::Eval { run_dir, population, overrides } => {
            let path = run_dir.join(CONFIG_FILE);
            if !path.is_file() {
                return Err(Error::Config(format!("{} not found", path.display())));
            }
            let config = ExperimentConfig::load(Some(&path), &overrides)?;
            let outcome = experiment::evaluate(&run_dir, population.as_deref(), &config.eval)?;
            if let Some(w) = &outcome.warning {
                println!("{w}");
            }
            let r = &outcome.report;
            println!("{} {}: held-out normalized return {:.4} (mean return {:.2})", r.task, r.method.name(), r.normalized_return, r.mean_return);
            if let Some(o) = &outcome.oracle {
                println!("  oracle-nu diagnostic: {:.4}", o.normalized_return);
            }
        }
        Command::Ablate { spec } => {
            let spec = AblationSpec::load(&spec)?;
            let table = run_ablation(&spec)?;
            for r in &table.rows {
                let failed = r.per_seed.iter().filter(|v| v.is_none()).count();
                println!("{:>12} {:>24} {:.4} ± {:.4} ({} missing)", r.curve, r.value, r.mean, r.std, failed);
            }
            println!("{}", spec.output_dir().display());
        }
        Command::Compare { out, runs } => {
            let c = experiment::compare(&runs, &out)?;
            for s in &c.summaries {
                println!("{:>4}: {:.4} ± {:.4} over {} seeds", s.method.name(), s.normalized_mean, s.normalized_std, s.seeds);
            }
            for i in &c.improvements {
                println!("{} over {}: {:+.1}%", i.method.name(), i.over.name(), 100.0 * i.relative);
            }
            println!(
                "budget: totals {}..{} (spread {:.4}), error steps included: {}",
                c.audit.min_total, c.audit.max_total, c.audit.spread, c.audit.error_steps_included
            );
        }
        Command::InspectPopulation { file, config, overrides } => {
            let population = match file {
                Some(f) => EnvPopulation::load(&f)?,
                None => {
                    let c = ExperimentConfig::load(config.as_deref(), &overrides)?;
                    build_population(&c, &c.descriptor()?)?
                }
            };
            print!("{}", population_table(&population));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
