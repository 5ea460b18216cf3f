//! Runnable experiments over a run directory: train, resume, evaluate,
//! compare and inspect populations.
//!
//! A run directory holds `config.toml` (the resolved configuration),
//! `population.txt`, `metrics.csv`, `checkpoints/`, `summary.json`,
//! `learning_curve.svg` and, after evaluation, `eval/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::{sample_population, EnvDescriptor, EnvPopulation};
use crate::error::{Error, Result};
use crate::eval::{compare_methods, evaluate_zero_shot, Comparison, EvalConfig, EvalReport};
use crate::persist::{
    checkpoint_path, latest_checkpoint, prune_checkpoints, read_metrics, write_atomic, Checkpoint,
    MetricsWriter,
};
use crate::plot::{bar_chart, line_chart, Bar, Series};
use crate::rng::{RngStream, StreamName};
use crate::train::{SampleAccount, METRICS_SCHEMA_VERSION};
use crate::{Real, RealTrainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const POPULATION_FILE: &str = "population.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_DIR: &str = "eval";
/// Checkpoints kept on disk; older ones are pruned.
pub const KEEP_CHECKPOINTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub method: String,
    pub seed: u64,
    pub population_hash: String,
    pub metrics_schema_version: u32,
    pub updates: usize,
    pub iterations: usize,
    pub samples: SampleAccount,
    pub total_steps: u64,
    pub pretrain_reached: bool,
    pub faults: usize,
    pub error_skips: usize,
}

/// Samples (or loads) the population, applying the configured reference choice.
pub fn build_population(config: &ExperimentConfig, descriptor: &EnvDescriptor) -> Result<EnvPopulation> {
    let population = if config.env.population_file.is_empty() {
        let mut rng = RngStream::child(config.env.population_seed, StreamName::Population);
        sample_population(descriptor, config.env.k_train, config.env.k_val, config.env.k_heldout, &mut rng)?
    } else {
        EnvPopulation::load(Path::new(&config.env.population_file))?.relabel(descriptor)?
    };
    if config.env.reference_index >= 0 {
        population.with_reference_index(config.env.reference_index as usize)
    } else {
        Ok(population)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn read_config(run_dir: &Path) -> Result<ExperimentConfig> {
    let path = run_dir.join(CONFIG_FILE);
    if !path.is_file() {
        return Err(Error::config(format!("{} not found", path.display())));
    }
    ExperimentConfig::load(Some(&path), &[])
}

/// Trains per `config` into a fresh run directory and returns its path.
pub fn train(config: &ExperimentConfig) -> Result<PathBuf> {
    let run_dir = config.run_dir();
    fs::create_dir_all(run_dir.join(crate::persist::CHECKPOINT_DIR)).map_err(|e| Error::io(&run_dir, e))?;
    write_text(&run_dir.join(CONFIG_FILE), &config.to_toml()?)?;
    let descriptor = config.descriptor()?;
    let population = build_population(config, &descriptor)?;
    population.save(&run_dir.join(POPULATION_FILE))?;
    let trainer = RealTrainer::new(
        config.method,
        config.seed,
        config.train.clone(),
        config.ppo.clone(),
        config.error_fn.clone(),
        descriptor,
        population,
    )?;
    let mut metrics = MetricsWriter::create(&run_dir.join(METRICS_FILE))?;
    save_checkpoint(&run_dir, &trainer, metrics.rows())?;
    drive(config, &run_dir, trainer, &mut metrics)?;
    Ok(run_dir)
}

/// Continues a run from its newest checkpoint; the result matches an
/// uninterrupted run.
pub fn resume(run_dir: &Path) -> Result<PathBuf> {
    let config = read_config(run_dir)?;
    let checkpoint = Checkpoint::<Real>::load(&latest_checkpoint(run_dir)?)?;
    let mut metrics = MetricsWriter::resume(&run_dir.join(METRICS_FILE), checkpoint.metrics_rows)?;
    drive(&config, run_dir, checkpoint.trainer, &mut metrics)?;
    Ok(run_dir.to_path_buf())
}

fn save_checkpoint(run_dir: &Path, trainer: &RealTrainer, rows: usize) -> Result<()> {
    Checkpoint::new(trainer.clone(), rows).save(&checkpoint_path(run_dir, trainer.updates))?;
    prune_checkpoints(run_dir, KEEP_CHECKPOINTS)
}

fn drive(
    config: &ExperimentConfig,
    run_dir: &Path,
    mut trainer: RealTrainer,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    let every = config.run.checkpoint_every;
    while let Some(row) = trainer.advance()? {
        metrics.write(&row)?;
        if every > 0 && trainer.updates % every == 0 {
            save_checkpoint(run_dir, &trainer, metrics.rows())?;
        }
    }
    save_checkpoint(run_dir, &trainer, metrics.rows())?;
    let summary = RunSummary {
        name: config.name.clone(),
        method: trainer.method.name().into(),
        seed: trainer.seed,
        population_hash: trainer.population.hash(),
        metrics_schema_version: METRICS_SCHEMA_VERSION,
        updates: trainer.updates,
        iterations: trainer.iterations,
        samples: trainer.samples,
        total_steps: trainer.samples.total(),
        pretrain_reached: trainer.pretrain_reached,
        faults: trainer.faults,
        error_skips: trainer.error_skips,
    };
    write_text(&run_dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&summary)?)?;
    let rows = read_metrics(&run_dir.join(METRICS_FILE))?;
    let curve = Series {
        label: config.method.name().into(),
        points: rows.iter().map(|r| (r.total_steps as f64, r.mean_return)).collect(),
        err: None,
    };
    write_text(
        &run_dir.join("learning_curve.svg"),
        &line_chart(&config.name, "environment steps", "training return", &[curve]),
    )?;
    info!("{}: {} updates, {} steps", config.name, trainer.updates, trainer.samples.total());
    Ok(())
}

/// Evaluation result plus the files it was written to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Same evaluation with the true `nu`, for universal policies only.
    pub oracle: Option<EvalReport>,
    /// Set when the evaluated population differs from the training population.
    pub warning: Option<String>,
}

/// Zero-shot evaluation of the newest checkpoint on the held-out entries of
/// the run's population, or of `population` when given.
pub fn evaluate(run_dir: &Path, population: Option<&Path>, eval: &EvalConfig) -> Result<EvalOutcome> {
    let checkpoint = Checkpoint::<Real>::load(&latest_checkpoint(run_dir)?)?;
    let trainer = checkpoint.trainer;
    let trained_on = EnvPopulation::load(&run_dir.join(POPULATION_FILE))?;
    let target = match population {
        Some(p) => EnvPopulation::load(p)?.relabel(&trainer.descriptor)?,
        None => trained_on.clone(),
    };
    let warning = (target.hash() != trained_on.hash()).then(|| {
        format!(
            "WARNING: evaluation population {} differs from training population {}",
            target.hash(),
            trained_on.hash()
        )
    });
    if let Some(w) = &warning {
        warn!("{w}");
    }
    let indices = target.held_out();
    let report = evaluate_zero_shot(&trainer.agent, &trainer.descriptor, &target, &indices, eval, trainer.samples)?;
    let oracle = if trainer.method == crate::agent::Method::Up {
        let diag = EvalConfig { nu_input: crate::agent::NuInput::Oracle, ..eval.clone() };
        Some(evaluate_zero_shot(&trainer.agent, &trainer.descriptor, &target, &indices, &diag, trainer.samples)?)
    } else {
        None
    };
    let outcome = EvalOutcome { report, oracle, warning };
    let dir = run_dir.join(EVAL_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("report.json"), &serde_json::to_string_pretty(&outcome)?)?;
    write_text(&dir.join("report.csv"), &eval_csv(&outcome, &target, &trainer.descriptor)?)?;
    let mut bars: Vec<Bar> = outcome
        .report
        .envs
        .iter()
        .map(|e| Bar { label: format!("env {}", e.index), value: e.normalized, err: 0.0 })
        .collect();
    bars.push(Bar { label: "mean".into(), value: outcome.report.normalized_return, err: 0.0 });
    let title = format!("{} held-out normalized return", trainer.method.name());
    write_text(&dir.join("report.svg"), &bar_chart(&title, "normalized return", &bars))?;
    Ok(outcome)
}

fn eval_csv(outcome: &EvalOutcome, population: &EnvPopulation, descriptor: &EnvDescriptor) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let names: Vec<String> = descriptor.param_specs.iter().map(|p| p.name.clone()).collect();
    let mut header = vec!["method".to_string(), "nu_input".into(), "env".into()];
    header.extend(names.iter().cloned());
    header.extend(["mean_return", "std_return", "mean_length", "normalized"].map(String::from));
    w.write_record(&header)?;
    for report in std::iter::once(&outcome.report).chain(outcome.oracle.as_ref()) {
        let nu = serde_json::to_value(report.nu_input)?.as_str().unwrap_or_default().to_string();
        for e in &report.envs {
            let mut rec = vec![report.method.name().to_string(), nu.clone(), e.index.to_string()];
            rec.extend(population.entries[e.index].iter().map(|v| v.to_string()));
            rec.extend([e.mean_return, e.std_return, e.mean_length, e.normalized].map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let mut rec = vec![report.method.name().to_string(), nu, "mean".into()];
        rec.extend(names.iter().map(|_| String::new()));
        rec.extend([report.mean_return.to_string(), String::new(), String::new(), report.normalized_return.to_string()]);
        w.write_record(&rec)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::io("report", e.into_error()))?)
        .map_err(|e| Error::contract(e.to_string()))?;
    Ok(match &outcome.warning {
        Some(banner) => format!("# {banner}\n{body}"),
        None => body,
    })
}

/// Loads each run's evaluation report and writes a comparison into `out_dir`.
pub fn compare(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    for dir in run_dirs {
        let path = dir.join(EVAL_DIR).join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let outcome: EvalOutcome = serde_json::from_str(&text)?;
        reports.push(outcome.report);
        let metrics = dir.join(METRICS_FILE);
        if metrics.is_file() {
            let rows = read_metrics(&metrics)?;
            curves.push(Series {
                label: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                points: rows.iter().map(|r| (r.total_steps as f64, r.mean_return)).collect(),
                err: None,
            });
        }
    }
    let comparison = compare_methods(&reports)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("comparison.json"), &serde_json::to_string_pretty(&comparison)?)?;
    write_text(&out_dir.join("comparison.csv"), &comparison_csv(&comparison)?)?;
    let bars: Vec<Bar> = comparison
        .summaries
        .iter()
        .map(|s| Bar { label: s.method.name().into(), value: s.normalized_mean, err: s.normalized_std })
        .collect();
    write_text(
        &out_dir.join("comparison.svg"),
        &bar_chart("held-out normalized return", "normalized return", &bars),
    )?;
    if !curves.is_empty() {
        write_text(
            &out_dir.join("learning_curves.svg"),
            &line_chart("learning curves", "environment steps", "training return", &curves),
        )?;
    }
    Ok(comparison)
}

fn comparison_csv(c: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seeds", "normalized_mean", "normalized_std", "mean_total_steps", "mean_error_steps"])?;
    for s in &c.summaries {
        w.write_record(&[
            s.method.name().to_string(),
            s.seeds.to_string(),
            s.normalized_mean.to_string(),
            s.normalized_std.to_string(),
            s.mean_total_steps.to_string(),
            s.mean_error_steps.to_string(),
        ])?;
    }
    w.write_record(["improvement", "over", "relative", "", "", ""])?;
    for i in &c.improvements {
        w.write_record(&[
            i.method.name().to_string(),
            i.over.name().to_string(),
            i.relative.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    w.write_record(&[
        "budget".to_string(),
        format!("min={}", c.audit.min_total),
        format!("max={}", c.audit.max_total),
        format!("spread={}", c.audit.spread),
        format!("error_steps_included={}", c.audit.error_steps_included),
        format!("within_one_percent={}", c.audit.within_one_percent),
    ])?;
    String::from_utf8(w.into_inner().map_err(|e| Error::io("comparison", e.into_error()))?)
        .map_err(|e| Error::contract(e.to_string()))
}

/// Human-readable table of a population.
pub fn population_table(population: &EnvPopulation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task {}  hash {}", population.task, population.hash());
    let _ = write!(out, "{:>5} {:>9}", "index", "split");
    for (name, role) in &population.layout {
        let tag = if *role == crate::env::ParamRole::Observable { "mu" } else { "nu" };
        let _ = write!(out, " {:>18}", format!("{name}({tag})"));
    }
    out.push('\n');
    for (i, (entry, tag)) in population.entries.iter().zip(&population.tags).enumerate() {
        let mark = if Some(i) == population.reference_index { "*" } else { "" };
        let _ = write!(out, "{:>5} {:>9}", format!("{i}{mark}"), format!("{tag:?}").to_lowercase());
        for v in entry {
            let _ = write!(out, " {v:>18.6}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:>5} {:>9}", "ref", "reference");
    for v in &population.reference {
        let _ = write!(out, " {v:>18.6}");
    }
    out.push('\n');
    out
}
