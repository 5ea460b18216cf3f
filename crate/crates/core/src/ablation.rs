//! Sweeps one configuration axis (optionally crossed with a second "curve"
//! axis) over seeds, training and evaluating every cell.

use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::mean_std;
use crate::experiment::{evaluate, train};
use crate::persist::write_atomic;
use crate::plot::{bar_chart, line_chart, Bar, Series};

pub const MAX_HORIZON: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationAxis {
    #[serde(rename = "horizon_T")]
    HorizonT,
    #[serde(rename = "representation")]
    Representation,
    #[serde(rename = "mu_split")]
    MuSplit,
    #[serde(rename = "reference_choice")]
    ReferenceChoice,
}

impl AblationAxis {
    fn key(self) -> &'static str {
        match self {
            AblationAxis::HorizonT => "error_fn.T",
            AblationAxis::Representation => "error_fn.representation",
            AblationAxis::MuSplit => "env.observable",
            AblationAxis::ReferenceChoice => "env.reference_index",
        }
    }

    fn name(self) -> &'static str {
        match self {
            AblationAxis::HorizonT => "horizon_T",
            AblationAxis::Representation => "representation",
            AblationAxis::MuSplit => "mu_split",
            AblationAxis::ReferenceChoice => "reference_choice",
        }
    }

    fn numeric(self) -> bool {
        matches!(self, AblationAxis::HorizonT | AblationAxis::ReferenceChoice)
    }

    fn check(self, v: &Value) -> Result<()> {
        let bad = |why: &str| Err(Error::config(format!("ablation {} value {v}: {why}", self.name())));
        match self {
            AblationAxis::HorizonT => match v.as_integer() {
                Some(t) if (1..=MAX_HORIZON).contains(&t) => Ok(()),
                _ => bad("expected an integer in 1..=8"),
            },
            AblationAxis::Representation => match v.as_str() {
                Some("full" | "projected") => Ok(()),
                _ => bad("expected \"full\" or \"projected\""),
            },
            AblationAxis::MuSplit => match v.as_array() {
                Some(a) if a.iter().all(Value::is_str) => Ok(()),
                _ => bad("expected a list of parameter names"),
            },
            AblationAxis::ReferenceChoice => match v.as_integer() {
                Some(i) if i >= -1 => Ok(()),
                _ => bad("expected a population index or -1"),
            },
        }
    }
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(label).collect::<Vec<_>>().join("+"),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub axis: AblationAxis,
    pub values: Vec<Value>,
    pub seeds: Vec<u64>,
    /// Base configuration file, relative to the spec file; empty for defaults.
    #[serde(default)]
    pub base_config: String,
    /// Extra `key=value` overrides applied to every cell.
    #[serde(default)]
    pub set: Vec<String>,
    /// Optional second axis drawn as separate curves.
    #[serde(default)]
    pub curves: Option<AblationAxis>,
    #[serde(default)]
    pub curve_values: Vec<Value>,
    /// Output directory; empty for `<output root>/ablation-<axis>`.
    #[serde(default)]
    pub output_dir: String,
}

impl AblationSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: AblationSpec = toml::from_str(text).map_err(|e| Error::Parse {
            context: "ablation spec".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec and resolves `base_config` against the spec's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml_str(&text)?;
        if !spec.base_config.is_empty() && Path::new(&spec.base_config).is_relative() {
            let base = path.parent().unwrap_or(Path::new(".")).join(&spec.base_config);
            spec.base_config = base.to_string_lossy().into_owned();
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("ablation values: empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("ablation seeds: empty"));
        }
        self.values.iter().try_for_each(|v| self.axis.check(v))?;
        match self.curves {
            Some(c) if c == self.axis => Err(Error::config("ablation curves: must differ from axis")),
            Some(c) if self.curve_values.is_empty() => {
                Err(Error::config(format!("ablation curve_values: empty for {}", c.name())))
            }
            Some(c) => self.curve_values.iter().try_for_each(|v| c.check(v)),
            None if !self.curve_values.is_empty() => {
                Err(Error::config("ablation curve_values: given without curves"))
            }
            None => Ok(()),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        if !self.output_dir.is_empty() {
            return PathBuf::from(&self.output_dir);
        }
        let root = std::env::var(crate::config::OUTPUT_ROOT_VAR).unwrap_or_else(|_| "runs".into());
        PathBuf::from(root).join(format!("ablation-{}", self.axis.name()))
    }

    fn curve_list(&self) -> Vec<Option<&Value>> {
        match self.curves {
            Some(_) => self.curve_values.iter().map(Some).collect(),
            None => vec![None],
        }
    }

    /// Resolved configuration for one cell.
    pub fn cell_config(&self, curve: Option<&Value>, value: &Value, seed: u64, dir: &Path) -> Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        if let (Some(axis), Some(cv)) = (self.curves, curve) {
            overrides.push(format!("{}={}", axis.key(), cv));
        }
        overrides.push(format!("{}={}", self.axis.key(), value));
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("run.output_dir={}", Value::String(dir.to_string_lossy().into_owned())));
        let base = (!self.base_config.is_empty()).then(|| Path::new(&self.base_config));
        let mut config = ExperimentConfig::load(base, &overrides)?;
        config.name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub curve: String,
    pub value: String,
    /// Normalized held-out return per seed; `None` marks a failed cell.
    pub per_seed: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub curves: Option<AblationAxis>,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, curve: &str, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.curve == curve && r.value == value)
    }
}

/// Trains and evaluates every (curve, value, seed) cell, then writes
/// `ablation.csv`, `ablation.json` and `ablation.svg` into the output directory.
pub fn run_ablation(spec: &AblationSpec) -> Result<AblationTable> {
    spec.validate()?;
    let out = spec.output_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut rows = Vec::new();
    for curve in spec.curve_list() {
        let curve_label = curve.map(label).unwrap_or_default();
        for value in &spec.values {
            let value_label = label(value);
            let mut per_seed = Vec::new();
            let mut failures = Vec::new();
            for &seed in &spec.seeds {
                let mut cell = format!("{}-{}", spec.axis.name(), value_label);
                if curve.is_some() {
                    cell = format!("{curve_label}-{cell}");
                }
                let dir = out.join(format!("{cell}-s{seed}"));
                let result = spec
                    .cell_config(curve, value, seed, &dir)
                    .and_then(|config| {
                        train(&config)?;
                        evaluate(&dir, None, &config.eval)
                    });
                match result {
                    Ok(o) => {
                        info!("{cell} seed {seed}: {:.3}", o.report.normalized_return);
                        per_seed.push(Some(o.report.normalized_return));
                    }
                    Err(e) => {
                        error!("{cell} seed {seed} failed: {e}");
                        per_seed.push(None);
                        failures.push(format!("seed {seed}: {e}"));
                    }
                }
            }
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&ok);
            rows.push(AblationRow { curve: curve_label.clone(), value: value_label, per_seed, mean, std, failures });
        }
    }
    let table = AblationTable { axis: spec.axis, curves: spec.curves, seeds: spec.seeds.clone(), rows };
    write_atomic(&out.join("ablation.json"), serde_json::to_string_pretty(&table)?.as_bytes())?;
    write_atomic(&out.join("ablation.csv"), table_csv(&table)?.as_bytes())?;
    write_atomic(&out.join("ablation.svg"), table_svg(spec, &table).as_bytes())?;
    Ok(table)
}

fn table_csv(table: &AblationTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["curve".to_string(), table.axis.name().into(), "mean".into(), "std".into(), "ok".into()];
    header.extend(table.seeds.iter().map(|s| format!("seed_{s}")));
    w.write_record(&header)?;
    for r in &table.rows {
        let ok = r.per_seed.iter().flatten().count();
        let mut rec = vec![r.curve.clone(), r.value.clone(), r.mean.to_string(), r.std.to_string(), ok.to_string()];
        rec.extend(r.per_seed.iter().map(|v| v.map_or_else(|| "missing".into(), |x| x.to_string())));
        w.write_record(&rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::io("ablation", e.into_error()))?)
        .map_err(|e| Error::contract(e.to_string()))
}

fn table_svg(spec: &AblationSpec, table: &AblationTable) -> String {
    let title = format!("{} ablation", spec.axis.name());
    if spec.axis.numeric() {
        let series: Vec<Series> = spec
            .curve_list()
            .into_iter()
            .map(|c| {
                let cl = c.map(label).unwrap_or_default();
                let rows: Vec<&AblationRow> = table.rows.iter().filter(|r| r.curve == cl).collect();
                Series {
                    label: if cl.is_empty() { "normalized return".into() } else { cl },
                    points: spec
                        .values
                        .iter()
                        .zip(&rows)
                        .map(|(v, r)| (v.as_integer().unwrap_or(0) as f64, r.mean))
                        .collect(),
                    err: Some(rows.iter().map(|r| r.std).collect()),
                }
            })
            .collect();
        line_chart(&title, spec.axis.name(), "held-out normalized return", &series)
    } else {
        let bars: Vec<Bar> = table
            .rows
            .iter()
            .map(|r| Bar {
                label: if r.curve.is_empty() { r.value.clone() } else { format!("{}/{}", r.curve, r.value) },
                value: r.mean,
                err: r.std,
            })
            .collect();
        bar_chart(&title, "held-out normalized return", &bars)
    }
}
