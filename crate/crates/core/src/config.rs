//! Experiment configuration: a sectioned TOML file merged over task
//! defaults, with dotted-path overrides and full resolution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::agent::Method;
use crate::env::{EnvDescriptor, HeldOutVary, Interval, PerturbationSpec, TaskKind};
use crate::error::{Error, Result};
use crate::errorfn::ErrorFnConfig;
use crate::eval::EvalConfig;
use crate::ppo::PpoConfig;
use crate::train::TrainSettings;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "EAP_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeConfig {
    pub train: [f64; 2],
    pub test: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub k_train: usize,
    pub k_val: usize,
    pub k_heldout: usize,
    pub heldout_vary: HeldOutVary,
    pub population_seed: u64,
    /// Load this population file instead of sampling; empty to sample.
    pub population_file: String,
    /// Names of the observable parameters; empty keeps the task's split.
    pub observable: Vec<String>,
    /// Population entry used as the reference; -1 for the task's reference values.
    pub reference_index: i64,
    pub max_steps: usize,
    /// Push magnitude range in newtons; `push_steps = 0` disables pushes.
    pub push_magnitude: [f64; 2],
    pub push_steps: usize,
    pub ranges: BTreeMap<String, RangeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory; empty for `<output root>/<name>`.
    pub output_dir: String,
    /// Updates between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskKind,
    pub method: Method,
    pub seed: u64,
    pub env: EnvConfig,
    pub train: TrainSettings,
    pub ppo: PpoConfig,
    pub error_fn: ErrorFnConfig,
    pub eval: EvalConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Every default for `task`, written out.
    pub fn defaults(task: TaskKind) -> Self {
        let d = task.descriptor();
        let ranges = d
            .param_specs
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    RangeConfig {
                        train: [p.train_range.lo, p.train_range.hi],
                        test: [p.test_range.lo, p.test_range.hi],
                    },
                )
            })
            .collect();
        let ppo = PpoConfig {
            entropy_coef: if task == TaskKind::Pendulum { 0.005 } else { 0.0 },
            ..PpoConfig::default()
        };
        ExperimentConfig {
            name: String::new(),
            task,
            method: Method::Eap,
            seed: 0,
            env: EnvConfig {
                k_train: 10,
                k_val: 4,
                k_heldout: 5,
                heldout_vary: HeldOutVary::Both,
                population_seed: 0,
                population_file: String::new(),
                observable: Vec::new(),
                reference_index: -1,
                max_steps: d.max_steps,
                push_magnitude: [0.0, 0.0],
                push_steps: 0,
                ranges,
            },
            train: TrainSettings::for_task(task),
            ppo,
            error_fn: ErrorFnConfig::default(),
            eval: EvalConfig::default(),
            run: RunConfig { output_dir: String::new(), checkpoint_every: 10 },
        }
    }

    /// Reads `path` (if any), merges it over the task defaults, applies
    /// `key=value` overrides and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>().map_err(|e| Error::Parse {
                    context: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => toml::Table::new(),
        };
        Self::from_table(file, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let table = text.parse::<toml::Table>().map_err(|e| Error::Parse {
            context: "config".into(),
            message: e.to_string(),
        })?;
        Self::from_table(table, overrides)
    }

    fn from_table(file: toml::Table, overrides: &[String]) -> Result<Self> {
        let parsed: Vec<(Vec<String>, Value)> =
            overrides.iter().map(|o| parse_override(o)).collect::<Result<_>>()?;
        // The task decides the defaults, so find it first.
        let mut task_name = match file.get("task") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("task: expected a string")),
            None => "cartpole".to_string(),
        };
        for (path, v) in &parsed {
            if path.len() == 1 && path[0] == "task" {
                task_name = v
                    .as_str()
                    .ok_or_else(|| Error::config("task: expected a string"))?
                    .to_string();
            }
        }
        let task = TaskKind::from_name(&task_name)?;
        let mut tree = Value::try_from(Self::defaults(task))
            .map_err(|e| Error::config(format!("serializing defaults: {e}")))?;
        merge(&mut tree, Value::Table(file), "")?;
        for (path, v) in parsed {
            set_path(&mut tree, &path, v)?;
        }
        let mut config: ExperimentConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        if config.name.is_empty() {
            config.name = format!("{}-{}-s{}", task.name(), config.method.name(), config.seed);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ppo.validate()?;
        let descriptor = self.descriptor()?;
        self.error_fn.validate(descriptor.state_dim)?;
        if self.env.k_train == 0 || self.env.k_val == 0 || self.env.k_heldout == 0 {
            return Err(Error::config("env.k_train, env.k_val, env.k_heldout: must all be at least 1"));
        }
        let k = (self.env.k_train + self.env.k_val + self.env.k_heldout) as i64;
        if self.env.reference_index < -1 || self.env.reference_index >= k {
            return Err(Error::config(format!("env.reference_index: must be -1 or in 0..{k}")));
        }
        if self.eval.episodes == 0 {
            return Err(Error::config("eval.episodes: must be at least 1"));
        }
        Ok(())
    }

    /// Task descriptor with configured ranges, split, step limit and pushes.
    pub fn descriptor(&self) -> Result<EnvDescriptor> {
        let mut d = self.task.descriptor();
        for spec in &mut d.param_specs {
            let r = self.env.ranges.get(&spec.name).ok_or_else(|| {
                Error::config(format!("env.ranges.{}: missing", spec.name))
            })?;
            spec.train_range = Interval { lo: r.train[0], hi: r.train[1] };
            spec.test_range = Interval { lo: r.test[0], hi: r.test[1] };
            spec.validate()
                .map_err(|e| Error::config(format!("env.ranges.{}: {e}", spec.name)))?;
        }
        for name in self.env.ranges.keys() {
            if !d.param_specs.iter().any(|p| &p.name == name) {
                return Err(Error::config(format!("env.ranges.{name}: unknown parameter")));
            }
        }
        if self.env.max_steps == 0 {
            return Err(Error::config("env.max_steps: must be positive"));
        }
        d.max_steps = self.env.max_steps;
        d.heldout_vary = self.env.heldout_vary;
        if self.env.push_steps > 0 {
            d.perturbation = Some(PerturbationSpec {
                magnitude: Interval { lo: self.env.push_magnitude[0], hi: self.env.push_magnitude[1] },
                duration_steps: self.env.push_steps,
            });
        }
        if !self.env.observable.is_empty() {
            let names: Vec<&str> = self.env.observable.iter().map(String::as_str).collect();
            d = d.remap_split(&names)?;
        }
        d.validate()?;
        Ok(d)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    /// `run.output_dir`, else `$EAP_OUTPUT_ROOT/<name>`, else `runs/<name>`.
    pub fn run_dir(&self) -> PathBuf {
        if !self.run.output_dir.is_empty() {
            return PathBuf::from(&self.run.output_dir);
        }
        let root = std::env::var(OUTPUT_ROOT_VAR).unwrap_or_else(|_| DEFAULT_OUTPUT_ROOT.into());
        PathBuf::from(root).join(&self.name)
    }
}

/// Splits `a.b.c=value`; the value is read as TOML, falling back to a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{text}`: expected key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override `{text}`: malformed key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn coerce(existing: &Value, new: Value, path: &str) -> Result<Value> {
    match (existing, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Array(old), Value::Array(items)) => {
            // Coerce element-wise against the first element's type, if any.
            match old.first() {
                Some(proto) => items
                    .into_iter()
                    .map(|v| coerce(proto, v, path))
                    .collect::<Result<Vec<_>>>()
                    .map(Value::Array),
                None => Ok(Value::Array(items)),
            }
        }
        (e, n) if std::mem::discriminant(e) == std::mem::discriminant(&n) => Ok(n),
        (Value::Table(_), _) => Err(Error::config(format!("{path}: expected a table"))),
        (e, n) => Err(Error::config(format!(
            "{path}: expected {}, found {}",
            e.type_str(),
            n.type_str()
        ))),
    }
}

/// Merges `incoming` into `base`; keys absent from `base` are rejected.
fn merge(base: &mut Value, incoming: Value, path: &str) -> Result<()> {
    match (base, incoming) {
        (Value::Table(b), Value::Table(inc)) => {
            for (k, v) in inc {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &child)?,
                    None => return Err(Error::config(format!("{child}: unknown key"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = coerce(slot, v, path)?;
            Ok(())
        }
    }
}

fn set_path(tree: &mut Value, path: &[String], value: Value) -> Result<()> {
    let mut node = tree;
    for (depth, key) in path.iter().enumerate() {
        let so_far = path[..=depth].join(".");
        node = match node {
            Value::Table(t) => t
                .get_mut(key)
                .ok_or_else(|| Error::config(format!("{so_far}: unknown key")))?,
            _ => return Err(Error::config(format!("{so_far}: not a table"))),
        };
    }
    let full = path.join(".");
    *node = coerce(node, value, &full)?;
    Ok(())
}
