//! Seeded environment populations and their text export.
//!
//! File format, one record per line, whitespace separated:
//!
//! ```text
//! eap-population 1
//! task cartpole
//! params pole_length:mu pole_mass:mu cart_mass:mu rot_damping:nu ...
//! reference 0.5 0.1 1.0 0.0 0.0 0.0
//! reference_index none
//! entry 0 train 0.43 0.11 ...
//! ```
//!
//! Values are canonical-order and printed in shortest round-trip form, so a
//! written file reloads bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DynamicsParams, EnvDescriptor, HeldOutVary, ParamRole};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const POPULATION_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "eap-population";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    HeldOut,
}

impl SplitTag {
    fn label(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::HeldOut => "heldout",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitTag::Train),
            "validation" => Some(SplitTag::Validation),
            "heldout" => Some(SplitTag::HeldOut),
            _ => None,
        }
    }
}

/// `K` sampled environments with a train / validation / held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPopulation {
    pub task: String,
    /// `(name, role)` in canonical order, as sampled.
    pub layout: Vec<(String, ParamRole)>,
    /// Canonical values per entry.
    pub entries: Vec<Vec<f64>>,
    pub tags: Vec<SplitTag>,
    /// Canonical reference values.
    pub reference: Vec<f64>,
    /// When the reference is one of the entries, its index. That entry is then
    /// excluded from every sampling pool.
    pub reference_index: Option<usize>,
}

impl EnvPopulation {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|&(i, t)| *t == tag && Some(i) != self.reference_index)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn training(&self) -> Vec<usize> {
        self.indices(SplitTag::Train)
    }

    pub fn validation(&self) -> Vec<usize> {
        self.indices(SplitTag::Validation)
    }

    pub fn held_out(&self) -> Vec<usize> {
        self.indices(SplitTag::HeldOut)
    }

    pub fn params(&self, descriptor: &EnvDescriptor, index: usize) -> DynamicsParams<f64> {
        descriptor.split(&self.entries[index])
    }

    pub fn reference_params(&self, descriptor: &EnvDescriptor) -> DynamicsParams<f64> {
        descriptor.split(&self.reference)
    }

    /// Makes entry `index` the reference environment.
    pub fn with_reference_index(mut self, index: usize) -> Result<Self> {
        if index >= self.entries.len() {
            return Err(Error::config(format!(
                "reference index {index} out of range for {} entries",
                self.entries.len()
            )));
        }
        if self.tags[index] == SplitTag::HeldOut {
            return Err(Error::config("a held-out environment cannot be the reference"));
        }
        self.reference = self.entries[index].clone();
        self.reference_index = Some(index);
        Ok(self)
    }

    /// Re-tags parameter roles to match a remapped descriptor. Values are untouched.
    pub fn relabel(&self, descriptor: &EnvDescriptor) -> Result<Self> {
        if descriptor.param_specs.len() != self.layout.len()
            || descriptor
                .param_specs
                .iter()
                .zip(&self.layout)
                .any(|(p, (n, _))| p.name != *n)
        {
            return Err(Error::config("population parameters do not match descriptor"));
        }
        let mut out = self.clone();
        out.layout = descriptor
            .param_specs
            .iter()
            .map(|p| (p.name.clone(), p.role))
            .collect();
        Ok(out)
    }

    /// Checks that this population was sampled for `descriptor`'s parameter layout.
    pub fn check_layout(&self, descriptor: &EnvDescriptor) -> Result<()> {
        let expected: Vec<(String, ParamRole)> = descriptor
            .param_specs
            .iter()
            .map(|p| (p.name.clone(), p.role))
            .collect();
        if self.task != descriptor.name || self.layout != expected {
            return Err(Error::config(format!(
                "population layout {:?} for task {} does not match descriptor {}",
                self.layout, self.task, descriptor.name
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {POPULATION_FORMAT_VERSION}");
        let _ = writeln!(out, "task {}", self.task);
        let params: Vec<String> = self
            .layout
            .iter()
            .map(|(n, r)| {
                let tag = match r {
                    ParamRole::Observable => "mu",
                    ParamRole::Unobservable => "nu",
                };
                format!("{n}:{tag}")
            })
            .collect();
        let _ = writeln!(out, "params {}", params.join(" "));
        let _ = writeln!(out, "reference {}", fmt_values(&self.reference));
        match self.reference_index {
            Some(i) => {
                let _ = writeln!(out, "reference_index {i}");
            }
            None => {
                let _ = writeln!(out, "reference_index none");
            }
        }
        for (i, (values, tag)) in self.entries.iter().zip(&self.tags).enumerate() {
            let _ = writeln!(out, "entry {i} {} {}", tag.label(), fmt_values(values));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            context: format!("population line {}", line + 1),
            message: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (n, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(MAGIC) {
            return Err(err(n, "missing header"));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(n, "missing version"))?;
        if version != POPULATION_FORMAT_VERSION {
            return Err(err(n, &format!("unsupported version {version}")));
        }

        let mut task = None;
        let mut layout = Vec::new();
        let mut reference = None;
        let mut reference_index = None;
        let mut entries = Vec::new();
        let mut tags = Vec::new();
        for (n, line) in lines {
            let mut words = line.split_whitespace();
            match words.next() {
                Some("task") => task = words.next().map(str::to_string),
                Some("params") => {
                    for w in words {
                        let (name, role) = w.split_once(':').ok_or_else(|| err(n, "bad param"))?;
                        let role = match role {
                            "mu" => ParamRole::Observable,
                            "nu" => ParamRole::Unobservable,
                            _ => return Err(err(n, "param role must be mu or nu")),
                        };
                        layout.push((name.to_string(), role));
                    }
                }
                Some("reference") => {
                    reference = Some(parse_values(words).map_err(|m| err(n, &m))?);
                }
                Some("reference_index") => {
                    reference_index = match words.next() {
                        Some("none") => None,
                        Some(v) => Some(v.parse().map_err(|_| err(n, "bad reference index"))?),
                        None => return Err(err(n, "missing reference index")),
                    }
                }
                Some("entry") => {
                    let idx: usize = words
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err(n, "bad entry index"))?;
                    if idx != entries.len() {
                        return Err(err(n, "entries out of order"));
                    }
                    let tag = words
                        .next()
                        .and_then(SplitTag::parse)
                        .ok_or_else(|| err(n, "bad split tag"))?;
                    entries.push(parse_values(words).map_err(|m| err(n, &m))?);
                    tags.push(tag);
                }
                Some(other) => return Err(err(n, &format!("unknown record `{other}`"))),
                None => {}
            }
        }
        let pop = EnvPopulation {
            task: task.ok_or_else(|| err(0, "missing task"))?,
            layout,
            entries,
            tags,
            reference: reference.ok_or_else(|| err(0, "missing reference"))?,
            reference_index,
        };
        let width = pop.layout.len();
        if pop.reference.len() != width || pop.entries.iter().any(|e| e.len() != width) {
            return Err(err(0, "value count does not match params"));
        }
        Ok(pop)
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn fmt_values(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn parse_values<'a>(words: impl Iterator<Item = &'a str>) -> std::result::Result<Vec<f64>, String> {
    words
        .map(|w| w.parse::<f64>().map_err(|e| format!("bad value `{w}`: {e}")))
        .collect()
}

/// Samples `k_train + k_val + k_heldout` environments. Training and validation
/// components are uniform over each train range; held-out components are
/// uniform over the test range of the varied group, rejecting draws that fall
/// entirely inside the train ranges.
pub fn sample_population(
    descriptor: &EnvDescriptor,
    k_train: usize,
    k_val: usize,
    k_heldout: usize,
    rng: &mut RngStream,
) -> Result<EnvPopulation> {
    if k_train == 0 || k_val == 0 || k_heldout == 0 {
        return Err(Error::config("population split counts must all be at least 1"));
    }
    descriptor.validate()?;
    let varied: Vec<bool> = descriptor
        .param_specs
        .iter()
        .map(|p| match descriptor.heldout_vary {
            HeldOutVary::Both => true,
            HeldOutVary::Mu => p.role == ParamRole::Observable,
            HeldOutVary::Nu => p.role == ParamRole::Unobservable,
        })
        .collect();
    if !varied.iter().any(|&v| v) {
        return Err(Error::config("held-out sampling varies an empty parameter group"));
    }

    let mut entries = Vec::with_capacity(k_train + k_val + k_heldout);
    let mut tags = Vec::with_capacity(entries.capacity());
    for (tag, count) in [(SplitTag::Train, k_train), (SplitTag::Validation, k_val)] {
        for _ in 0..count {
            let v: Vec<f64> = descriptor
                .param_specs
                .iter()
                .map(|p| rng.uniform(p.train_range.lo, p.train_range.hi))
                .collect();
            entries.push(v);
            tags.push(tag);
        }
    }
    const MAX_REJECTIONS: usize = 10_000;
    for _ in 0..k_heldout {
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let v: Vec<f64> = descriptor
                .param_specs
                .iter()
                .zip(&varied)
                .map(|(p, &vary)| {
                    let r = if vary { p.test_range } else { p.train_range };
                    rng.uniform(r.lo, r.hi)
                })
                .collect();
            let outside = descriptor
                .param_specs
                .iter()
                .zip(&v)
                .zip(&varied)
                .any(|((p, &x), &vary)| vary && p.outside_train(x));
            if outside {
                accepted = Some(v);
                break;
            }
        }
        entries.push(accepted.ok_or_else(|| {
            Error::config("test ranges leave no room outside the train ranges")
        })?);
        tags.push(SplitTag::HeldOut);
    }
    Ok(EnvPopulation {
        task: descriptor.name.clone(),
        layout: descriptor
            .param_specs
            .iter()
            .map(|p| (p.name.clone(), p.role))
            .collect(),
        entries,
        tags,
        reference: descriptor.reference_values.clone(),
        reference_index: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::cartpole_descriptor;
    use crate::rng::StreamName;

    fn pop(seed: u64) -> EnvPopulation {
        let mut rng = RngStream::child(seed, StreamName::Population);
        sample_population(&cartpole_descriptor(), 10, 4, 5, &mut rng).unwrap()
    }

    #[test]
    fn split_sizes_are_disjoint_and_cover() {
        let p = pop(1);
        assert_eq!(p.len(), 19);
        let (t, v, h) = (p.training(), p.validation(), p.held_out());
        assert_eq!((t.len(), v.len(), h.len()), (10, 4, 5));
        let mut all: Vec<usize> = t.into_iter().chain(v).chain(h).collect();
        all.sort_unstable();
        assert_eq!(all, (0..19).collect::<Vec<_>>());
    }

    #[test]
    fn held_out_entries_leave_the_train_range() {
        let d = cartpole_descriptor();
        let p = pop(2);
        for i in p.held_out() {
            let outside = d
                .param_specs
                .iter()
                .zip(&p.entries[i])
                .any(|(s, &x)| s.outside_train(x));
            assert!(outside);
        }
        for i in p.training().into_iter().chain(p.validation()) {
            for (s, &x) in d.param_specs.iter().zip(&p.entries[i]) {
                assert!(s.train_range.contains(x));
            }
        }
    }

    #[test]
    fn same_seed_same_population() {
        assert_eq!(pop(3).to_text(), pop(3).to_text());
        assert_ne!(pop(3).hash(), pop(4).hash());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let p = pop(5);
        let back = EnvPopulation::from_text(&p.to_text()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn zero_counts_rejected() {
        let mut rng = RngStream::from_seed(0);
        assert!(sample_population(&cartpole_descriptor(), 0, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn vary_mu_keeps_nu_in_train_range() {
        let mut d = cartpole_descriptor();
        d.heldout_vary = HeldOutVary::Mu;
        let mut rng = RngStream::from_seed(8);
        let p = sample_population(&d, 2, 2, 20, &mut rng).unwrap();
        for i in p.held_out() {
            for (s, &x) in d.param_specs.iter().zip(&p.entries[i]) {
                if s.role == ParamRole::Unobservable {
                    assert!(s.train_range.contains(x));
                }
            }
        }
    }

    #[test]
    fn reference_index_is_excluded_from_pools() {
        let p = pop(6).with_reference_index(2).unwrap();
        assert!(!p.training().contains(&2));
        assert_eq!(p.reference, p.entries[2]);
        assert!(pop(6).with_reference_index(17).is_err());
    }
}
