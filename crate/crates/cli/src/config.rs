//! Run configuration and data-generation specs (JSON).

use std::path::Path;

use lrcs::altgdmin::AltGdminConfig;
use lrcs::cgls::CglsConfig;
use lrcs::datagen::{PhantomParams, SyntheticSpec};
use lrcs::hierarchical::{MecConfig, Method, PipelineConfig};
use lrcs::sampling::Scheme;
use lrcs::tracking::{TrackMode, TrackerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Mri1,
    Mri2,
    St1,
    St2,
    Online,
}

/// What a method runs: the batch pipeline or the tracker.
pub enum Plan {
    Batch(Method, PipelineConfig),
    Track(TrackerConfig),
}

/// Solver settings for `recon` and `bench`. Every field has a default, so a
/// config file only names what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: MethodName,
    /// First tracker batch size.
    pub alpha1: usize,
    /// Later tracker batch size.
    pub alpha: usize,
    /// Seed for the data `bench` generates.
    pub seed: u64,
    pub t_max1: usize,
    pub t_maxj: usize,
    /// Zero the wall-clock fields of the report.
    pub reproducible: bool,
    pub mean: CglsConfig,
    pub altgdmin: AltGdminConfig,
    pub mec: MecConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrackerConfig::default();
        let p = t.pipeline;
        RunConfig {
            method: MethodName::Mri1,
            alpha1: t.alpha1,
            alpha: t.alpha,
            seed: 0,
            t_max1: t.t_max1,
            t_maxj: t.t_maxj,
            reproducible: p.reproducible,
            mean: p.mean,
            altgdmin: p.altgdmin,
            mec: p.mec,
        }
    }
}

/// Dotted paths in `value` that `reference` does not have. Objects tagged
/// with `kind` are enum variants and are left to the deserializer.
fn unknown_keys(value: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(v), Value::Object(r)) = (value, reference) else {
        return;
    };
    if r.contains_key("kind") {
        return;
    }
    for (key, child) in v {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match r.get(key) {
            None => out.push(path),
            Some(rc) => unknown_keys(child, rc, &path, out),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        if !value.is_object() {
            return Err(CliError::Config("run config must be a JSON object".into()));
        }
        let reference = serde_json::to_value(RunConfig::default()).expect("default config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&value, &reference, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.tracker(TrackMode::MinibatchSt1)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mean: self.mean.clone(),
            altgdmin: self.altgdmin.clone(),
            mec: self.mec.clone(),
            reproducible: self.reproducible,
        }
    }

    fn tracker(&self, mode: TrackMode) -> TrackerConfig {
        TrackerConfig {
            mode,
            alpha1: self.alpha1,
            alpha: self.alpha,
            t_max1: self.t_max1,
            t_maxj: self.t_maxj,
            pipeline: self.pipeline(),
        }
    }

    pub fn plan(&self) -> Plan {
        match self.method {
            MethodName::Mri1 => Plan::Batch(Method::Mri1, self.pipeline()),
            MethodName::Mri2 => Plan::Batch(Method::Mri2, self.pipeline()),
            MethodName::St1 => Plan::Track(self.tracker(TrackMode::MinibatchSt1)),
            MethodName::St2 => Plan::Track(self.tracker(TrackMode::MinibatchSt2)),
            MethodName::Online => Plan::Track(self.tracker(TrackMode::Online)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub n1: usize,
    pub n2: usize,
    pub q: usize,
    #[serde(default)]
    pub params: PhantomParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    ThreeLevel(SyntheticSpec),
    Phantom(PhantomSpec),
}

impl Source {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            Source::ThreeLevel(s) => (s.n1, s.n2, s.q),
            Source::Phantom(p) => (p.n1, p.n2, p.q),
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub mc: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Input of `gen-data`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub source: Source,
    pub sampling: SamplingSpec,
}

impl DataSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Written next to the k-space so `recon` can rebuild operators that have no
/// container of their own (the Gaussian ensemble).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingRecord {
    pub n1: usize,
    pub n2: usize,
    pub q: usize,
    pub scheme: Scheme,
    pub mc: usize,
    pub seed: u64,
}
