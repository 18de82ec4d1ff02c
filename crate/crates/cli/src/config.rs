//! Job configuration: a TOML file, overridden by command-line flags, resolved
//! into a fully specified [`Job`] whose snapshot is written with every run.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serendipity_core::eval::DEFAULT_TOP_N;
use serendipity_core::{ModelConfig, ModelKind, SynthConfig, DEFAULT_BURN_IN};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Contents of a `--config` file. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub topics: Option<PathBuf>,
    pub histories: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub sim_model: Option<ModelConfig>,
    pub burn_in: Option<usize>,
    /// First step eligible as a neighbor snapshot; defaults to the burn-in.
    pub min_step: Option<usize>,
    pub tau_s: Option<f64>,
    pub tau_d: Option<f64>,
    pub top_n: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// `user_id  step` pairs for `recommend`.
    pub queries: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    pub tuning: Option<TuningConfig>,
    pub synth: Option<SynthConfig>,
}

impl JobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `overrides` win.
    pub fn merge(self, overrides: JobConfig) -> JobConfig {
        JobConfig {
            topics: overrides.topics.or(self.topics),
            histories: overrides.histories.or(self.histories),
            annotations: overrides.annotations.or(self.annotations),
            out: overrides.out.or(self.out),
            model: overrides.model.or(self.model),
            sim_model: overrides.sim_model.or(self.sim_model),
            burn_in: overrides.burn_in.or(self.burn_in),
            min_step: overrides.min_step.or(self.min_step),
            tau_s: overrides.tau_s.or(self.tau_s),
            tau_d: overrides.tau_d.or(self.tau_d),
            top_n: overrides.top_n.or(self.top_n),
            seed: overrides.seed.or(self.seed),
            jobs: overrides.jobs.or(self.jobs),
            queries: overrides.queries.or(self.queries),
            index_cache: overrides.index_cache.or(self.index_cache),
            tuning: overrides.tuning.or(self.tuning),
            synth: overrides.synth.or(self.synth),
        }
    }

    pub fn resolve(self) -> Result<Job> {
        let burn_in = self.burn_in.unwrap_or(DEFAULT_BURN_IN);
        let mut synth = self.synth.unwrap_or_default();
        if let Some(seed) = self.seed {
            synth.seed = seed;
        }
        let job = Job {
            min_step: self.min_step.unwrap_or(burn_in),
            topics: self.topics,
            histories: self.histories,
            annotations: self.annotations,
            out: self.out.unwrap_or_else(|| PathBuf::from("out")),
            model: self.model,
            sim_model: self.sim_model,
            burn_in,
            tau_s: self.tau_s,
            tau_d: self.tau_d,
            top_n: self.top_n,
            seed: synth.seed,
            jobs: self.jobs.unwrap_or(0),
            queries: self.queries,
            index_cache: self.index_cache,
            tuning: self.tuning.unwrap_or_default(),
            synth,
        };
        job.validate()?;
        Ok(job)
    }
}

/// Model families searched by `tune`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Family names: a model kind, or `surprise+similarity` for a hybrid.
    pub families: Vec<String>,
    pub top_n: Vec<usize>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            families: ["blr", "vbblr", "arow", "nlms", "basic", "arow+vbblr"]
                .map(String::from)
                .to_vec(),
            top_n: DEFAULT_TOP_N.to_vec(),
        }
    }
}

/// A tuning family: the surprise model kind and, for hybrids, the kind
/// supplying similarity vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Family {
    pub surprise: ModelKind,
    pub similarity: Option<ModelKind>,
}

impl FromStr for Family {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let kind = |k: &str| k.trim().parse::<ModelKind>().map_err(CliError::from);
        Ok(match s.split_once('+') {
            Some((a, b)) => Family {
                surprise: kind(a)?,
                similarity: Some(kind(b)?),
            },
            None => Family {
                surprise: kind(s)?,
                similarity: None,
            },
        })
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.similarity {
            Some(sim) => write!(f, "{}+{}", self.surprise, sim),
            None => write!(f, "{}", self.surprise),
        }
    }
}

/// A fully resolved job. Fields a command needs but the job lacks are
/// reported when the command runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Job {
    pub topics: Option<PathBuf>,
    pub histories: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: PathBuf,
    pub model: Option<ModelConfig>,
    pub sim_model: Option<ModelConfig>,
    pub burn_in: usize,
    pub min_step: usize,
    pub tau_s: Option<f64>,
    pub tau_d: Option<f64>,
    pub top_n: Option<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub queries: Option<PathBuf>,
    pub index_cache: Option<PathBuf>,
    pub tuning: TuningConfig,
    pub synth: SynthConfig,
}

impl Job {
    fn validate(&self) -> Result<()> {
        for model in self.model.iter().chain(&self.sim_model) {
            model.validate()?;
        }
        if self.sim_model.is_some() && self.model.is_none() {
            return Err(CliError::Config("a similarity model needs a surprise model".into()));
        }
        for (name, value) in [("tau_s", self.tau_s), ("tau_d", self.tau_d)] {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.top_n == Some(0) || self.tuning.top_n.contains(&0) {
            return Err(CliError::Config("top_n must be at least 1".into()));
        }
        for family in &self.tuning.families {
            family.parse::<Family>()?;
        }
        self.synth.validate()?;
        Ok(())
    }

    pub fn topics(&self) -> Result<&Path> {
        required(&self.topics, "topics")
    }

    pub fn histories(&self) -> Result<&Path> {
        required(&self.histories, "histories")
    }

    pub fn annotations(&self) -> Result<&Path> {
        required(&self.annotations, "annotations")
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| CliError::Missing("model".into()))
    }

    /// The model whose preferences drive the neighbor search.
    pub fn similarity_model(&self) -> Result<&ModelConfig> {
        match &self.sim_model {
            Some(sim) => Ok(sim),
            None => self.model(),
        }
    }

    pub fn tau_s(&self) -> Result<f64> {
        self.tau_s.ok_or_else(|| CliError::Missing("tau_s".into()))
    }

    pub fn tau_d(&self) -> Result<f64> {
        self.tau_d.ok_or_else(|| CliError::Missing("tau_d".into()))
    }

    pub fn top_n(&self) -> Result<usize> {
        self.top_n.ok_or_else(|| CliError::Missing("top_n".into()))
    }

    /// Label of the model pair, `surprise` or `surprise+similarity`.
    pub fn model_label(&self) -> Result<String> {
        Ok(match &self.sim_model {
            Some(sim) => format!("{}+{}", self.model()?, sim),
            None => self.model()?.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("job serializes to TOML")
    }

    /// First 16 hex digits of the SHA-256 of the resolved configuration.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

fn required<'a>(path: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::Missing(name.into()))
}
