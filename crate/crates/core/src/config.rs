//! Run configuration, read from a single TOML file. Every field has a default,
//! so an empty file (or no file) runs the offline pipeline on bundled data.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{DecodingParams, ProbeOptions, ProviderConfig};
use crate::cipher::ShiftLevel;
use crate::prompt::{DemoFormat, PromptError, PromptStyle, DEFAULT_CORRUPTION_SEED};
use crate::sim::SimParams;
use crate::statfit::FitOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Character n-gram model trained on a word-frequency list.
    #[default]
    Ngram,
    Uniform,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// BPE vocabulary; the bundled stand-in when unset.
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub marker: String,
    pub scorer: ScorerKind,
    /// `word<TAB>count` list training the n-gram scorer.
    pub wordfreq: Option<PathBuf>,
    pub ngram_order: usize,
    pub scorer_url: Option<String>,
    pub scorer_concurrency: usize,
    pub blocklist: Option<PathBuf>,
    /// `shift,frequency` table; the bundled stand-in when unset.
    pub shift_freq: Option<PathBuf>,
    pub n_bins: usize,
    pub eval_per_bin: usize,
    pub heldout_per_bin: usize,
    pub shifts: Vec<u8>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            vocab: None,
            merges: None,
            marker: crate::dataset::DEFAULT_MARKER.to_string(),
            scorer: ScorerKind::Ngram,
            wordfreq: None,
            ngram_order: 4,
            scorer_url: None,
            scorer_concurrency: 4,
            blocklist: None,
            shift_freq: None,
            n_bins: 5,
            eval_per_bin: 100,
            heldout_per_bin: 50,
            shifts: (1..=25).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub styles: Vec<String>,
    /// Restricts probing to these shifts; all dataset shifts when empty.
    pub shifts: Vec<u8>,
    /// Restricts probing to these bins; all when empty.
    pub bins: Vec<u8>,
    pub demo_shift: u8,
    pub demo_format: DemoFormat,
    pub corruption_seed: u64,
    /// Extra temperatures to sweep; `params.temperature` alone when empty.
    pub temperatures: Vec<f64>,
    pub resume: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            styles: vec!["text-cot".into()],
            shifts: vec![],
            bins: vec![],
            demo_shift: 14,
            demo_format: DemoFormat::Text,
            corruption_seed: DEFAULT_CORRUPTION_SEED,
            temperatures: vec![],
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvesConfig {
    pub q: f64,
    pub word_len: u32,
    pub memo_ceiling: f64,
    pub delta: f64,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        Self {
            q: 0.98,
            word_len: 7,
            memo_ceiling: 0.4,
            delta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub svg: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { svg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub concurrency: usize,
    pub rate_limit_rpm: u32,
    pub dataset: DatasetConfig,
    pub probe: ProbeConfig,
    pub params: DecodingParams,
    pub provider: ProviderConfig,
    pub sim: SimParams,
    pub fit: FitOptions,
    pub curves: CurvesConfig,
    pub report: ReportConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            concurrency: 4,
            rate_limit_rpm: 60,
            dataset: DatasetConfig::default(),
            probe: ProbeConfig::default(),
            params: DecodingParams::default(),
            provider: ProviderConfig::default(),
            sim: SimParams::default(),
            fit: FitOptions::default(),
            curves: CurvesConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.sim.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative paths in the file relative to the file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.dataset;
        for p in [&mut d.vocab, &mut d.merges, &mut d.wordfreq, &mut d.blocklist, &mut d.shift_freq]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let ProviderConfig::Replay { cache_path } = &mut self.provider {
            fix(cache_path);
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dataset;
        if d.vocab.is_some() != d.merges.is_some() {
            return Err(invalid("dataset.vocab", "dataset.vocab and dataset.merges must be set together"));
        }
        if d.n_bins == 0 || d.n_bins > u8::MAX as usize {
            return Err(invalid("dataset.n_bins", "must be between 1 and 255"));
        }
        if d.eval_per_bin == 0 {
            return Err(invalid("dataset.eval_per_bin", "must be positive"));
        }
        if let Some(k) = d.shifts.iter().find(|&&k| !(1..=25).contains(&k)) {
            return Err(invalid("dataset.shifts", format!("shift {k} outside 1..=25")));
        }
        if d.scorer == ScorerKind::Http && d.scorer_url.is_none() {
            return Err(invalid("dataset.scorer_url", "required when dataset.scorer = \"http\""));
        }
        if self.params.temperature < 0.0 || self.probe.temperatures.iter().any(|&t| t < 0.0) {
            return Err(invalid("params.temperature", "must be non-negative"));
        }
        if ShiftLevel::new(self.probe.demo_shift).is_err() {
            return Err(invalid("probe.demo_shift", "must be in 0..=25"));
        }
        self.styles().map_err(|e| invalid("probe.styles", e.to_string()))?;
        self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
        Ok(())
    }

    pub fn styles(&self) -> Result<Vec<PromptStyle>, PromptError> {
        let demo = ShiftLevel::wrapping(self.probe.demo_shift as i64);
        self.probe
            .styles
            .iter()
            .map(|s| {
                let style = PromptStyle::parse(s, Some(demo), Some(self.probe.corruption_seed))?;
                Ok(match style {
                    PromptStyle::MismatchedDemo { demo_shift, .. } if s == "mismatched" || s == "mismatched-demo" => PromptStyle::MismatchedDemo {
                        demo_shift,
                        format: self.probe.demo_format,
                    },
                    other => other,
                })
            })
            .collect()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        if self.probe.temperatures.is_empty() {
            vec![self.params.temperature]
        } else {
            self.probe.temperatures.clone()
        }
    }

    pub fn probe_options(&self) -> ProbeOptions {
        ProbeOptions {
            concurrency: self.concurrency,
            resume: self.probe.resume,
        }
    }

    pub fn dataset_shifts(&self) -> Vec<ShiftLevel> {
        self.dataset.shifts.iter().map(|&k| ShiftLevel::wrapping(k as i64)).collect()
    }
}
