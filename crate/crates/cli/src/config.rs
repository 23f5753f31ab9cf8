//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use behavehmm::hmm::{SampleSize, TrainConfig};
use behavehmm::ingest::{LogFormat, RateMode};
use behavehmm::{Error, Result};
use serde::{Deserialize, Serialize};

/// Candidate state counts given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct StateList(pub Vec<usize>);

impl std::str::FromStr for StateList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_states(s).map(StateList)
    }
}

/// Parses `"3"`, `"1..6"` (inclusive) or `"2,4,5"`.
pub fn parse_states(s: &str) -> std::result::Result<Vec<usize>, String> {
    let s = s.trim();
    let out: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if a > b {
            return Err(format!("empty range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad state count {p:?}")))
            .collect::<std::result::Result<_, _>>()?
    };
    if out.is_empty() || out.contains(&0) {
        return Err(format!("state counts must be positive: {s:?}"));
    }
    Ok(out)
}

fn default_states() -> Vec<usize> {
    (1..=10).collect()
}

/// Everything `pipeline` needs. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub logs: PathBuf,
    #[serde(default = "default_format")]
    pub format: LogFormat,
    pub traits: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_min_rate")]
    pub min_rate: f64,
    #[serde(default)]
    pub rate_mode: RateMode,
    /// Candidate state counts for the BIC sweep.
    #[serde(default = "default_states")]
    pub states: Vec<usize>,
    #[serde(default = "default_sample_size")]
    pub bic_sample_size: SampleSize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Trait categories to classify and compare; empty means every column of the traits file.
    #[serde(default)]
    pub categories: Vec<String>,
    /// Group size for the top/low comparison.
    #[serde(default = "default_anova_k")]
    pub anova_k: usize,
    /// Use raw visit counts instead of proportions.
    #[serde(default)]
    pub raw_counts: bool,
}

fn default_format() -> LogFormat {
    LogFormat::Jsonl
}
fn default_min_rate() -> f64 {
    0.10
}
fn default_sample_size() -> SampleSize {
    SampleSize::Symbols
}
fn default_k() -> usize {
    3
}
fn default_l2() -> f64 {
    1e-4
}
fn default_anova_k() -> usize {
    15
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.logs, &mut cfg.traits, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("logs", &self.logs), ("traits", &self.traits)] {
            if !p.is_file() {
                return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
            }
        }
        if !(0.0..=1.0).contains(&self.min_rate) {
            return Err(Error::Config(format!("min_rate {} must lie in [0, 1]", self.min_rate)));
        }
        if self.states.is_empty() || self.states.contains(&0) {
            return Err(Error::Config("states must be a non-empty list of positive counts".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if self.anova_k == 0 {
            return Err(Error::Config("anova_k must be at least 1".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        Ok(())
    }
}
