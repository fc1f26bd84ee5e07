//! Run configuration: command-line flags layered over an optional JSON
//! config file layered over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use lorp_core::similarity::DEFAULT_EPSILON;
use lorp_core::{ClusterCount, Method};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_WORKERS: usize = 1;
pub const DEFAULT_OUT: &str = ".";
pub const DEFAULT_SAMPLES: usize = 128;
pub const DEFAULT_TOKENS: usize = 2048;

/// Every setting that may appear in a config file or on the command line.
/// Unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub k: Option<ClusterCount>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub heatmap: Option<bool>,
    pub profile: Option<bool>,
    pub samples: Option<usize>,
    pub tokens: Option<usize>,
    pub mode: Option<SynthMode>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Fields set in `self` win over fields set in `lower`.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            epsilon: self.epsilon.or(lower.epsilon),
            k: self.k.or(lower.k),
            budget: self.budget.or(lower.budget),
            seed: self.seed.or(lower.seed),
            method: self.method.or(lower.method),
            workers: self.workers.or(lower.workers),
            out: self.out.or(lower.out),
            heatmap: self.heatmap.or(lower.heatmap),
            profile: self.profile.or(lower.profile),
            samples: self.samples.or(lower.samples),
            tokens: self.tokens.or(lower.tokens),
            mode: self.mode.or(lower.mode),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    Dump,
    Matrix,
}

/// Fully resolved settings, echoed verbatim into every output document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub inputs: Vec<String>,
    pub epsilon: f64,
    pub k: ClusterCount,
    pub budget: Option<usize>,
    pub seed: u64,
    pub method: Method,
    pub workers: usize,
    pub out: String,
    pub heatmap: bool,
    pub profile: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SynthMode>,
}

impl RunConfig {
    pub fn resolve(
        command: &'static str,
        inputs: &[PathBuf],
        layered: Overrides,
    ) -> Result<Self, CliError> {
        let epsilon = layered.epsilon.unwrap_or(DEFAULT_EPSILON);
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(CliError::Usage(format!(
                "epsilon must be a finite non-negative number, got {epsilon}"
            )));
        }
        let workers = layered.workers.unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            return Err(CliError::Usage("workers must be at least 1".into()));
        }
        let is_synth = command == "synth";
        let samples = layered.samples.unwrap_or(DEFAULT_SAMPLES);
        let tokens = layered.tokens.unwrap_or(DEFAULT_TOKENS);
        if is_synth && (samples == 0 || tokens == 0) {
            return Err(CliError::Usage(
                "samples and tokens must be at least 1".into(),
            ));
        }
        Ok(RunConfig {
            command,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            epsilon,
            k: layered.k.unwrap_or(ClusterCount::Auto),
            budget: layered.budget,
            seed: layered.seed.unwrap_or(DEFAULT_SEED),
            method: layered.method.unwrap_or(Method::Lorp),
            workers,
            out: layered
                .out
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
                .display()
                .to_string(),
            heatmap: layered.heatmap.unwrap_or(true),
            profile: layered.profile.unwrap_or(true),
            samples: is_synth.then_some(samples),
            tokens: is_synth.then_some(tokens),
            mode: is_synth.then(|| layered.mode.unwrap_or(SynthMode::Dump)),
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = Overrides {
            budget: Some(4),
            seed: Some(9),
            k: Some(ClusterCount::Fixed(3)),
            ..Default::default()
        };
        let flags = Overrides {
            budget: Some(6),
            ..Default::default()
        };
        let cfg = RunConfig::resolve("plan", &[], flags.over(file)).unwrap();
        assert_eq!(cfg.budget, Some(6));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.k, ClusterCount::Fixed(3));
        assert_eq!(cfg.method, Method::Lorp);
        assert_eq!(cfg.epsilon, DEFAULT_EPSILON);
        assert_eq!(cfg.samples, None);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let parsed: Result<Overrides, _> = serde_json::from_str(r#"{"budgt": 3}"#);
        assert!(parsed.is_err());
        let parsed: Overrides =
            serde_json::from_str(r#"{"k": "auto", "method": "contiguous"}"#).unwrap();
        assert_eq!(parsed.k, Some(ClusterCount::Auto));
        assert_eq!(parsed.method, Some(Method::Contiguous));
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let bad = Overrides {
            workers: Some(0),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve("sim", &[], bad),
            Err(CliError::Usage(_))
        ));
        let bad = Overrides {
            epsilon: Some(-1.0),
            ..Default::default()
        };
        assert!(matches!(
            RunConfig::resolve("sim", &[], bad),
            Err(CliError::Usage(_))
        ));
    }
}
