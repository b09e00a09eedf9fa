//! The run configuration file.
//!
//! A TOML document; relative paths resolve against the file's directory.
//!
//! ```toml
//! corpus = "corpus.jsonl"
//! output_dir = "runs/guided"
//! config_label = "guided_feedback"
//!
//! [sample]
//! fraction = 0.5
//! seed = 7
//!
//! [[models]]
//! preset = "llama-3-70b"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::llm::{ModelProfile, RetryPolicy};
use crate::metric::MetricWeights;
use crate::pipeline::{ConfigLabel, PipelineConfig, DEFAULT_ITERATION_LIMIT, DEFAULT_THRESHOLD};
use crate::prompting::DEFAULT_PROMPT_BUDGET;

pub const MAX_PARALLELISM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub fraction: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { fraction: 1.0, seed: 0 }
    }
}

/// A model entry: a preset name with optional overrides, or a full profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Preset(PresetRef),
    Profile(ModelProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<usize>,
}

impl ModelEntry {
    pub fn resolve(&self) -> Result<ModelProfile> {
        let profile = match self {
            ModelEntry::Profile(p) => p.clone(),
            ModelEntry::Preset(r) => {
                let mut p = ModelProfile::preset(&r.preset)?;
                if let Some(v) = &r.model_id {
                    p.model_id = Some(v.clone());
                }
                if let Some(v) = &r.endpoint {
                    p.endpoint = v.clone();
                }
                if let Some(v) = &r.api_key_env {
                    p.api_key_env = Some(v.clone());
                }
                if let Some(v) = r.temperature {
                    p.temperature = v;
                }
                if let Some(v) = r.max_output_tokens {
                    p.max_output_tokens = v;
                }
                p
            }
        };
        profile.validate()?;
        Ok(profile)
    }
}

fn default_label() -> ConfigLabel {
    ConfigLabel::GuidedFeedback
}
fn default_iteration_limit() -> usize {
    DEFAULT_ITERATION_LIMIT
}
fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_parallelism() -> usize {
    1
}
fn default_prompt_budget() -> usize {
    DEFAULT_PROMPT_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    pub models: Vec<ModelEntry>,
    #[serde(default = "default_label")]
    pub config_label: ConfigLabel,
    #[serde(default = "default_iteration_limit")]
    pub iteration_limit: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub weights: MetricWeights,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_prompt_budget")]
    pub prompt_budget: usize,
    #[serde(default)]
    pub strict_budget: bool,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl RunConfig {
    /// Parses `text`, resolving relative paths against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).context("invalid run configuration")?;
        config.corpus = base_dir.join(&config.corpus);
        config.output_dir = base_dir.join(&config.output_dir);
        config.template_dir = config.template_dir.map(|d| base_dir.join(d));
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Checks ranges and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.corpus.is_file(), "corpus file {} does not exist", self.corpus.display());
        if let Some(dir) = &self.template_dir {
            ensure!(dir.is_dir(), "template directory {} does not exist", dir.display());
        }
        ensure!(!self.models.is_empty(), "at least one model is required");
        ensure!(
            self.sample.fraction > 0.0 && self.sample.fraction <= 1.0,
            "sample.fraction {} must be in (0, 1]",
            self.sample.fraction
        );
        ensure!(
            (1..=MAX_PARALLELISM).contains(&self.parallelism),
            "parallelism {} must be in 1..={MAX_PARALLELISM}",
            self.parallelism
        );
        ensure!(self.prompt_budget > 0, "prompt_budget must be positive");
        ensure!(self.retry.max_attempts >= 1, "retry.max_attempts must be at least 1");
        self.pipeline().validate()?;
        let mut names = std::collections::BTreeSet::new();
        for entry in &self.models {
            let profile = entry.resolve()?;
            if !names.insert(profile.name.clone()) {
                bail!("model {} is listed twice", profile.name);
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            label: self.config_label,
            iteration_limit: self.iteration_limit,
            threshold: self.threshold,
            weights: self.weights,
            prompt_budget: self.prompt_budget,
            strict_budget: self.strict_budget,
        }
    }

    pub fn profiles(&self) -> Result<Vec<ModelProfile>> {
        self.models.iter().map(ModelEntry::resolve).collect()
    }

    /// The configuration as run: absolute paths and fully expanded profiles.
    pub fn resolved(&self) -> Result<Self> {
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        Ok(Self {
            corpus: abs(&self.corpus),
            output_dir: abs(&self.output_dir),
            template_dir: self.template_dir.as_deref().map(abs),
            models: self.profiles()?.into_iter().map(ModelEntry::Profile).collect(),
            ..self.clone()
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
corpus = "c.jsonl"
output_dir = "out"

[[models]]
preset = "llama-3-8b"
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(c.corpus, PathBuf::from("/base/c.jsonl"));
        assert_eq!(c.config_label, ConfigLabel::GuidedFeedback);
        assert_eq!(c.iteration_limit, 2);
        assert_eq!(c.threshold, 0.35);
        assert_eq!(c.prompt_budget, 500);
        assert_eq!(c.sample, SampleConfig::default());
        assert_eq!(c.profiles().unwrap()[0].context_length, 8192);
    }

    #[test]
    fn missing_corpus_fails_validation() {
        let c = RunConfig::parse(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("/nonexistent/c.jsonl"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(&format!("{MINIMAL}\nbogus = 1\n"), Path::new(".")).is_err());
    }

    #[test]
    fn out_of_range_values() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.jsonl"), "").unwrap();
        let ok = RunConfig::parse(MINIMAL, dir.path()).unwrap();
        ok.validate().unwrap();
        for bad in [
            RunConfig { threshold: 1.5, ..ok.clone() },
            RunConfig { parallelism: 0, ..ok.clone() },
            RunConfig { sample: SampleConfig { fraction: 0.0, seed: 1 }, ..ok.clone() },
            RunConfig { models: vec![], ..ok.clone() },
            RunConfig { models: vec![ok.models[0].clone(), ok.models[0].clone()], ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn resolved_round_trips_through_toml() {
        let c = RunConfig::parse(MINIMAL, Path::new("/base")).unwrap().resolved().unwrap();
        let back = RunConfig::parse(&c.to_toml().unwrap(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, c);
        assert!(matches!(back.models[0], ModelEntry::Profile(_)));
    }

    #[test]
    fn preset_overrides_apply() {
        let text = format!("{MINIMAL}endpoint = \"http://h/v1\"\ntemperature = 0.0\n");
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        let p = &c.profiles().unwrap()[0];
        assert_eq!(p.endpoint, "http://h/v1");
        assert_eq!(p.temperature, 0.0);
    }
}
