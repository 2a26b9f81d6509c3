//! Run configuration with documented defaults and validation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}` out of range: {reason}")]
    OutOfRange { field: &'static str, reason: String },
}

/// How messages are grouped into anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorMode {
    /// Join the first anchor whose centroid similarity clears the threshold.
    #[default]
    Online,
    /// Join only if similarity to every current member clears the threshold.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// `hash` (offline) or `http` (OpenAI-compatible `/v1/embeddings`).
    pub provider: String,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub batch_size: usize,
    /// Dimension of the offline hash embedder.
    pub hash_dim: usize,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: "hash".to_string(),
            base_url: "http://localhost:8080".to_string(),
            model: "all-MiniLM-L6-v2".to_string(),
            api_key_env: "EMBEDDING_API_KEY".to_string(),
            batch_size: 64,
            hash_dim: 256,
            max_retries: 3,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:11434".to_string(),
            model: "deepseek-r1:32b".to_string(),
            api_key_env: "LLM_API_KEY".to_string(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Anchor similarity threshold, in (0, 1).
    pub tau: f64,
    /// Maximum anchor size K.
    pub max_anchor_size: usize,
    pub anchor_mode: AnchorMode,
    /// Representativeness/diversity trade-off, in [0, 1].
    pub lambda: f64,
    /// Key messages selected per anchor.
    pub p: usize,
    /// Use the raw mean pairwise similarity as the diversity score.
    pub div_as_printed: bool,
    /// Retrieval similarity floor, in [-1, 1].
    pub gamma: f64,
    /// Maximum retrieved candidate events.
    pub q: usize,
    /// Buffer length that triggers a knowledge-base refresh.
    pub theta: usize,
    /// Keywords kept per aligned event.
    pub top_keywords: usize,
    /// Fraction of quarantined anchors at which a block is marked failed.
    pub quarantine_limit: f64,
    /// Fail the run on any quarantined anchor.
    pub strict: bool,
    /// Sliding-window width for C_v coherence.
    pub cv_window: usize,
    pub embedding: EmbeddingConfig,
    pub chat: ChatConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.4,
            max_anchor_size: 100,
            anchor_mode: AnchorMode::Online,
            lambda: 0.7,
            p: 3,
            div_as_printed: false,
            gamma: 0.0,
            q: 8,
            theta: 10,
            top_keywords: 15,
            quarantine_limit: 0.1,
            strict: false,
            cv_window: 110,
            embedding: EmbeddingConfig::default(),
            chat: ChatConfig::default(),
        }
    }
}

fn out_of_range(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        reason: reason.into(),
    }
}

impl PipelineConfig {
    /// Defaults tuned for the French Event2018 setup (τ = 0.3, multilingual encoder).
    pub fn french() -> Self {
        Self {
            tau: 0.3,
            embedding: EmbeddingConfig {
                model: "distiluse-base-multilingual-cased-v1".to_string(),
                ..EmbeddingConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(out_of_range("tau", format!("{} not in (0,1)", self.tau)));
        }
        if self.max_anchor_size == 0 {
            return Err(out_of_range("max_anchor_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(out_of_range(
                "lambda",
                format!("{} not in [0,1]", self.lambda),
            ));
        }
        if self.p == 0 {
            return Err(out_of_range("p", "must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(out_of_range(
                "gamma",
                format!("{} not in [-1,1]", self.gamma),
            ));
        }
        if self.q == 0 {
            return Err(out_of_range("q", "must be positive"));
        }
        if self.theta == 0 {
            return Err(out_of_range("theta", "must be positive"));
        }
        if self.top_keywords == 0 {
            return Err(out_of_range("top_keywords", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.quarantine_limit) {
            return Err(out_of_range("quarantine_limit", "not in [0,1]"));
        }
        if self.cv_window == 0 {
            return Err(out_of_range("cv_window", "must be positive"));
        }
        if self.embedding.batch_size == 0 || self.embedding.hash_dim == 0 {
            return Err(out_of_range(
                "embedding",
                "batch_size and hash_dim must be positive",
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 over the canonical JSON form; changes iff any field changes.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reported_hyperparameters() {
        let c = PipelineConfig::default();
        assert_eq!(c.tau, 0.4);
        assert_eq!(c.lambda, 0.7);
        assert_eq!(c.p, 3);
        assert_eq!(c.gamma, 0.0);
        assert_eq!(c.q, 8);
        assert_eq!(c.theta, 10);
        assert_eq!(c.top_keywords, 15);
        assert_eq!(PipelineConfig::french().tau, 0.3);
        c.validate().unwrap();
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = PipelineConfig::from_toml_str("tau = 0.5\n[chat]\nmodel = \"m\"\n").unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.chat.model, "m");
        assert_eq!(c.q, 8);
    }

    #[test]
    fn rejects_out_of_range_and_unknown_keys() {
        assert!(matches!(
            PipelineConfig::from_toml_str("tau = 1.0"),
            Err(ConfigError::OutOfRange { field: "tau", .. })
        ));
        assert!(PipelineConfig::from_toml_str("lambda = 1.5").is_err());
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.chat.timeout_secs += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::french();
        assert_eq!(PipelineConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }
}
