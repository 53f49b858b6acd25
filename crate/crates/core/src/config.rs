//! Tournament configuration.
//!
//! A TOML file. Every key is optional; omitted keys take the defaults of
//! the reference setup: one sample per prompt, five rounds per duel, zero
//! margin and top-20 admission. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::RetryPolicy;
use crate::metric::{MetricError, MetricOverride, MetricRegistry, MetricSpec, SEMANTICS};
use crate::prompting::DEFAULT_MAX_MOTIFS;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// How artworks pass the fitness gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Admission {
    /// Admit every artwork whose fit is at least as close as this value.
    Threshold(f64),
    /// Admit the `n` closest artworks.
    TopN(usize),
}

impl Default for Admission {
    fn default() -> Self {
        Admission::TopN(20)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptingConfig {
    #[serde(default = "default_max_motifs")]
    pub max_motifs: usize,
    /// Directory of pre-authored blending manifests named `<artwork id>.json`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blending_dir: Option<PathBuf>,
}

impl Default for PromptingConfig {
    fn default() -> Self {
        Self {
            max_motifs: DEFAULT_MAX_MOTIFS,
            blending_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_handshake_timeout_s")]
    pub handshake_timeout_s: u64,
    /// Jitter magnitude of the built-in mock backend.
    #[serde(default)]
    pub mock_jitter: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            handshake_timeout_s: default_handshake_timeout_s(),
            mock_jitter: 0.0,
        }
    }
}

impl BackendConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            base_backoff: Duration::from_millis(self.backoff_ms),
        }
    }

    pub fn handshake_timeout(&self) -> Duration {
        Duration::from_secs(self.handshake_timeout_s)
    }
}

fn default_k() -> u32 {
    1
}
fn default_rounds() -> u32 {
    5
}
fn default_metric() -> String {
    SEMANTICS.to_string()
}
fn default_max_motifs() -> usize {
    DEFAULT_MAX_MOTIFS
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    100
}
fn default_handshake_timeout_s() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TournamentConfig {
    /// Samples per prompt.
    #[serde(default = "default_k")]
    pub k: u32,
    /// Rounds per duel; also the size of each challenger's prompt set.
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Round-award margin.
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_metric")]
    pub metric: String,
    #[serde(default)]
    pub admission: Admission,
    #[serde(default)]
    pub prompting: PromptingConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, MetricOverride>,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            rounds: default_rounds(),
            delta: 0.0,
            seed: 0,
            metric: default_metric(),
            admission: Admission::default(),
            prompting: PromptingConfig::default(),
            backend: BackendConfig::default(),
            metrics: BTreeMap::new(),
        }
    }
}

impl TournamentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            origin: "<inline>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialized form, used for snapshots and hashing.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn registry(&self) -> Result<MetricRegistry, MetricError> {
        MetricRegistry::builtin().with_overrides(&self.metrics)
    }

    pub fn metric_spec(&self) -> Result<MetricSpec, MetricError> {
        self.registry()?.resolve(&self.metric).cloned()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !self.delta.is_finite() || self.delta < 0.0 {
            return bad(format!("delta must be a non-negative number, got {}", self.delta));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} does not fit in a signed 64-bit integer", self.seed));
        }
        match self.admission {
            Admission::TopN(0) => return bad("admission.top_n must be at least 1".into()),
            Admission::Threshold(t) if !t.is_finite() => {
                return bad(format!("admission.threshold must be finite, got {t}"))
            }
            _ => {}
        }
        if self.prompting.max_motifs == 0 || self.prompting.max_motifs > 63 {
            return bad(format!(
                "prompting.max_motifs must be in 1..=63, got {}",
                self.prompting.max_motifs
            ));
        }
        if !self.backend.mock_jitter.is_finite() || self.backend.mock_jitter < 0.0 {
            return bad("backend.mock_jitter must be a non-negative number".into());
        }
        self.metric_spec()?;
        Ok(())
    }

    /// Checks that depend on the catalog size.
    pub fn validate_for_catalog(&self, catalog_len: usize) -> Result<(), ConfigError> {
        if let Admission::TopN(n) = self.admission {
            if n > catalog_len {
                return Err(ConfigError::Invalid(format!(
                    "admission.top_n = {n} exceeds the catalog size {catalog_len}"
                )));
            }
        }
        Ok(())
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<TournamentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TournamentConfig::from_toml(&text).map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            origin: path.display().to_string(),
            message,
        },
        other => other,
    })
}
