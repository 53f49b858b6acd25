//! Proximity metric specifications and the orientation registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEMANTICS: &str = "semantics";
pub const AESTHETICS: &str = "aesthetics";
pub const FIDELITY: &str = "fidelity";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("unknown metric key `{0}`")]
    Unknown(String),
    #[error("metric `{key}`: invalid range [{lo}, {hi}]")]
    InvalidRange { key: String, lo: f64, hi: f64 },
    #[error("metric `{key}`: score {score} is outside valid range [{lo}, {hi}]")]
    OutOfRange { key: String, score: f64, lo: f64, hi: f64 },
}

/// Which direction of a raw score means "more similar to the reference".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherIsCloser,
    LowerIsCloser,
}

impl Orientation {
    /// Maps a raw score so that larger always means closer.
    #[inline]
    pub fn closeness(self, raw: f64) -> f64 {
        match self {
            Orientation::HigherIsCloser => raw,
            Orientation::LowerIsCloser => -raw,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::HigherIsCloser => Orientation::LowerIsCloser,
            Orientation::LowerIsCloser => Orientation::HigherIsCloser,
        }
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::HigherIsCloser => "higher_is_closer",
            Orientation::LowerIsCloser => "lower_is_closer",
        })
    }
}

/// Closed score interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", from = "[f64; 2]")]
pub struct ValidRange {
    pub lo: f64,
    pub hi: f64,
}

impl From<ValidRange> for [f64; 2] {
    fn from(r: ValidRange) -> Self {
        [r.lo, r.hi]
    }
}

impl From<[f64; 2]> for ValidRange {
    fn from([lo, hi]: [f64; 2]) -> Self {
        ValidRange { lo, hi }
    }
}

impl ValidRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// NaN is never contained.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn is_well_formed(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub key: String,
    pub orientation: Orientation,
    pub valid_range: ValidRange,
}

impl MetricSpec {
    pub fn new(key: impl Into<String>, orientation: Orientation, valid_range: ValidRange) -> Self {
        Self {
            key: key.into(),
            orientation,
            valid_range,
        }
    }

    #[inline]
    pub fn closeness(&self, raw: f64) -> f64 {
        self.orientation.closeness(raw)
    }

    /// Rejects NaN and anything outside `valid_range`. Scores are never clamped.
    pub fn check_score(&self, score: f64) -> Result<f64, MetricError> {
        if self.valid_range.contains(score) {
            Ok(score)
        } else {
            Err(MetricError::OutOfRange {
                key: self.key.clone(),
                score,
                lo: self.valid_range.lo,
                hi: self.valid_range.hi,
            })
        }
    }

    /// The mirrored spec: orientation flipped, range negated.
    pub fn mirrored(&self) -> Self {
        Self {
            key: self.key.clone(),
            orientation: self.orientation.flipped(),
            valid_range: ValidRange::new(-self.valid_range.hi, -self.valid_range.lo),
        }
    }
}

/// Metric override as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOverride {
    pub orientation: Orientation,
    pub valid_range: ValidRange,
}

/// Built-in metric table plus user overrides and extensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRegistry {
    specs: BTreeMap<String, MetricSpec>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl MetricRegistry {
    /// semantics (CLIP-like cosine), aesthetics (LPIPS-like distance),
    /// fidelity (CSD-like cosine).
    pub fn builtin() -> Self {
        let mut specs = BTreeMap::new();
        for spec in [
            MetricSpec::new(SEMANTICS, Orientation::HigherIsCloser, ValidRange::new(-1.0, 1.0)),
            MetricSpec::new(AESTHETICS, Orientation::LowerIsCloser, ValidRange::new(0.0, 2.0)),
            MetricSpec::new(FIDELITY, Orientation::HigherIsCloser, ValidRange::new(-1.0, 1.0)),
        ] {
            specs.insert(spec.key.clone(), spec);
        }
        Self { specs }
    }

    pub fn with_overrides<'a>(
        mut self,
        overrides: impl IntoIterator<Item = (&'a String, &'a MetricOverride)>,
    ) -> Result<Self, MetricError> {
        for (key, o) in overrides {
            self.register(MetricSpec::new(key.clone(), o.orientation, o.valid_range))?;
        }
        Ok(self)
    }

    pub fn register(&mut self, spec: MetricSpec) -> Result<(), MetricError> {
        if !spec.valid_range.is_well_formed() {
            return Err(MetricError::InvalidRange {
                key: spec.key,
                lo: spec.valid_range.lo,
                hi: spec.valid_range.hi,
            });
        }
        self.specs.insert(spec.key.clone(), spec);
        Ok(())
    }

    pub fn resolve(&self, key: &str) -> Result<&MetricSpec, MetricError> {
        self.specs.get(key).ok_or_else(|| MetricError::Unknown(key.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricSpec> {
        self.specs.values()
    }
}

/// Looks `key` up in the built-in table.
pub fn resolve_metric(key: &str) -> Result<MetricSpec, MetricError> {
    MetricRegistry::builtin().resolve(key).cloned()
}
