//! Artwork catalog ingestion and validation.
//!
//! A catalog manifest is a UTF-8 JSON list of
//! `{"id", "title", "artist", "reference_image", "motifs": [{"name", "description"}]}`.
//! Records are immutable once loaded.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::contains_phrase;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: cannot read catalog: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: malformed catalog manifest: {message}")]
    Parse { origin: String, message: String },
    #[error("catalog record `{record}`: {reason}")]
    Validation { record: String, reason: String },
}

impl CatalogError {
    fn invalid(record: impl Into<String>, reason: impl Into<String>) -> Self {
        CatalogError::Validation {
            record: record.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotifEntry {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtworkRecord {
    pub id: String,
    pub title: String,
    pub artist: String,
    /// Opaque to the engine; only workers dereference it.
    pub reference_image: String,
    #[serde(default)]
    pub motifs: Vec<MotifEntry>,
}

/// Validated, ordered artwork list.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    records: Vec<ArtworkRecord>,
    index: HashMap<String, usize>,
}

impl Catalog {
    /// Validates `records` without touching the filesystem for asset checks.
    pub fn new(records: Vec<ArtworkRecord>) -> Result<Self, CatalogError> {
        Self::validated(records, None)
    }

    /// Parses and validates manifest text. Relative `reference_image` paths
    /// resolve against `base_dir` when given.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, CatalogError> {
        let records: Vec<ArtworkRecord> = serde_json::from_str(text).map_err(|e| CatalogError::Parse {
            origin: base_dir
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<inline>".into()),
            message: e.to_string(),
        })?;
        Self::validated(records, Some(base_dir.unwrap_or_else(|| Path::new("."))))
    }

    fn validated(records: Vec<ArtworkRecord>, base_dir: Option<&Path>) -> Result<Self, CatalogError> {
        let artists: Vec<String> = {
            let mut seen = HashSet::new();
            records
                .iter()
                .map(|r| r.artist.trim().to_lowercase())
                .filter(|a| !a.is_empty() && seen.insert(a.clone()))
                .collect()
        };
        let mut index = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            validate_record(rec, i, &artists, base_dir)?;
            if index.insert(rec.id.clone(), i).is_some() {
                return Err(CatalogError::invalid(&rec.id, "duplicate id"));
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[ArtworkRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ArtworkRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Position of `id` in file order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Canonical serialization: pretty JSON with two-space indent and a
    /// trailing newline. Loading and re-serializing a canonical manifest is
    /// byte-stable.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.records).expect("catalog serializes");
        s.push('\n');
        s
    }
}

fn validate_record(
    rec: &ArtworkRecord,
    position: usize,
    artists: &[String],
    base_dir: Option<&Path>,
) -> Result<(), CatalogError> {
    let name = if rec.id.trim().is_empty() {
        format!("#{position}")
    } else {
        rec.id.clone()
    };
    if rec.id.trim().is_empty() {
        return Err(CatalogError::invalid(name, "missing id"));
    }
    if rec.title.trim().is_empty() {
        return Err(CatalogError::invalid(name, "missing title"));
    }
    if rec.artist.trim().is_empty() {
        return Err(CatalogError::invalid(name, "missing artist"));
    }
    if rec.reference_image.trim().is_empty() {
        return Err(CatalogError::invalid(name, "missing reference_image"));
    }
    if let Some(base) = base_dir {
        if let Some(path) = local_path(&rec.reference_image, base) {
            if !path.exists() {
                return Err(CatalogError::invalid(
                    name,
                    format!("reference_image `{}` does not exist", path.display()),
                ));
            }
        }
    }
    let mut motif_names = HashSet::new();
    for m in &rec.motifs {
        if m.name.trim().is_empty() || m.description.trim().is_empty() {
            return Err(CatalogError::invalid(name, "motif with empty name or description"));
        }
        if !motif_names.insert(m.name.as_str()) {
            return Err(CatalogError::invalid(
                name,
                format!("duplicate motif name `{}`", m.name),
            ));
        }
        if let Some(a) = artists.iter().find(|a| contains_phrase(&m.description, a)) {
            return Err(CatalogError::invalid(
                name,
                format!("motif `{}` description names artist `{a}`", m.name),
            ));
        }
    }
    Ok(())
}

/// Returns a filesystem path for locators that name local files. URIs with
/// any scheme other than `file://` are opaque and not checked.
fn local_path(locator: &str, base: &Path) -> Option<PathBuf> {
    if let Some(rest) = locator.strip_prefix("file://") {
        return Some(PathBuf::from(rest));
    }
    if locator.contains("://") {
        return None;
    }
    let p = Path::new(locator);
    Some(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
}

/// Reads and validates a catalog manifest from disk.
pub fn load_catalog(manifest: &Path) -> Result<Catalog, CatalogError> {
    let text = std::fs::read_to_string(manifest).map_err(|source| CatalogError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    Catalog::from_json(&text, Some(base)).map_err(|e| match e {
        CatalogError::Parse { message, .. } => CatalogError::Parse {
            origin: manifest.display().to_string(),
            message,
        },
        other => other,
    })
}
