//! Resumable run directory.
//!
//! ```text
//! <run>/config.toml     canonical config snapshot
//! <run>/catalog.json    canonical catalog snapshot
//! <run>/manifest.json   schema version and snapshot hashes
//! <run>/trials.jsonl    one checksummed trial record per line
//! <run>/duels.jsonl     one checksummed duel record per line
//! <run>/meta.json       timestamps and backend handshake
//! <run>/reports/        derived tables
//! ```
//!
//! Logs are append-only. Each line wraps the record with its kind, the
//! schema version and the SHA-256 of the record's JSON text. Timestamps
//! live only in `meta.json`, so two runs with the same inputs produce
//! byte-identical logs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::{DuelOutcome, TrialRecord};
use crate::catalog::{ArtworkRecord, Catalog, CatalogError};
use crate::config::{ConfigError, TournamentConfig};
use crate::protocol::Handshake;

pub const SCHEMA_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.toml";
pub const CATALOG_FILE: &str = "catalog.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_LOG: &str = "trials.jsonl";
pub const DUELS_LOG: &str = "duels.jsonl";
pub const META_FILE: &str = "meta.json";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{path}: not a run directory (missing {missing})")]
    NotARun { path: PathBuf, missing: &'static str },
    #[error("{0}: run directory already exists and is not empty; pass --resume to continue it")]
    Exists(PathBuf),
    #[error("{path}: {what} snapshot does not match the resume invocation")]
    SnapshotMismatch { path: PathBuf, what: &'static str },
    #[error("{path}: unsupported schema version {found}")]
    Schema { path: PathBuf, found: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_sha256: String,
    pub catalog_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub created_at: String,
    pub updated_at: String,
    pub backend: String,
    pub handshake: Option<Handshake>,
    pub sessions: u32,
    pub completed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogKind {
    Trial,
    Duel,
}

impl LogKind {
    pub fn name(self) -> &'static str {
        match self {
            LogKind::Trial => "trial",
            LogKind::Duel => "duel",
        }
    }

    pub fn file(self) -> &'static str {
        match self {
            LogKind::Trial => TRIALS_LOG,
            LogKind::Duel => DUELS_LOG,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<'a> {
    schema: u32,
    kind: &'a str,
    sha256: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

/// Serializes one log line, newline included.
pub fn encode_line<T: Serialize>(kind: LogKind, record: &T) -> String {
    let json = serde_json::to_string(record).expect("record serializes");
    let raw = RawValue::from_string(json).expect("valid json");
    let env = Envelope {
        schema: SCHEMA_VERSION,
        kind: kind.name(),
        sha256: sha256_hex(raw.get().as_bytes()),
        record: &raw,
    };
    let mut line = serde_json::to_string(&env).expect("envelope serializes");
    line.push('\n');
    line
}

fn decode_line<T: DeserializeOwned>(kind: LogKind, line: &str) -> Result<T, String> {
    let env: Envelope<'_> = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    if env.schema != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {}", env.schema));
    }
    if env.kind != kind.name() {
        return Err(format!("expected a {} record, found `{}`", kind.name(), env.kind));
    }
    if sha256_hex(env.record.get().as_bytes()) != env.sha256 {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(env.record.get()).map_err(|e| format!("invalid {} record: {e}", kind.name()))
}

/// Parsed log contents and the byte length of the valid prefix.
#[derive(Debug)]
pub struct LogContents<T> {
    pub records: Vec<T>,
    pub valid_len: u64,
    /// A trailing line without its newline, as left by an interrupted write.
    pub torn_tail: bool,
}

/// Reads a log. An unterminated last line is reported as a torn tail and
/// skipped; any other bad line is corruption.
pub fn read_log<T: DeserializeOwned>(path: &Path, kind: LogKind) -> Result<LogContents<T>, StoreError> {
    let text = match fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0;
    while offset < text.len() {
        line_no += 1;
        let Some(nl) = text[offset..].iter().position(|&b| b == b'\n') else {
            return Ok(LogContents {
                records,
                valid_len: offset as u64,
                torn_tail: true,
            });
        };
        let line = std::str::from_utf8(&text[offset..offset + nl]).map_err(|_| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            reason: "not UTF-8".into(),
        })?;
        let rec = decode_line(kind, line).map_err(|reason| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        })?;
        records.push(rec);
        offset += nl + 1;
    }
    Ok(LogContents {
        records,
        valid_len: offset as u64,
        torn_tail: false,
    })
}

/// Append handle for one log. Every line is flushed as it is written.
pub struct LogWriter {
    kind: LogKind,
    path: PathBuf,
    file: File,
}

impl LogWriter {
    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), StoreError> {
        let line = encode_line(self.kind, record);
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(io_err(&self.path))
    }
}

/// Buffers out-of-order completions and appends them in index order.
pub struct OrderedAppender<T> {
    writer: LogWriter,
    next: usize,
    pending: BTreeMap<usize, T>,
    written: usize,
}

impl<T: Serialize> OrderedAppender<T> {
    pub fn new(writer: LogWriter) -> Self {
        Self {
            writer,
            next: 0,
            pending: BTreeMap::new(),
            written: 0,
        }
    }

    /// Queues item `index` and writes every contiguous item now available.
    /// Returns how many lines were written by this call.
    pub fn submit(&mut self, index: usize, record: T) -> Result<usize, StoreError> {
        self.pending.insert(index, record);
        let mut n = 0;
        while let Some(rec) = self.pending.remove(&self.next) {
            self.writer.append(&rec)?;
            self.next += 1;
            n += 1;
        }
        self.written += n;
        Ok(n)
    }

    pub fn written(&self) -> usize {
        self.written
    }
}

#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    config: TournamentConfig,
    catalog: Catalog,
}

impl RunStore {
    /// Creates a fresh run directory with config and catalog snapshots.
    pub fn create(dir: &Path, config: &TournamentConfig, catalog: &Catalog) -> Result<Self, StoreError> {
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
            if entries.next().is_some() {
                return Err(StoreError::Exists(dir.to_path_buf()));
            }
        }
        fs::create_dir_all(dir.join(REPORTS_DIR)).map_err(io_err(dir))?;
        let config_text = config.to_canonical_toml();
        let catalog_text = catalog.to_canonical_json();
        write_file(&dir.join(CONFIG_FILE), &config_text)?;
        write_file(&dir.join(CATALOG_FILE), &catalog_text)?;
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            config_sha256: sha256_hex(config_text.as_bytes()),
            catalog_sha256: sha256_hex(catalog_text.as_bytes()),
        };
        write_file(&dir.join(MANIFEST_FILE), &crate::report::to_json(&manifest))?;
        for kind in [LogKind::Trial, LogKind::Duel] {
            File::create(dir.join(kind.file())).map_err(io_err(dir))?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config: config.clone(),
            catalog: catalog.clone(),
        })
    }

    /// Opens an existing run from its own snapshots.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let need = |name: &'static str| {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(StoreError::NotARun {
                    path: dir.to_path_buf(),
                    missing: name,
                })
            }
        };
        let manifest_path = need(MANIFEST_FILE)?;
        let manifest: Manifest =
            serde_json::from_str(&read_file(&manifest_path)?).map_err(|e| StoreError::Corrupt {
                path: manifest_path.clone(),
                line: e.line(),
                reason: e.to_string(),
            })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(StoreError::Schema {
                path: manifest_path,
                found: manifest.schema_version,
            });
        }
        let config_path = need(CONFIG_FILE)?;
        let config_text = read_file(&config_path)?;
        if sha256_hex(config_text.as_bytes()) != manifest.config_sha256 {
            return Err(StoreError::SnapshotMismatch {
                path: config_path,
                what: "config",
            });
        }
        let config = TournamentConfig::from_toml(&config_text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                origin: config_path.display().to_string(),
                message,
            },
            other => other,
        })?;
        let catalog_path = need(CATALOG_FILE)?;
        let catalog_text = read_file(&catalog_path)?;
        if sha256_hex(catalog_text.as_bytes()) != manifest.catalog_sha256 {
            return Err(StoreError::SnapshotMismatch {
                path: catalog_path,
                what: "catalog",
            });
        }
        // Reference images were checked when the run was created; the
        // snapshot may live far from them.
        let records: Vec<ArtworkRecord> = serde_json::from_str(&catalog_text).map_err(|e| CatalogError::Parse {
            origin: catalog_path.display().to_string(),
            message: e.to_string(),
        })?;
        let catalog = Catalog::new(records)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            catalog,
        })
    }

    /// Opens a run to continue it, requiring any supplied config or
    /// catalog to hash-match the snapshots.
    pub fn resume(
        dir: &Path,
        config: Option<&TournamentConfig>,
        catalog: Option<&Catalog>,
    ) -> Result<Self, StoreError> {
        let store = Self::open(dir)?;
        if let Some(c) = config {
            if c.to_canonical_toml() != store.config.to_canonical_toml() {
                return Err(StoreError::SnapshotMismatch {
                    path: dir.join(CONFIG_FILE),
                    what: "config",
                });
            }
        }
        if let Some(c) = catalog {
            if c.to_canonical_json() != store.catalog.to_canonical_json() {
                return Err(StoreError::SnapshotMismatch {
                    path: dir.join(CATALOG_FILE),
                    what: "catalog",
                });
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &TournamentConfig {
        &self.config
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join(REPORTS_DIR)
    }

    pub fn log_path(&self, kind: LogKind) -> PathBuf {
        self.dir.join(kind.file())
    }

    pub fn read_trials(&self) -> Result<LogContents<TrialRecord>, StoreError> {
        read_log(&self.log_path(LogKind::Trial), LogKind::Trial)
    }

    pub fn read_duels(&self) -> Result<LogContents<DuelOutcome>, StoreError> {
        read_log(&self.log_path(LogKind::Duel), LogKind::Duel)
    }

    /// Cuts a torn trailing line off `kind`'s log. Returns whether anything
    /// was removed.
    pub fn repair(&self, kind: LogKind) -> Result<bool, StoreError> {
        let path = self.log_path(kind);
        let contents: LogContents<serde_json::Value> = read_log(&path, kind)?;
        if !contents.torn_tail {
            return Ok(false);
        }
        tracing::warn!(log = %path.display(), "discarding torn trailing record");
        let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
        f.set_len(contents.valid_len).map_err(io_err(&path))?;
        Ok(true)
    }

    pub fn writer(&self, kind: LogKind) -> Result<LogWriter, StoreError> {
        let path = self.log_path(kind);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(LogWriter { kind, path, file })
    }

    pub fn read_meta(&self) -> Result<Option<Meta>, StoreError> {
        let path = self.dir.join(META_FILE);
        if !path.exists() {
            return Ok(None);
        }
        serde_json::from_str(&read_file(&path)?)
            .map(Some)
            .map_err(|e| StoreError::Corrupt {
                path,
                line: e.line(),
                reason: e.to_string(),
            })
    }

    pub fn write_meta(&self, meta: &Meta) -> Result<(), StoreError> {
        write_file(&self.dir.join(META_FILE), &crate::report::to_json(meta))
    }

    /// Records the start of a session in `meta.json`.
    pub fn begin_session(&self, backend: &str, handshake: Option<&Handshake>) -> Result<Meta, StoreError> {
        let now = chrono::Utc::now().to_rfc3339();
        let meta = match self.read_meta()? {
            Some(mut m) => {
                m.updated_at = now;
                m.backend = backend.to_string();
                m.handshake = handshake.cloned();
                m.sessions += 1;
                m.completed = false;
                m
            }
            None => Meta {
                created_at: now.clone(),
                updated_at: now,
                backend: backend.to_string(),
                handshake: handshake.cloned(),
                sessions: 1,
                completed: false,
            },
        };
        self.write_meta(&meta)?;
        Ok(meta)
    }

    pub fn finish_session(&self, mut meta: Meta) -> Result<(), StoreError> {
        meta.updated_at = chrono::Utc::now().to_rfc3339();
        meta.completed = true;
        self.write_meta(&meta)
    }

    /// Writes report files, replacing any previous contents.
    pub fn write_reports(&self, files: &BTreeMap<String, String>) -> Result<(), StoreError> {
        write_reports_to(&self.reports_dir(), files)
    }
}

pub fn write_reports_to(dir: &Path, files: &BTreeMap<String, String>) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in files {
        write_file(&dir.join(name), body)?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes via a sibling temp file and rename, so readers never see a
/// half-written file.
fn write_file(path: &Path, body: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::TrialResult;

    fn catalog() -> Catalog {
        Catalog::new(vec![ArtworkRecord {
            id: "a".into(),
            title: "Harbor Dawn".into(),
            artist: "Ines Alder".into(),
            reference_image: "mock://a".into(),
            motifs: vec![],
        }])
        .unwrap()
    }

    fn trial(fit: f64) -> TrialRecord {
        TrialRecord::Ok(TrialResult {
            artwork_id: "a".into(),
            metric: "semantics".into(),
            prompt: "Harbor Dawn in the style of Ines Alder".into(),
            seed: 9,
            images: vec!["mock:0=3ff0000000000000".into()],
            sample_scores: vec![fit],
            fit,
        })
    }

    #[test]
    fn line_round_trip_and_checksum() {
        let line = encode_line(LogKind::Trial, &trial(0.1 + 0.2));
        let back: TrialRecord = decode_line(LogKind::Trial, line.trim_end()).unwrap();
        assert_eq!(back, trial(0.1 + 0.2));
        let tampered = line.replace("0.30000000000000004", "0.3");
        assert!(decode_line::<TrialRecord>(LogKind::Trial, tampered.trim_end())
            .unwrap_err()
            .contains("checksum"));
        assert!(decode_line::<TrialRecord>(LogKind::Duel, line.trim_end()).is_err());
    }

    #[test]
    fn create_open_and_resume_checks() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let cfg = TournamentConfig::default();
        RunStore::create(&dir, &cfg, &catalog()).unwrap();
        assert!(matches!(
            RunStore::create(&dir, &cfg, &catalog()),
            Err(StoreError::Exists(_))
        ));
        let s = RunStore::open(&dir).unwrap();
        assert_eq!(s.config(), &cfg);
        let other = TournamentConfig {
            rounds: 3,
            ..cfg.clone()
        };
        assert!(matches!(
            RunStore::resume(&dir, Some(&other), None),
            Err(StoreError::SnapshotMismatch { what: "config", .. })
        ));
        RunStore::resume(&dir, Some(&cfg), Some(&catalog())).unwrap();
        fs::write(dir.join(CONFIG_FILE), "rounds = 2\n").unwrap();
        assert!(matches!(RunStore::open(&dir), Err(StoreError::SnapshotMismatch { .. })));
    }

    #[test]
    fn torn_tail_repaired_mid_corruption_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let s = RunStore::create(&tmp.path().join("r"), &TournamentConfig::default(), &catalog()).unwrap();
        let mut w = s.writer(LogKind::Trial).unwrap();
        w.append(&trial(0.5)).unwrap();
        w.append(&trial(0.6)).unwrap();
        let path = s.log_path(LogKind::Trial);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"schema\":1,\"kind\":\"tri").unwrap();
        let c = s.read_trials().unwrap();
        assert!(c.torn_tail);
        assert_eq!(c.records.len(), 2);
        assert!(s.repair(LogKind::Trial).unwrap());
        assert!(!s.read_trials().unwrap().torn_tail);
        assert!(!s.repair(LogKind::Trial).unwrap());

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, format!("garbage\n{text}")).unwrap();
        assert!(matches!(s.read_trials(), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn appender_writes_in_index_order() {
        let tmp = tempfile::tempdir().unwrap();
        let s = RunStore::create(&tmp.path().join("r"), &TournamentConfig::default(), &catalog()).unwrap();
        let mut app = OrderedAppender::new(s.writer(LogKind::Trial).unwrap());
        assert_eq!(app.submit(1, trial(0.1)).unwrap(), 0);
        assert_eq!(app.submit(2, trial(0.2)).unwrap(), 0);
        assert_eq!(app.submit(0, trial(0.0)).unwrap(), 3);
        let fits: Vec<f64> = s
            .read_trials()
            .unwrap()
            .records
            .iter()
            .map(|t| t.result().unwrap().fit)
            .collect();
        assert_eq!(fits, [0.0, 0.1, 0.2]);
        assert_eq!(app.written(), 3);
    }
}
