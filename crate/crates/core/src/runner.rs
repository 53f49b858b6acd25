//! Tournament orchestration over a run store, and offline report
//! recomputation from a run's logs.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::analysis::{self, AnalysisError, ConsistencyMatrix, SensitivityCurve};
use crate::arena::{self, ArenaContext, ArenaError, DuelOutcome, FitSet, Ledger, TrialRecord};
use crate::backend::Backend;
use crate::catalog::{ArtworkRecord, Catalog};
use crate::config::TournamentConfig;
use crate::metric::{MetricError, MetricSpec};
use crate::prompting::{draw_prompt_set, BlendingManifest, ChallengerPromptSet, PromptError};
use crate::report;
use crate::store::{LogKind, OrderedAppender, RunStore, StoreError};

/// Margins swept by default, merged with the configured one.
pub const DEFAULT_SENSITIVITY_GRID: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("interrupted after writing {written} records this session; continue with --resume")]
    Interrupted { written: usize },
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Maximum concurrent trials or duels.
    pub jobs: usize,
    /// Stop once this many duel records have been written in this session.
    pub stop_after_duels: Option<usize>,
    /// Set from a signal handler to stop cleanly between records.
    pub cancel: Option<Arc<AtomicBool>>,
}

impl RunOptions {
    fn cancelled(&self) -> bool {
        self.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub trials_run: usize,
    pub trials_reused: usize,
    pub duels_run: usize,
    pub duels_reused: usize,
    pub ledger: Option<Ledger>,
}

/// Latest record per artwork, in catalog order.
pub fn latest_trials(catalog: &Catalog, records: Vec<TrialRecord>) -> Vec<TrialRecord> {
    let mut latest: HashMap<String, TrialRecord> = HashMap::new();
    for r in records {
        latest.insert(r.artwork_id().to_string(), r);
    }
    catalog.records().iter().filter_map(|a| latest.remove(&a.id)).collect()
}

/// Latest outcome per ordered pair of `fitset`, in pair order.
pub fn latest_duels(fitset: &FitSet, records: Vec<DuelOutcome>) -> Vec<DuelOutcome> {
    let mut latest: HashMap<(String, String), DuelOutcome> = HashMap::new();
    for r in records {
        let (c, d) = r.pair();
        latest.insert((c.to_string(), d.to_string()), r);
    }
    fitset
        .ordered_pairs()
        .into_iter()
        .filter_map(|p| latest.remove(&p))
        .collect()
}

fn context<'a>(config: &'a TournamentConfig, metric: MetricSpec, backend: &'a dyn Backend) -> ArenaContext<'a> {
    ArenaContext {
        config,
        metric,
        backend,
        retry: config.backend.retry_policy(),
    }
}

/// Runs every entry trial not yet recorded as successful.
pub fn run_trials(
    store: &RunStore,
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<(Vec<TrialRecord>, usize, usize), RunError> {
    store.repair(LogKind::Trial)?;
    let catalog = store.catalog();
    let config = store.config();
    let existing = latest_trials(catalog, store.read_trials()?.records);
    let done: HashMap<&str, &TrialRecord> = existing
        .iter()
        .filter(|t| t.result().is_some())
        .map(|t| (t.artwork_id(), t))
        .collect();
    let pending: Vec<&ArtworkRecord> = catalog
        .records()
        .iter()
        .filter(|a| !done.contains_key(a.id.as_str()))
        .collect();
    let reused = catalog.len() - pending.len();
    if !pending.is_empty() {
        tracing::info!(pending = pending.len(), reused, "running entry trials");
    }
    let ctx = context(config, config.metric_spec()?, backend);
    let mut appender = OrderedAppender::new(store.writer(LogKind::Trial)?);
    let result = arena::run_entry_trials(&pending, &ctx, opts.jobs, |i, rec| {
        if opts.cancelled() {
            return Err(ArenaError::Interrupted);
        }
        appender
            .submit(i, rec.clone())
            .map_err(|e| ArenaError::Sink(e.to_string()))?;
        Ok(())
    });
    let fresh = match result {
        Ok(r) => r,
        Err(ArenaError::Interrupted) => {
            return Err(RunError::Interrupted {
                written: appender.written(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let run = fresh.len();
    let merged = latest_trials(catalog, existing.into_iter().chain(fresh).collect());
    Ok((merged, run, reused))
}

/// Admits the fit set from successful trials.
pub fn fit_set(config: &TournamentConfig, catalog: &Catalog, trials: &[TrialRecord]) -> Result<FitSet, RunError> {
    Ok(arena::admit(trials, catalog, config.admission, &config.metric_spec()?)?)
}

/// The pre-authored blending manifest of `artwork`, if the config names a
/// blending directory holding one.
pub fn load_blending(
    config: &TournamentConfig,
    artwork: &ArtworkRecord,
) -> Result<Option<BlendingManifest>, PromptError> {
    let Some(dir) = &config.prompting.blending_dir else {
        return Ok(None);
    };
    let path = dir.join(format!("{}.json", artwork.id));
    if !path.is_file() {
        return Ok(None);
    }
    let m = BlendingManifest::load(&path)?;
    m.validate_for(artwork).map_err(|e| match e {
        PromptError::InvalidBlending { reason, .. } => PromptError::InvalidBlending {
            origin: Some(path.display().to_string()),
            reason,
        },
        other => other,
    })?;
    Ok(Some(m))
}

pub fn prompt_set_for(config: &TournamentConfig, artwork: &ArtworkRecord) -> Result<ChallengerPromptSet, PromptError> {
    let blending = load_blending(config, artwork)?;
    draw_prompt_set(
        artwork,
        config.rounds as usize,
        config.seed,
        config.prompting.max_motifs,
        blending.as_ref(),
    )
}

/// Draws every fit-set member's challenger prompt set.
pub fn prompt_sets(
    config: &TournamentConfig,
    catalog: &Catalog,
    fitset: &FitSet,
) -> Result<BTreeMap<String, ChallengerPromptSet>, RunError> {
    fitset
        .ids()
        .map(|id| {
            let artwork = catalog
                .get(id)
                .ok_or_else(|| ArenaError::UnknownArtwork(id.to_string()))?;
            Ok((id.to_string(), prompt_set_for(config, artwork)?))
        })
        .collect()
}

/// Runs entry trials, admission and every outstanding duel, then writes
/// the reports. Completed duels already in the log are kept; aborted and
/// missing ones are played.
pub fn run_tournament(store: &RunStore, backend: &dyn Backend, opts: &RunOptions) -> Result<RunSummary, RunError> {
    let (trials, trials_run, trials_reused) = run_trials(store, backend, opts)?;
    let config = store.config();
    let catalog = store.catalog();
    let fitset = fit_set(config, catalog, &trials)?;
    if fitset.len() < 2 {
        return Err(ArenaError::FitSetTooSmall(fitset.len()).into());
    }
    let sets = prompt_sets(config, catalog, &fitset)?;
    store.repair(LogKind::Duel)?;
    let existing = latest_duels(&fitset, store.read_duels()?.records);
    let done: std::collections::HashSet<(String, String)> = existing
        .iter()
        .filter(|d| d.completed().is_some())
        .map(|d| {
            let (c, d) = d.pair();
            (c.to_string(), d.to_string())
        })
        .collect();
    let pending: Vec<(String, String)> = fitset
        .ordered_pairs()
        .into_iter()
        .filter(|p| !done.contains(p))
        .collect();
    let duels_reused = done.len();
    tracing::info!(
        fitset = fitset.len(),
        pending = pending.len(),
        reused = duels_reused,
        "running round robin"
    );
    let ctx = context(config, config.metric_spec()?, backend);
    let mut appender = OrderedAppender::new(store.writer(LogKind::Duel)?);
    let result = arena::run_duels(&pending, catalog, &sets, &ctx, opts.jobs, |i, outcome| {
        if opts.cancelled() {
            return Err(ArenaError::Interrupted);
        }
        appender
            .submit(i, outcome.clone())
            .map_err(|e| ArenaError::Sink(e.to_string()))?;
        if opts.stop_after_duels.is_some_and(|n| appender.written() >= n) {
            return Err(ArenaError::Interrupted);
        }
        Ok(())
    });
    match result {
        Ok(_) => {}
        Err(ArenaError::Interrupted) => {
            return Err(RunError::Interrupted {
                written: appender.written(),
            })
        }
        Err(e) => return Err(e.into()),
    }
    let bundle = compute_reports(store)?;
    store.write_reports(&bundle.files)?;
    Ok(RunSummary {
        trials_run,
        trials_reused,
        duels_run: pending.len(),
        duels_reused,
        ledger: bundle.ledger,
    })
}

/// Sorted union of the default grid and the configured margin.
pub fn default_grid(config: &TournamentConfig) -> Vec<f64> {
    let mut g: Vec<f64> = DEFAULT_SENSITIVITY_GRID.to_vec();
    g.push(config.delta);
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

/// Everything derivable from a run's logs, with the rendered files.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub trials: Vec<TrialRecord>,
    pub fitset: FitSet,
    pub duels: Vec<DuelOutcome>,
    pub ledger: Option<Ledger>,
    pub consistency: Option<ConsistencyMatrix>,
    pub sensitivity: Option<SensitivityCurve>,
    /// File name to contents.
    pub files: BTreeMap<String, String>,
}

/// Recomputes every report from the run's logs. Needs no backend.
pub fn compute_reports(store: &RunStore) -> Result<ReportBundle, RunError> {
    let config = store.config();
    let catalog = store.catalog();
    let spec = config.metric_spec()?;
    let trials = latest_trials(catalog, store.read_trials()?.records);
    let fitset = fit_set(config, catalog, &trials)?;
    let duels = latest_duels(&fitset, store.read_duels()?.records);
    let mut files = BTreeMap::new();
    files.insert("trials.csv".into(), report::trials_csv(&trials));
    files.insert("fitset.csv".into(), report::fitset_csv(&fitset));
    files.insert("fitset.json".into(), report::to_json(&fitset));
    let fits: Vec<(String, f64)> = trials
        .iter()
        .filter_map(TrialRecord::result)
        .map(|t| (t.artwork_id.clone(), t.fit))
        .collect();
    if fits.len() >= 4 {
        let stats = analysis::fit_distribution(&spec.key, &fits)?;
        files.insert("fit_distribution.json".into(), report::to_json(&stats));
        files.insert("fit_distribution.txt".into(), report::fit_distribution_text(&stats));
    }
    let (mut ledger, mut consistency, mut sensitivity) = (None, None, None);
    if fitset.len() >= 2 && !duels.is_empty() {
        let l = arena::build_ledger(&duels, &fitset)?;
        files.insert("ledger.csv".into(), report::ledger_csv(&l, catalog));
        files.insert("ledger.json".into(), report::to_json(&l));
        files.insert("ledger.txt".into(), report::ledger_text(&l, catalog));
        let m = analysis::build_consistency_matrix(&fitset, spec.orientation, &duels)?;
        files.insert("consistency.csv".into(), report::consistency_csv(&m));
        files.insert("consistency_summary.csv".into(), report::consistency_summary_csv(&m));
        files.insert("consistency.json".into(), report::to_json(&m));
        files.insert("consistency.txt".into(), report::consistency_text(&m, catalog));
        let s = analysis::sweep_delta(&spec.key, spec.orientation, &duels, &default_grid(config))?;
        files.insert("sensitivity.csv".into(), report::sensitivity_csv(&s));
        files.insert("sensitivity.json".into(), report::to_json(&s));
        ledger = Some(l);
        consistency = Some(m);
        sensitivity = Some(s);
    }
    Ok(ReportBundle {
        trials,
        fitset,
        duels,
        ledger,
        consistency,
        sensitivity,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::MotifEntry;
    use crate::config::Admission;
    use crate::mock::MockBackend;

    fn catalog(n: usize) -> Catalog {
        let names = ["harbor", "orchard", "meadow", "quarry", "glacier", "canyon"];
        Catalog::new(
            (0..n)
                .map(|i| ArtworkRecord {
                    id: format!("w{i}"),
                    title: format!("{} study", names[i]),
                    artist: format!("Painter {}", (b'A' + i as u8) as char),
                    reference_image: format!("mock://w{i}"),
                    motifs: ["lantern", "bridge", "heron"]
                        .iter()
                        .map(|m| MotifEntry {
                            name: format!("{m} {}", names[i]),
                            description: format!("a {m} by the {}", names[i]),
                        })
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn config(n: usize) -> TournamentConfig {
        TournamentConfig {
            admission: Admission::TopN(n),
            rounds: 3,
            k: 2,
            seed: 42,
            backend: crate::config::BackendConfig {
                mock_jitter: 0.3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn six_artworks_play_thirty_duels() {
        let tmp = tempfile::tempdir().unwrap();
        let cat = catalog(6);
        let cfg = config(6);
        let store = RunStore::create(&tmp.path().join("r"), &cfg, &cat).unwrap();
        let mock = MockBackend::with_jitter(&cat, cfg.backend.mock_jitter);
        let s = run_tournament(&store, &mock, &RunOptions::default()).unwrap();
        assert_eq!((s.trials_run, s.duels_run), (6, 30));
        assert_eq!(store.read_duels().unwrap().records.len(), 30);
        let ledger = s.ledger.unwrap();
        assert!(ledger.is_complete());
        assert_eq!(ledger.decisive_matches + ledger.drawn_matches, 30);
    }

    #[test]
    fn stop_and_resume_matches_clean_run() {
        let tmp = tempfile::tempdir().unwrap();
        let cat = catalog(4);
        let cfg = config(4);
        let mock = MockBackend::with_jitter(&cat, cfg.backend.mock_jitter);
        let clean = RunStore::create(&tmp.path().join("clean"), &cfg, &cat).unwrap();
        run_tournament(
            &clean,
            &mock,
            &RunOptions {
                jobs: 3,
                ..Default::default()
            },
        )
        .unwrap();

        let dir = tmp.path().join("killed");
        let killed = RunStore::create(&dir, &cfg, &cat).unwrap();
        let stop = RunOptions {
            jobs: 1,
            stop_after_duels: Some(5),
            cancel: None,
        };
        assert!(matches!(
            run_tournament(&killed, &mock, &stop),
            Err(RunError::Interrupted { written: 5 })
        ));
        let resumed = RunStore::resume(&dir, Some(&cfg), Some(&cat)).unwrap();
        let s = run_tournament(&resumed, &mock, &RunOptions::default()).unwrap();
        assert_eq!((s.duels_reused, s.duels_run, s.trials_reused), (5, 7, 4));
        for f in ["trials.jsonl", "duels.jsonl"] {
            assert_eq!(
                std::fs::read(tmp.path().join("clean").join(f)).unwrap(),
                std::fs::read(dir.join(f)).unwrap(),
                "{f}"
            );
        }
        assert_eq!(
            compute_reports(&clean).unwrap().files,
            compute_reports(&resumed).unwrap().files
        );
    }

    #[test]
    fn grid_merges_configured_delta() {
        let cfg = TournamentConfig {
            delta: 0.03,
            ..Default::default()
        };
        assert_eq!(default_grid(&cfg), [0.0, 0.01, 0.02, 0.03, 0.05, 0.1, 0.2]);
        assert_eq!(default_grid(&TournamentConfig::default()).len(), 6);
    }
}
