//! Entry trials, motif duels and the influence ledger.
//!
//! Entry trials score each artwork's explicitly attributed imitation and
//! admit the closest ones into the fit set. Every ordered pair of fit-set
//! artworks then plays one duel of R rounds: the challenger contributes a
//! content-only prompt, the defender its `"<title> in the style of
//! <artist>"` template, and each round goes to whichever reference the
//! generated images sit closer to by more than the margin. Match wins are
//! tallied into the ledger.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ImageHandle, RetryPolicy};
use crate::catalog::{ArtworkRecord, Catalog};
use crate::config::{Admission, TournamentConfig};
use crate::metric::{MetricError, MetricSpec, Orientation};
use crate::prompting::{compose_defender_template, compose_duel_prompt, ChallengerPromptSet};
use crate::seed;

#[derive(Debug, Error)]
pub enum ArenaError {
    /// A backend returned NaN or a score outside the metric's range.
    #[error("backend contract violation on {context}: {source}")]
    ContractViolation {
        context: String,
        #[source]
        source: MetricError,
    },
    #[error("backend protocol violation on {context}: {source}")]
    Protocol {
        context: String,
        #[source]
        source: BackendError,
    },
    #[error("no successful entry trials to admit from")]
    NoTrials,
    #[error("admission.top_n = {requested} but only {available} entry trials succeeded")]
    TopNTooLarge { requested: usize, available: usize },
    #[error("round robin needs at least 2 fit-set artworks, got {0}")]
    FitSetTooSmall(usize),
    #[error("duel ({challenger}, {defender}): {reason}")]
    InvalidDuel {
        challenger: String,
        defender: String,
        reason: String,
    },
    #[error("unknown artwork `{0}`")]
    UnknownArtwork(String),
    #[error("duel ({challenger}, {defender}) references an artwork outside the fit set")]
    OutsideFitSet { challenger: String, defender: String },
    #[error("{0}")]
    Sink(String),
    #[error("interrupted")]
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub artwork_id: String,
    pub metric: String,
    pub prompt: String,
    pub seed: u64,
    pub images: Vec<ImageHandle>,
    pub sample_scores: Vec<f64>,
    /// Arithmetic mean of `sample_scores`.
    pub fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialRecord {
    Ok(TrialResult),
    Failed {
        artwork_id: String,
        metric: String,
        error: String,
    },
}

impl TrialRecord {
    pub fn artwork_id(&self) -> &str {
        match self {
            TrialRecord::Ok(t) => &t.artwork_id,
            TrialRecord::Failed { artwork_id, .. } => artwork_id,
        }
    }

    pub fn result(&self) -> Option<&TrialResult> {
        match self {
            TrialRecord::Ok(t) => Some(t),
            TrialRecord::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMember {
    pub artwork_id: String,
    pub fit: f64,
    /// Position in the catalog; the stable tie-break everywhere.
    pub catalog_index: usize,
}

/// Admitted artworks, best fit first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSet {
    pub metric: String,
    pub admission: Admission,
    pub members: Vec<FitMember>,
}

impl FitSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.iter().any(|m| m.artwork_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.artwork_id.as_str())
    }

    /// Every ordered pair `(c, d)` with `c != d`, challenger-major in fit-set order.
    pub fn ordered_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::with_capacity(self.len() * self.len().saturating_sub(1));
        for c in &self.members {
            for d in &self.members {
                if c.artwork_id != d.artwork_id {
                    pairs.push((c.artwork_id.clone(), d.artwork_id.clone()));
                }
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Award {
    Challenger,
    Defender,
    NoAward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchWinner {
    Challenger,
    Defender,
    Draw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_index: u32,
    pub combo_id: u32,
    pub prompt: String,
    pub seed: u64,
    pub images: Vec<ImageHandle>,
    pub scores_c: Vec<f64>,
    pub scores_d: Vec<f64>,
    pub prox_c: f64,
    pub prox_d: f64,
    pub award: Award,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuelRecord {
    pub challenger_id: String,
    pub defender_id: String,
    pub delta: f64,
    pub rounds: Vec<RoundOutcome>,
    pub wins_c: u32,
    pub wins_d: u32,
    pub winner: MatchWinner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DuelOutcome {
    Completed(DuelRecord),
    Aborted {
        challenger_id: String,
        defender_id: String,
        error: String,
    },
}

impl DuelOutcome {
    pub fn pair(&self) -> (&str, &str) {
        match self {
            DuelOutcome::Completed(d) => (&d.challenger_id, &d.defender_id),
            DuelOutcome::Aborted {
                challenger_id,
                defender_id,
                ..
            } => (challenger_id, defender_id),
        }
    }

    pub fn completed(&self) -> Option<&DuelRecord> {
        match self {
            DuelOutcome::Completed(d) => Some(d),
            DuelOutcome::Aborted { .. } => None,
        }
    }
}

/// Arithmetic mean, summed in sample order.
pub fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Strict-margin round award in closeness orientation.
pub fn award_round(prox_c: f64, prox_d: f64, orientation: Orientation, delta: f64) -> Award {
    let c = orientation.closeness(prox_c);
    let d = orientation.closeness(prox_d);
    if c - d > delta {
        Award::Challenger
    } else if d - c > delta {
        Award::Defender
    } else {
        Award::NoAward
    }
}

/// Round tallies and the majority winner.
pub fn decide_match(awards: impl IntoIterator<Item = Award>) -> (u32, u32, MatchWinner) {
    let (mut wc, mut wd) = (0, 0);
    for a in awards {
        match a {
            Award::Challenger => wc += 1,
            Award::Defender => wd += 1,
            Award::NoAward => {}
        }
    }
    let winner = match wc.cmp(&wd) {
        std::cmp::Ordering::Greater => MatchWinner::Challenger,
        std::cmp::Ordering::Less => MatchWinner::Defender,
        std::cmp::Ordering::Equal => MatchWinner::Draw,
    };
    (wc, wd, winner)
}

impl DuelRecord {
    /// Re-decides every round at margin `delta` from the stored scores.
    pub fn redecide(&self, orientation: Orientation, delta: f64) -> Vec<Award> {
        self.rounds
            .iter()
            .map(|r| award_round(r.prox_c, r.prox_d, orientation, delta))
            .collect()
    }
}

/// Shared inputs of every trial and duel.
pub struct ArenaContext<'a> {
    pub config: &'a TournamentConfig,
    pub metric: MetricSpec,
    pub backend: &'a dyn Backend,
    pub retry: RetryPolicy,
}

enum CallFailure {
    /// Transport or worker failure after retries: abort this unit.
    Backend(BackendError),
    /// Hard error: stop the run.
    Fatal(ArenaError),
}

impl ArenaContext<'_> {
    fn generate(&self, prompt: &str, seed: u64, context: impl Fn() -> String) -> Result<Vec<ImageHandle>, CallFailure> {
        let k = self.config.k;
        let images = self
            .retry
            .run(|| self.backend.generate(prompt, k, seed))
            .map_err(|e| classify(e, &context))?;
        if images.len() != k as usize {
            return Err(CallFailure::Fatal(ArenaError::Protocol {
                context: context(),
                source: BackendError::Protocol(format!("expected {k} images, got {}", images.len())),
            }));
        }
        Ok(images)
    }

    fn score(&self, image: &str, reference: &str, context: impl Fn() -> String) -> Result<f64, CallFailure> {
        let raw = self
            .retry
            .run(|| self.backend.proximity(image, reference, &self.metric.key))
            .map_err(|e| classify(e, &context))?;
        self.metric.check_score(raw).map_err(|source| {
            CallFailure::Fatal(ArenaError::ContractViolation {
                context: context(),
                source,
            })
        })
    }
}

/// Protocol violations stop the run; everything else aborts one unit.
fn classify(e: BackendError, context: &impl Fn() -> String) -> CallFailure {
    match e {
        BackendError::Protocol(_) => CallFailure::Fatal(ArenaError::Protocol {
            context: context(),
            source: e,
        }),
        other => CallFailure::Backend(other),
    }
}

fn run_trial(artwork: &ArtworkRecord, ctx: &ArenaContext<'_>) -> Result<TrialRecord, ArenaError> {
    let prompt = compose_defender_template(artwork).text;
    let seed = seed::trial_seed(ctx.config.seed, &artwork.id);
    let attempt = || -> Result<TrialResult, CallFailure> {
        let images = ctx.generate(&prompt, seed, || format!("trial `{}`", artwork.id))?;
        let sample_scores = images
            .iter()
            .enumerate()
            .map(|(i, img)| ctx.score(img, &artwork.id, || format!("trial `{}` sample {i}", artwork.id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrialResult {
            artwork_id: artwork.id.clone(),
            metric: ctx.metric.key.clone(),
            prompt: prompt.clone(),
            seed,
            images,
            fit: mean(&sample_scores),
            sample_scores,
        })
    };
    match attempt() {
        Ok(t) => Ok(TrialRecord::Ok(t)),
        Err(CallFailure::Fatal(e)) => Err(e),
        Err(CallFailure::Backend(e)) => {
            tracing::warn!(artwork = %artwork.id, "entry trial failed, excluded from admission: {e}");
            Ok(TrialRecord::Failed {
                artwork_id: artwork.id.clone(),
                metric: ctx.metric.key.clone(),
                error: e.to_string(),
            })
        }
    }
}

/// Runs the entry trial of every artwork, in catalog order.
pub fn run_entry_trials(
    artworks: &[&ArtworkRecord],
    ctx: &ArenaContext<'_>,
    jobs: usize,
    on_complete: impl FnMut(usize, &TrialRecord) -> Result<(), ArenaError>,
) -> Result<Vec<TrialRecord>, ArenaError> {
    dispatch(artworks.len(), jobs, |i| run_trial(artworks[i], ctx), on_complete)
}

/// Applies the admission rule in closeness orientation. Ties are broken by
/// catalog order; members come back best-first.
pub fn admit(
    trials: &[TrialRecord],
    catalog: &Catalog,
    admission: Admission,
    metric: &MetricSpec,
) -> Result<FitSet, ArenaError> {
    let mut ranked: Vec<FitMember> = trials
        .iter()
        .filter_map(TrialRecord::result)
        .map(|t| {
            Ok(FitMember {
                artwork_id: t.artwork_id.clone(),
                fit: t.fit,
                catalog_index: catalog
                    .position(&t.artwork_id)
                    .ok_or_else(|| ArenaError::UnknownArtwork(t.artwork_id.clone()))?,
            })
        })
        .collect::<Result<_, ArenaError>>()?;
    if ranked.is_empty() {
        return Err(ArenaError::NoTrials);
    }
    ranked.sort_by(|a, b| {
        metric
            .closeness(b.fit)
            .total_cmp(&metric.closeness(a.fit))
            .then(a.catalog_index.cmp(&b.catalog_index))
    });
    let members = match admission {
        Admission::Threshold(tau) => ranked
            .into_iter()
            .filter(|m| metric.closeness(m.fit) >= metric.closeness(tau))
            .collect(),
        Admission::TopN(n) => {
            if n > ranked.len() {
                return Err(ArenaError::TopNTooLarge {
                    requested: n,
                    available: ranked.len(),
                });
            }
            ranked.truncate(n);
            ranked
        }
    };
    Ok(FitSet {
        metric: metric.key.clone(),
        admission,
        members,
    })
}

/// Plays one duel. Backend failures that survive retries yield an aborted
/// outcome; contract violations are hard errors.
pub fn run_duel(
    challenger: &ArtworkRecord,
    defender: &ArtworkRecord,
    prompt_set: &ChallengerPromptSet,
    ctx: &ArenaContext<'_>,
) -> Result<DuelOutcome, ArenaError> {
    let invalid = |reason: String| ArenaError::InvalidDuel {
        challenger: challenger.id.clone(),
        defender: defender.id.clone(),
        reason,
    };
    if challenger.id == defender.id {
        return Err(invalid("challenger and defender are the same artwork".into()));
    }
    if prompt_set.artwork_id != challenger.id {
        return Err(invalid(format!("prompt set belongs to `{}`", prompt_set.artwork_id)));
    }
    if prompt_set.prompts.len() != ctx.config.rounds as usize {
        return Err(invalid(format!(
            "prompt set has {} prompts, rounds = {}",
            prompt_set.prompts.len(),
            ctx.config.rounds
        )));
    }
    let template = compose_defender_template(defender);
    let play = || -> Result<DuelRecord, CallFailure> {
        let mut rounds = Vec::with_capacity(prompt_set.prompts.len());
        for (r, (content, &combo_id)) in prompt_set.prompts.iter().zip(&prompt_set.combo_ids).enumerate() {
            let round_index = r as u32 + 1;
            let prompt = compose_duel_prompt(content, &template);
            let seed = seed::round_seed(ctx.config.seed, &challenger.id, &defender.id, round_index);
            let images = ctx.generate(&prompt, seed, || {
                format!("duel ({}, {}) round {round_index}", challenger.id, defender.id)
            })?;
            let mut scores_c = Vec::with_capacity(images.len());
            let mut scores_d = Vec::with_capacity(images.len());
            for (k, img) in images.iter().enumerate() {
                let where_ = |role: &str| {
                    format!(
                        "duel ({}, {}) round {round_index} sample {k} vs {role}",
                        challenger.id, defender.id
                    )
                };
                scores_c.push(ctx.score(img, &challenger.id, || where_("challenger"))?);
                scores_d.push(ctx.score(img, &defender.id, || where_("defender"))?);
            }
            let prox_c = mean(&scores_c);
            let prox_d = mean(&scores_d);
            rounds.push(RoundOutcome {
                round_index,
                combo_id,
                prompt,
                seed,
                images,
                scores_c,
                scores_d,
                prox_c,
                prox_d,
                award: award_round(prox_c, prox_d, ctx.metric.orientation, ctx.config.delta),
            });
        }
        let (wins_c, wins_d, winner) = decide_match(rounds.iter().map(|r| r.award));
        Ok(DuelRecord {
            challenger_id: challenger.id.clone(),
            defender_id: defender.id.clone(),
            delta: ctx.config.delta,
            rounds,
            wins_c,
            wins_d,
            winner,
        })
    };
    match play() {
        Ok(d) => Ok(DuelOutcome::Completed(d)),
        Err(CallFailure::Fatal(e)) => Err(e),
        Err(CallFailure::Backend(e)) => {
            tracing::warn!(challenger = %challenger.id, defender = %defender.id, "duel aborted: {e}");
            Ok(DuelOutcome::Aborted {
                challenger_id: challenger.id.clone(),
                defender_id: defender.id.clone(),
                error: e.to_string(),
            })
        }
    }
}

/// Plays the duels for `pairs` on up to `jobs` threads. `on_complete` runs
/// on the calling thread, one outcome at a time, in completion order. The
/// returned outcomes are in `pairs` order regardless of schedule.
pub fn run_duels(
    pairs: &[(String, String)],
    catalog: &Catalog,
    prompt_sets: &BTreeMap<String, ChallengerPromptSet>,
    ctx: &ArenaContext<'_>,
    jobs: usize,
    on_complete: impl FnMut(usize, &DuelOutcome) -> Result<(), ArenaError>,
) -> Result<Vec<DuelOutcome>, ArenaError> {
    for (c, d) in pairs {
        for id in [c, d] {
            catalog.get(id).ok_or_else(|| ArenaError::UnknownArtwork(id.clone()))?;
        }
        if !prompt_sets.contains_key(c) {
            return Err(ArenaError::InvalidDuel {
                challenger: c.clone(),
                defender: d.clone(),
                reason: "no prompt set drawn for the challenger".into(),
            });
        }
    }
    dispatch(
        pairs.len(),
        jobs,
        |i| {
            let (c, d) = &pairs[i];
            run_duel(
                catalog.get(c).expect("checked"),
                catalog.get(d).expect("checked"),
                &prompt_sets[c],
                ctx,
            )
        },
        on_complete,
    )
}

/// Full ordered round robin over `fitset`.
pub fn run_round_robin(
    fitset: &FitSet,
    catalog: &Catalog,
    prompt_sets: &BTreeMap<String, ChallengerPromptSet>,
    ctx: &ArenaContext<'_>,
    jobs: usize,
) -> Result<Vec<DuelOutcome>, ArenaError> {
    if fitset.len() < 2 {
        return Err(ArenaError::FitSetTooSmall(fitset.len()));
    }
    run_duels(&fitset.ordered_pairs(), catalog, prompt_sets, ctx, jobs, |_, _| Ok(()))
}

/// Work-stealing map over `0..n` with at most `jobs` worker threads.
/// Results are returned in index order; `on_complete` is serialized on the
/// calling thread. The first error stops dispatch of further items.
pub fn dispatch<T: Send>(
    n: usize,
    jobs: usize,
    work: impl Fn(usize) -> Result<T, ArenaError> + Sync,
    mut on_complete: impl FnMut(usize, &T) -> Result<(), ArenaError>,
) -> Result<Vec<T>, ArenaError> {
    let jobs = jobs.clamp(1, n.max(1));
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    if jobs == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            let out = work(i)?;
            on_complete(i, &out)?;
            *slot = Some(out);
        }
        return Ok(slots.into_iter().map(Option::unwrap).collect());
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut first_err = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<T, ArenaError>)>();
        for _ in 0..jobs {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, work(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, res) in rx {
            if first_err.is_some() {
                continue;
            }
            match res.and_then(|out| on_complete(i, &out).map(|_| out)) {
                Ok(out) => slots[i] = Some(out),
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    first_err = Some(e);
                }
            }
        }
    });
    match first_err {
        Some(e) => Err(e),
        None => Ok(slots.into_iter().map(|s| s.expect("every item completed")).collect()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub rank: usize,
    pub artwork_id: String,
    pub challenger_wins: u32,
    pub defender_wins: u32,
    pub total_wins: u32,
    /// Shares both total and challenger wins with another row; ordered by
    /// catalog position only.
    pub tie_broken_by_catalog_order: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub metric: String,
    /// Rows in rank order.
    pub rows: Vec<LedgerRow>,
    pub decisive_matches: usize,
    pub drawn_matches: usize,
    /// Aborted duels, excluded from the tallies.
    pub aborted: Vec<(String, String)>,
    /// Ordered pairs with no outcome at all.
    pub missing: Vec<(String, String)>,
}

impl Ledger {
    pub fn row(&self, id: &str) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.artwork_id == id)
    }

    pub fn is_complete(&self) -> bool {
        self.aborted.is_empty() && self.missing.is_empty()
    }
}

/// Per-artwork tallies before ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct Tally {
    pub artwork_id: String,
    pub challenger_wins: u32,
    pub defender_wins: u32,
    pub order: usize,
}

/// Ranks by total wins, then challenger wins (both descending), then
/// `order` ascending.
pub fn rank_tallies(mut tallies: Vec<Tally>) -> Vec<LedgerRow> {
    let key = |t: &Tally| (t.challenger_wins + t.defender_wins, t.challenger_wins);
    tallies.sort_by(|a, b| key(b).cmp(&key(a)).then(a.order.cmp(&b.order)));
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    for t in &tallies {
        *counts.entry(key(t)).or_default() += 1;
    }
    tallies
        .iter()
        .enumerate()
        .map(|(i, t)| LedgerRow {
            rank: i + 1,
            artwork_id: t.artwork_id.clone(),
            challenger_wins: t.challenger_wins,
            defender_wins: t.defender_wins,
            total_wins: t.challenger_wins + t.defender_wins,
            tie_broken_by_catalog_order: counts[&key(t)] > 1,
        })
        .collect()
}

/// Tallies match wins (draws and aborted duels count for nobody) and ranks
/// the fit set. When a pair appears more than once the last outcome wins.
pub fn build_ledger(duels: &[DuelOutcome], fitset: &FitSet) -> Result<Ledger, ArenaError> {
    let mut latest: HashMap<(&str, &str), &DuelOutcome> = HashMap::new();
    for d in duels {
        let (c, def) = d.pair();
        if !fitset.contains(c) || !fitset.contains(def) || c == def {
            return Err(ArenaError::OutsideFitSet {
                challenger: c.to_string(),
                defender: def.to_string(),
            });
        }
        latest.insert((c, def), d);
    }
    let mut cw: HashMap<&str, u32> = HashMap::new();
    let mut dw: HashMap<&str, u32> = HashMap::new();
    let (mut decisive, mut drawn) = (0, 0);
    let mut aborted = Vec::new();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for (c, d) in fitset.ordered_pairs() {
        seen.insert((c.clone(), d.clone()));
        match latest.get(&(c.as_str(), d.as_str())) {
            None => missing.push((c, d)),
            Some(DuelOutcome::Aborted { .. }) => aborted.push((c, d)),
            Some(DuelOutcome::Completed(rec)) => match rec.winner {
                MatchWinner::Challenger => {
                    decisive += 1;
                    *cw.entry(fitset_id(fitset, &c)).or_default() += 1;
                }
                MatchWinner::Defender => {
                    decisive += 1;
                    *dw.entry(fitset_id(fitset, &d)).or_default() += 1;
                }
                MatchWinner::Draw => drawn += 1,
            },
        }
    }
    let tallies = fitset
        .members
        .iter()
        .map(|m| Tally {
            artwork_id: m.artwork_id.clone(),
            challenger_wins: cw.get(m.artwork_id.as_str()).copied().unwrap_or(0),
            defender_wins: dw.get(m.artwork_id.as_str()).copied().unwrap_or(0),
            order: m.catalog_index,
        })
        .collect();
    if !aborted.is_empty() || !missing.is_empty() {
        tracing::warn!(
            aborted = aborted.len(),
            missing = missing.len(),
            "ledger built from an incomplete round robin"
        );
    }
    Ok(Ledger {
        metric: fitset.metric.clone(),
        rows: rank_tallies(tallies),
        decisive_matches: decisive,
        drawn_matches: drawn,
        aborted,
        missing,
    })
}

fn fitset_id<'a>(fitset: &'a FitSet, id: &str) -> &'a str {
    fitset
        .members
        .iter()
        .find(|m| m.artwork_id == id)
        .map(|m| m.artwork_id.as_str())
        .expect("member")
}
