//! Synthetic tournaments and a brute-force re-evaluation of them.
//!
//! Shared by the core integration tests and the CLI acceptance suite.

#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use arena_core::arena::{
    admit, build_ledger, run_entry_trials, run_round_robin, ArenaContext, DuelOutcome, FitSet, Ledger, TrialRecord,
};
use arena_core::backend::{BackendError, Generator, ImageHandle, Proximity, RetryPolicy};
use arena_core::catalog::{ArtworkRecord, Catalog, MotifEntry};
use arena_core::config::{Admission, TournamentConfig};
use arena_core::metric::{MetricSpec, Orientation, ValidRange};
use arena_core::prompting::{draw_prompt_set, ChallengerPromptSet, DEFAULT_MAX_MOTIFS};
use rand::Rng;

/// `n` artworks with 3 to 5 motifs each. Every word is unique to its
/// artwork so no prompt can cue another one by accident.
pub fn synthetic_catalog(rng: &mut impl Rng, n: usize) -> Catalog {
    let records = (0..n)
        .map(|i| {
            let m = rng.gen_range(3..=5);
            ArtworkRecord {
                id: format!("art-{i}"),
                title: format!("Canvas{i} Study"),
                artist: format!("Painter{i} Surname{i}"),
                reference_image: format!("mock://art-{i}"),
                motifs: (0..m)
                    .map(|j| MotifEntry {
                        name: format!("thing{i}x{j}"),
                        description: format!("A thing{i}x{j} near the edge."),
                    })
                    .collect(),
            }
        })
        .collect();
    Catalog::new(records).expect("synthetic catalog is valid")
}

/// Scores come from a hash of (sample handle, reference): multiples of
/// 1/4 in [-1, 1], so exact ties are common. Images do not depend on the
/// seed, which lets the oracle recompute every score from prompts alone.
#[derive(Debug, Clone, Copy)]
pub struct TableBackend {
    pub salt: u64,
    pub negate: bool,
}

pub fn table_score(salt: u64, image: &str, reference: &str) -> f64 {
    let mut h = DefaultHasher::new();
    (salt, image, reference).hash(&mut h);
    ((h.finish() % 9) as f64 - 4.0) / 4.0
}

pub fn sample_handle(prompt: &str, i: u32) -> String {
    format!("{i}|{prompt}")
}

impl Generator for TableBackend {
    fn generate(&self, prompt: &str, k: u32, _seed: u64) -> Result<Vec<ImageHandle>, BackendError> {
        Ok((0..k).map(|i| sample_handle(prompt, i)).collect())
    }
}

impl Proximity for TableBackend {
    fn proximity(&self, image: &str, reference: &str, _metric: &str) -> Result<f64, BackendError> {
        let s = table_score(self.salt, image, reference);
        Ok(if self.negate { -s } else { s })
    }
}

pub fn semantics_like() -> MetricSpec {
    MetricSpec::new("semantics", Orientation::HigherIsCloser, ValidRange::new(-1.0, 1.0))
}

pub struct Engine {
    pub trials: Vec<TrialRecord>,
    pub fitset: FitSet,
    pub prompt_sets: BTreeMap<String, ChallengerPromptSet>,
    pub duels: Vec<DuelOutcome>,
    pub ledger: Ledger,
}

/// Runs trials, top-N admission of everything, prompt draws, the round
/// robin and the ledger, entirely in memory.
pub fn run_engine(
    catalog: &Catalog,
    config: &TournamentConfig,
    metric: MetricSpec,
    backend: &TableBackend,
    jobs: usize,
) -> Engine {
    let ctx = ArenaContext {
        config,
        metric: metric.clone(),
        backend,
        retry: RetryPolicy::none(),
    };
    let artworks: Vec<&ArtworkRecord> = catalog.records().iter().collect();
    let trials = run_entry_trials(&artworks, &ctx, jobs, |_, _| Ok(())).expect("trials");
    let fitset = admit(&trials, catalog, config.admission, &metric).expect("admission");
    let prompt_sets: BTreeMap<_, _> = fitset
        .ids()
        .map(|id| {
            let art = catalog.get(id).expect("member");
            let set = draw_prompt_set(art, config.rounds as usize, config.seed, DEFAULT_MAX_MOTIFS, None)
                .expect("prompt set");
            (id.to_string(), set)
        })
        .collect();
    let duels = run_round_robin(&fitset, catalog, &prompt_sets, &ctx, jobs).expect("round robin");
    let ledger = build_ledger(&duels, &fitset).expect("ledger");
    Engine {
        trials,
        fitset,
        prompt_sets,
        duels,
        ledger,
    }
}

pub fn random_config(rng: &mut impl Rng, n: usize) -> TournamentConfig {
    TournamentConfig {
        k: rng.gen_range(1..=3),
        rounds: rng.gen_range(1..=5),
        delta: [0.0, 0.0, 0.1, 0.25, 0.3][rng.gen_range(0..5)],
        seed: rng.gen_range(0..=i64::MAX as u64),
        admission: Admission::TopN(n),
        ..TournamentConfig::default()
    }
}

/// +1 when larger raw scores are closer, -1 otherwise.
pub fn sign(o: Orientation) -> f64 {
    match o {
        Orientation::HigherIsCloser => 1.0,
        Orientation::LowerIsCloser => -1.0,
    }
}

/// 1 challenger, -1 defender, 0 nobody.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDuel {
    pub prox_c: Vec<f64>,
    pub prox_d: Vec<f64>,
    pub awards: Vec<i8>,
    pub winner: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub fits: Vec<(String, f64)>,
    pub duels: BTreeMap<(String, String), OracleDuel>,
    /// (id, challenger wins, defender wins) in rank order.
    pub ranking: Vec<(String, u32, u32)>,
}

fn naive_mean(backend: &TableBackend, prompt: &str, k: u32, reference: &str) -> f64 {
    let mut total = 0.0;
    for i in 0..k {
        total += backend.proximity(&sample_handle(prompt, i), reference, "").unwrap();
    }
    total / k as f64
}

/// Brute-force re-evaluation of a whole tournament in which every artwork
/// is admitted. Prompt content comes from the engine's draws; everything
/// else is recomputed here.
pub fn oracle(
    catalog: &Catalog,
    config: &TournamentConfig,
    orientation: Orientation,
    backend: &TableBackend,
    prompt_sets: &BTreeMap<String, ChallengerPromptSet>,
) -> Oracle {
    let s = sign(orientation);
    let recs = catalog.records();
    let fits = recs
        .iter()
        .map(|a| {
            let prompt = format!("{} in the style of {}", a.title, a.artist);
            (a.id.clone(), naive_mean(backend, &prompt, config.k, &a.id))
        })
        .collect();
    let mut duels = BTreeMap::new();
    let mut cw = vec![0u32; recs.len()];
    let mut dw = vec![0u32; recs.len()];
    for (ci, c) in recs.iter().enumerate() {
        for (di, d) in recs.iter().enumerate() {
            if ci == di {
                continue;
            }
            let mut od = OracleDuel {
                prox_c: vec![],
                prox_d: vec![],
                awards: vec![],
                winner: 0,
            };
            for content in &prompt_sets[&c.id].prompts {
                let prompt = format!("{content}, {} in the style of {}", d.title, d.artist);
                let pc = naive_mean(backend, &prompt, config.k, &c.id);
                let pd = naive_mean(backend, &prompt, config.k, &d.id);
                let award = if s * pc - s * pd > config.delta {
                    1
                } else if s * pd - s * pc > config.delta {
                    -1
                } else {
                    0
                };
                od.prox_c.push(pc);
                od.prox_d.push(pd);
                od.awards.push(award);
            }
            let a = od.awards.iter().filter(|&&x| x == 1).count();
            let b = od.awards.iter().filter(|&&x| x == -1).count();
            od.winner = if a > b {
                cw[ci] += 1;
                1
            } else if b > a {
                dw[di] += 1;
                -1
            } else {
                0
            };
            duels.insert((c.id.clone(), d.id.clone()), od);
        }
    }
    let mut order: Vec<usize> = (0..recs.len()).collect();
    // Insertion sort on an explicit "ranks before" predicate.
    let before = |a: usize, b: usize| {
        let (ta, tb) = (cw[a] + dw[a], cw[b] + dw[b]);
        ta > tb || (ta == tb && (cw[a] > cw[b] || (cw[a] == cw[b] && a < b)))
    };
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && before(order[j], order[j - 1]) {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    Oracle {
        fits,
        duels,
        ranking: order.iter().map(|&i| (recs[i].id.clone(), cw[i], dw[i])).collect(),
    }
}

/// Distance in representable doubles.
pub fn ulps(a: f64, b: f64) -> u64 {
    let key = |x: f64| {
        let bits = x.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

/// Describes the first disagreement between engine and oracle, if any.
pub fn compare(engine: &Engine, oracle: &Oracle) -> Result<(), String> {
    for (t, (id, fit)) in engine.trials.iter().zip(&oracle.fits) {
        let r = t.result().ok_or("trial failed")?;
        if &r.artwork_id != id || ulps(r.fit, *fit) > 1 {
            return Err(format!("fit of {id}: engine {} oracle {fit}", r.fit));
        }
    }
    if engine.duels.len() != oracle.duels.len() {
        return Err(format!("{} duels vs {}", engine.duels.len(), oracle.duels.len()));
    }
    for d in &engine.duels {
        let rec = d.completed().ok_or("aborted duel")?;
        let key = (rec.challenger_id.clone(), rec.defender_id.clone());
        let od = oracle.duels.get(&key).ok_or(format!("unexpected pair {key:?}"))?;
        for (i, r) in rec.rounds.iter().enumerate() {
            if ulps(r.prox_c, od.prox_c[i]) > 1 || ulps(r.prox_d, od.prox_d[i]) > 1 {
                return Err(format!("{key:?} round {}: proximities differ", i + 1));
            }
            let award = match r.award {
                arena_core::arena::Award::Challenger => 1,
                arena_core::arena::Award::Defender => -1,
                arena_core::arena::Award::NoAward => 0,
            };
            if award != od.awards[i] {
                return Err(format!("{key:?} round {}: award {award} vs {}", i + 1, od.awards[i]));
            }
        }
        let winner = match rec.winner {
            arena_core::arena::MatchWinner::Challenger => 1,
            arena_core::arena::MatchWinner::Defender => -1,
            arena_core::arena::MatchWinner::Draw => 0,
        };
        if winner != od.winner {
            return Err(format!("{key:?}: winner {winner} vs {}", od.winner));
        }
    }
    let ranking: Vec<(String, u32, u32)> = engine
        .ledger
        .rows
        .iter()
        .map(|r| (r.artwork_id.clone(), r.challenger_wins, r.defender_wins))
        .collect();
    if ranking != oracle.ranking {
        return Err(format!("ranking {ranking:?} vs {:?}", oracle.ranking));
    }
    Ok(())
}
