//! Derived reports over completed trials and duels: imitation/duel
//! consistency, margin sensitivity, fit distribution and rank movement.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{decide_match, Award, DuelOutcome, FitSet, Ledger, MatchWinner};
use crate::metric::Orientation;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("delta grid is empty")]
    EmptyGrid,
    #[error("delta grid must be strictly ascending and non-negative, got {0:?}")]
    BadGrid(Vec<f64>),
    #[error("fit distribution needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("fit of `{0}` is not finite")]
    NonFinite(String),
    #[error("consistency matrix needs at least 2 artworks, got {0}")]
    TooFewArtworks(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellLabel {
    ChallengerAgree,
    DefenderAgree,
    Disagree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub challenger_id: String,
    pub defender_id: String,
    pub label: CellLabel,
    /// `None` when the duel is missing or aborted.
    pub duel_winner: Option<MatchWinner>,
    /// Both artworks have the same fit, so there is no imitation winner.
    pub fit_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyMatrix {
    pub metric: String,
    /// Imitation-rank order, best fit first.
    pub order: Vec<String>,
    /// Row-major over `order`, diagonal excluded: N(N-1) cells.
    pub cells: Vec<ConsistencyCell>,
    pub row_challenger_agree: Vec<usize>,
    pub row_defender_agree: Vec<usize>,
    pub col_challenger_agree: Vec<usize>,
    pub col_defender_agree: Vec<usize>,
    pub total_agree: usize,
    /// Policy declarations carried into every emitted report.
    pub draws_counted_as: CellLabel,
    pub fit_ties_counted_as: CellLabel,
}

impl ConsistencyMatrix {
    pub fn cell(&self, challenger: &str, defender: &str) -> Option<&ConsistencyCell> {
        self.cells
            .iter()
            .find(|c| c.challenger_id == challenger && c.defender_id == defender)
    }

    pub fn fit_ties(&self) -> usize {
        self.cells.iter().filter(|c| c.fit_tie).count()
    }
}

/// Labels every ordered pair by whether the strictly better fit also won
/// the duel. Draws, fit ties and missing duels are `Disagree`.
pub fn build_consistency_matrix(
    fitset: &FitSet,
    orientation: Orientation,
    duels: &[DuelOutcome],
) -> Result<ConsistencyMatrix, AnalysisError> {
    let n = fitset.len();
    if n < 2 {
        return Err(AnalysisError::TooFewArtworks(n));
    }
    let mut members = fitset.members.clone();
    for m in &members {
        if !m.fit.is_finite() {
            return Err(AnalysisError::NonFinite(m.artwork_id.clone()));
        }
    }
    members.sort_by(|a, b| {
        orientation
            .closeness(b.fit)
            .total_cmp(&orientation.closeness(a.fit))
            .then(a.catalog_index.cmp(&b.catalog_index))
    });
    let winners: HashMap<(&str, &str), MatchWinner> = duels
        .iter()
        .filter_map(DuelOutcome::completed)
        .map(|d| ((d.challenger_id.as_str(), d.defender_id.as_str()), d.winner))
        .collect();
    let mut cells = Vec::with_capacity(n * (n - 1));
    let mut row_ca = vec![0; n];
    let mut row_da = vec![0; n];
    let mut col_ca = vec![0; n];
    let mut col_da = vec![0; n];
    for (i, c) in members.iter().enumerate() {
        for (j, d) in members.iter().enumerate() {
            if i == j {
                continue;
            }
            let fc = orientation.closeness(c.fit);
            let fd = orientation.closeness(d.fit);
            let winner = winners.get(&(c.artwork_id.as_str(), d.artwork_id.as_str())).copied();
            let label = match winner {
                Some(MatchWinner::Challenger) if fc > fd => CellLabel::ChallengerAgree,
                Some(MatchWinner::Defender) if fd > fc => CellLabel::DefenderAgree,
                _ => CellLabel::Disagree,
            };
            match label {
                CellLabel::ChallengerAgree => {
                    row_ca[i] += 1;
                    col_ca[j] += 1;
                }
                CellLabel::DefenderAgree => {
                    row_da[i] += 1;
                    col_da[j] += 1;
                }
                CellLabel::Disagree => {}
            }
            cells.push(ConsistencyCell {
                challenger_id: c.artwork_id.clone(),
                defender_id: d.artwork_id.clone(),
                label,
                duel_winner: winner,
                fit_tie: fc == fd,
            });
        }
    }
    let total_agree = cells.iter().filter(|c| c.label != CellLabel::Disagree).count();
    Ok(ConsistencyMatrix {
        metric: fitset.metric.clone(),
        order: members.into_iter().map(|m| m.artwork_id).collect(),
        cells,
        row_challenger_agree: row_ca,
        row_defender_agree: row_da,
        col_challenger_agree: col_ca,
        col_defender_agree: col_da,
        total_agree,
        draws_counted_as: CellLabel::Disagree,
        fit_ties_counted_as: CellLabel::Disagree,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub delta: f64,
    /// Artworks with at least one round awarded as challenger.
    pub challenger_count: usize,
    /// Artworks with at least one round awarded as defender.
    pub defender_count: usize,
    /// Artworks with at least one match won as challenger.
    pub challenger_match_count: usize,
    /// Artworks with at least one match won as defender.
    pub defender_match_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub metric: String,
    pub points: Vec<SensitivityPoint>,
}

pub fn check_grid(grid: &[f64]) -> Result<(), AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let ok = grid.iter().all(|d| d.is_finite() && *d >= 0.0) && grid.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(AnalysisError::BadGrid(grid.to_vec()))
    }
}

/// Re-decides every stored round and match at each margin in `grid`.
/// Aborted duels contribute nothing.
pub fn sweep_delta(
    metric: &str,
    orientation: Orientation,
    duels: &[DuelOutcome],
    grid: &[f64],
) -> Result<SensitivityCurve, AnalysisError> {
    check_grid(grid)?;
    let completed: Vec<_> = duels.iter().filter_map(DuelOutcome::completed).collect();
    let points = grid
        .iter()
        .map(|&delta| {
            let mut rc = BTreeSet::new();
            let mut rd = BTreeSet::new();
            let mut mc = BTreeSet::new();
            let mut md = BTreeSet::new();
            for duel in &completed {
                let awards = duel.redecide(orientation, delta);
                if awards.contains(&Award::Challenger) {
                    rc.insert(duel.challenger_id.as_str());
                }
                if awards.contains(&Award::Defender) {
                    rd.insert(duel.defender_id.as_str());
                }
                match decide_match(awards).2 {
                    MatchWinner::Challenger => {
                        mc.insert(duel.challenger_id.as_str());
                    }
                    MatchWinner::Defender => {
                        md.insert(duel.defender_id.as_str());
                    }
                    MatchWinner::Draw => {}
                }
            }
            SensitivityPoint {
                delta,
                challenger_count: rc.len(),
                defender_count: rd.len(),
                challenger_match_count: mc.len(),
                defender_match_count: md.len(),
            }
        })
        .collect();
    Ok(SensitivityCurve {
        metric: metric.to_string(),
        points,
    })
}

/// True when re-deciding every completed duel at its own stored margin
/// reproduces the stored awards and winners.
pub fn replays_stored_awards(orientation: Orientation, duels: &[DuelOutcome]) -> bool {
    duels.iter().filter_map(DuelOutcome::completed).all(|d| {
        let awards = d.redecide(orientation, d.delta);
        let stored: Vec<Award> = d.rounds.iter().map(|r| r.award).collect();
        awards == stored && decide_match(awards) == (d.wins_c, d.wins_d, d.winner)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDistributionStats {
    pub metric: String,
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<String>,
}

/// Quantile of sorted data by linear interpolation between closest ranks
/// (position `p * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boxplot statistics of `(artwork id, fit)` points with Tukey fences.
pub fn fit_distribution(metric: &str, fits: &[(String, f64)]) -> Result<FitDistributionStats, AnalysisError> {
    if fits.len() < 4 {
        return Err(AnalysisError::TooFewPoints(fits.len()));
    }
    if let Some((id, _)) = fits.iter().find(|(_, f)| !f.is_finite()) {
        return Err(AnalysisError::NonFinite(id.clone()));
    }
    let mut sorted: Vec<f64> = fits.iter().map(|(_, f)| *f).collect();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let lower_fence = q1 - 1.5 * iqr;
    let upper_fence = q3 + 1.5 * iqr;
    let inside = |f: f64| f >= lower_fence && f <= upper_fence;
    let mut outliers: Vec<(String, f64)> = fits.iter().filter(|(_, f)| !inside(*f)).cloned().collect();
    outliers.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let kept = sorted.iter().copied().filter(|f| inside(*f));
    let (whisker_low, whisker_high) =
        kept.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f), hi.max(f)));
    Ok(FitDistributionStats {
        metric: metric.to_string(),
        count: fits.len(),
        q1,
        median,
        q3,
        iqr,
        lower_fence,
        upper_fence,
        whisker_low,
        whisker_high,
        outliers: outliers.into_iter().map(|(id, _)| id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDeltaRow {
    pub artwork_id: String,
    pub rank_before: usize,
    pub rank_after: usize,
    /// `rank_before - rank_after`; positive means moved toward rank 1.
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDeltaReport {
    /// In `after` rank order.
    pub rows: Vec<RankDeltaRow>,
    pub only_before: Vec<String>,
    pub only_after: Vec<String>,
}

impl RankDeltaReport {
    pub fn delta_sum(&self) -> i64 {
        self.rows.iter().map(|r| r.delta).sum()
    }

    pub fn get(&self, id: &str) -> Option<&RankDeltaRow> {
        self.rows.iter().find(|r| r.artwork_id == id)
    }
}

pub fn rank_deltas(before: &Ledger, after: &Ledger) -> RankDeltaReport {
    let before_rank: HashMap<&str, usize> = before.rows.iter().map(|r| (r.artwork_id.as_str(), r.rank)).collect();
    let after_ids: BTreeSet<&str> = after.rows.iter().map(|r| r.artwork_id.as_str()).collect();
    let rows = after
        .rows
        .iter()
        .filter_map(|r| {
            before_rank.get(r.artwork_id.as_str()).map(|&rb| RankDeltaRow {
                artwork_id: r.artwork_id.clone(),
                rank_before: rb,
                rank_after: r.rank,
                delta: rb as i64 - r.rank as i64,
            })
        })
        .collect();
    RankDeltaReport {
        rows,
        only_before: before
            .rows
            .iter()
            .filter(|r| !after_ids.contains(r.artwork_id.as_str()))
            .map(|r| r.artwork_id.clone())
            .collect(),
        only_after: after
            .rows
            .iter()
            .filter(|r| !before_rank.contains_key(r.artwork_id.as_str()))
            .map(|r| r.artwork_id.clone())
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arena::{award_round, DuelRecord, FitMember, LedgerRow, RoundOutcome};
    use crate::config::Admission;

    fn fitset(fits: &[(&str, f64)]) -> FitSet {
        FitSet {
            metric: "semantics".into(),
            admission: Admission::TopN(fits.len()),
            members: fits
                .iter()
                .enumerate()
                .map(|(i, (id, f))| FitMember {
                    artwork_id: id.to_string(),
                    fit: *f,
                    catalog_index: i,
                })
                .collect(),
        }
    }

    fn duel(c: &str, d: &str, rounds: &[(f64, f64)]) -> DuelOutcome {
        let hi = Orientation::HigherIsCloser;
        let rounds: Vec<RoundOutcome> = rounds
            .iter()
            .enumerate()
            .map(|(i, &(pc, pd))| RoundOutcome {
                round_index: i as u32 + 1,
                combo_id: i as u32,
                prompt: String::new(),
                seed: 0,
                images: vec![],
                scores_c: vec![pc],
                scores_d: vec![pd],
                prox_c: pc,
                prox_d: pd,
                award: award_round(pc, pd, hi, 0.0),
            })
            .collect();
        let (wins_c, wins_d, winner) = decide_match(rounds.iter().map(|r| r.award));
        DuelOutcome::Completed(DuelRecord {
            challenger_id: c.into(),
            defender_id: d.into(),
            delta: 0.0,
            rounds,
            wins_c,
            wins_d,
            winner,
        })
    }

    #[test]
    fn perfect_consistency() {
        let fs = fitset(&[("a", 0.9), ("b", 0.6), ("c", 0.3)]);
        let fit: HashMap<_, _> = fs.members.iter().map(|m| (m.artwork_id.clone(), m.fit)).collect();
        let duels: Vec<_> = fs
            .ordered_pairs()
            .iter()
            .map(|(c, d)| {
                if fit[c] > fit[d] {
                    duel(c, d, &[(0.9, 0.1)])
                } else {
                    duel(c, d, &[(0.1, 0.9)])
                }
            })
            .collect();
        let m = build_consistency_matrix(&fs, Orientation::HigherIsCloser, &duels).unwrap();
        assert_eq!(m.cells.len(), 6);
        assert_eq!(m.total_agree, 6);
        assert_eq!(m.row_challenger_agree, vec![2, 1, 0]);
        assert_eq!(m.col_defender_agree, vec![2, 1, 0]);
        assert_eq!(m.row_defender_agree, vec![0, 1, 2]);
    }

    #[test]
    fn draws_never_agree() {
        let fs = fitset(&[("a", 0.9), ("b", 0.6), ("c", 0.3)]);
        let duels: Vec<_> = fs
            .ordered_pairs()
            .iter()
            .map(|(c, d)| duel(c, d, &[(0.5, 0.5)]))
            .collect();
        let m = build_consistency_matrix(&fs, Orientation::HigherIsCloser, &duels).unwrap();
        assert_eq!(m.total_agree, 0);
        assert!(m.cells.iter().all(|c| c.label == CellLabel::Disagree));
    }

    #[test]
    fn fit_ties_flagged_disagree() {
        let fs = fitset(&[("a", 0.5), ("b", 0.5)]);
        let duels = vec![duel("a", "b", &[(0.9, 0.1)]), duel("b", "a", &[(0.1, 0.9)])];
        let m = build_consistency_matrix(&fs, Orientation::HigherIsCloser, &duels).unwrap();
        assert_eq!(m.total_agree, 0);
        assert_eq!(m.fit_ties(), 2);
    }

    #[test]
    fn matrix_order_follows_orientation() {
        let fs = fitset(&[("a", 0.9), ("b", 0.1), ("c", 0.5)]);
        let m = build_consistency_matrix(&fs, Orientation::LowerIsCloser, &[]).unwrap();
        assert_eq!(m.order, ["b", "c", "a"]);
    }

    #[test]
    fn sweep_large_delta_zero() {
        let duels = vec![duel("a", "b", &[(0.9, 0.1), (0.2, 0.3)]), duel("b", "a", &[(0.4, 0.6)])];
        let c = sweep_delta("semantics", Orientation::HigherIsCloser, &duels, &[0.0, 10.0]).unwrap();
        assert_eq!(c.points[0].challenger_count, 1);
        assert_eq!(c.points[0].defender_count, 2);
        assert_eq!(c.points[0].challenger_match_count, 0);
        assert_eq!(c.points[0].defender_match_count, 1);
        assert_eq!((c.points[1].challenger_count, c.points[1].defender_count), (0, 0));
        assert!(replays_stored_awards(Orientation::HigherIsCloser, &duels));
    }

    #[test]
    fn bad_grids_rejected() {
        let hi = Orientation::HigherIsCloser;
        assert_eq!(sweep_delta("m", hi, &[], &[]), Err(AnalysisError::EmptyGrid));
        assert!(sweep_delta("m", hi, &[], &[0.1, 0.0]).is_err());
        assert!(sweep_delta("m", hi, &[], &[-0.1, 0.0]).is_err());
        assert!(sweep_delta("m", hi, &[], &[0.1, 0.1]).is_err());
    }

    fn pts(v: &[f64]) -> Vec<(String, f64)> {
        v.iter().enumerate().map(|(i, f)| (format!("w{i}"), *f)).collect()
    }

    #[test]
    fn even_count_median() {
        let s = fit_distribution("m", &pts(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!((s.q1, s.q3), (1.75, 3.25));
    }

    #[test]
    fn degenerate_spread() {
        let s = fit_distribution("m", &pts(&[0.7; 6])).unwrap();
        assert_eq!(s.iqr, 0.0);
        assert!(s.outliers.is_empty());
        assert_eq!((s.whisker_low, s.whisker_high), (0.7, 0.7));
    }

    #[test]
    fn outliers_and_whiskers() {
        let s = fit_distribution("m", &pts(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0])).unwrap();
        assert_eq!(s.outliers, ["w5"]);
        assert_eq!(s.whisker_high, 5.0);
        assert_eq!(s.whisker_low, 1.0);
        assert!(matches!(
            fit_distribution("m", &pts(&[1.0, 2.0, 3.0])),
            Err(AnalysisError::TooFewPoints(3))
        ));
    }

    fn ledger(ids: &[&str]) -> Ledger {
        Ledger {
            metric: "fidelity".into(),
            rows: ids
                .iter()
                .enumerate()
                .map(|(i, id)| LedgerRow {
                    rank: i + 1,
                    artwork_id: id.to_string(),
                    challenger_wins: 0,
                    defender_wins: 0,
                    total_wins: 0,
                    tie_broken_by_catalog_order: false,
                })
                .collect(),
            decisive_matches: 0,
            drawn_matches: 0,
            aborted: vec![],
            missing: vec![],
        }
    }

    #[test]
    fn rank_movement() {
        let r = rank_deltas(&ledger(&["a", "b", "c"]), &ledger(&["c", "a", "b"]));
        assert_eq!(r.get("c").unwrap().delta, 2);
        assert_eq!(r.get("a").unwrap().delta, -1);
        assert_eq!(r.delta_sum(), 0);
        let same = rank_deltas(&ledger(&["a", "b"]), &ledger(&["a", "b"]));
        assert!(same.rows.iter().all(|r| r.delta == 0));
    }

    #[test]
    fn rank_mismatches_reported() {
        let r = rank_deltas(&ledger(&["a", "b"]), &ledger(&["b", "z"]));
        assert_eq!(r.only_before, ["a"]);
        assert_eq!(r.only_after, ["z"]);
        assert_eq!(r.rows.len(), 1);
    }
}
