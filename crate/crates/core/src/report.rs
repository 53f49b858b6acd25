//! Report emitters: CSV tables, pretty JSON and aligned text.
//!
//! CSV floats use the shortest representation that round-trips; text
//! tables round to four decimals.

use std::fmt::Write as _;

use serde::Serialize;

use crate::analysis::{CellLabel, ConsistencyMatrix, FitDistributionStats, RankDeltaReport, SensitivityCurve};
use crate::arena::{FitSet, Ledger, MatchWinner, TrialRecord};
use crate::catalog::Catalog;

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn csv_table(headers: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(headers).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn numeric(cell: &str) -> bool {
    let core = cell.trim_end_matches(['*', '!']).trim_start_matches(['▲', '▼', '+']);
    core == "-" || core.parse::<f64>().is_ok()
}

/// Right-aligns columns whose cells are all numeric; left-aligns the rest.
pub fn text_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    let mut right = vec![!rows.is_empty(); headers.len()];
    for r in rows {
        for (i, cell) in r.iter().enumerate().take(headers.len()) {
            widths[i] = widths[i].max(cell.chars().count());
            right[i] &= numeric(cell);
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if right[i] {
                write!(s, "{c:>w$}").unwrap();
            } else {
                write!(s, "{c:<w$}").unwrap();
            }
        }
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    };
    let mut out = line(headers.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn title_of<'a>(catalog: &'a Catalog, id: &str) -> &'a str {
    catalog.get(id).map(|r| r.title.as_str()).unwrap_or("")
}

pub fn ledger_csv(ledger: &Ledger, catalog: &Catalog) -> String {
    csv_table(
        &[
            "rank",
            "artwork_id",
            "title",
            "challenger_wins",
            "defender_wins",
            "total_wins",
            "tie_broken_by_catalog_order",
        ],
        ledger.rows.iter().map(|r| {
            vec![
                r.rank.to_string(),
                r.artwork_id.clone(),
                title_of(catalog, &r.artwork_id).to_string(),
                r.challenger_wins.to_string(),
                r.defender_wins.to_string(),
                r.total_wins.to_string(),
                r.tie_broken_by_catalog_order.to_string(),
            ]
        }),
    )
}

pub fn ledger_text(ledger: &Ledger, catalog: &Catalog) -> String {
    let rows: Vec<Vec<String>> = ledger
        .rows
        .iter()
        .map(|r| {
            let mark = if r.tie_broken_by_catalog_order { "*" } else { "" };
            vec![
                format!("{}{mark}", r.rank),
                title_of(catalog, &r.artwork_id).to_string(),
                r.challenger_wins.to_string(),
                r.defender_wins.to_string(),
                r.total_wins.to_string(),
            ]
        })
        .collect();
    let mut out = format!("Influence ledger ({})\n\n", ledger.metric);
    out.push_str(&text_table(
        &["rank", "artwork", "challenger", "defender", "total"],
        &rows,
    ));
    writeln!(
        out,
        "\n{} decisive matches, {} draws, {} aborted, {} missing",
        ledger.decisive_matches,
        ledger.drawn_matches,
        ledger.aborted.len(),
        ledger.missing.len()
    )
    .unwrap();
    if ledger.rows.iter().any(|r| r.tie_broken_by_catalog_order) {
        out.push_str("* equal total and challenger wins; ordered by catalog position\n");
    }
    out
}

pub fn fitset_csv(fitset: &FitSet) -> String {
    csv_table(
        &["position", "artwork_id", "fit"],
        fitset
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| vec![(i + 1).to_string(), m.artwork_id.clone(), m.fit.to_string()]),
    )
}

pub fn trials_csv(trials: &[TrialRecord]) -> String {
    csv_table(
        &["artwork_id", "status", "fit", "sample_scores", "error"],
        trials.iter().map(|t| match t {
            TrialRecord::Ok(r) => vec![
                r.artwork_id.clone(),
                "ok".into(),
                r.fit.to_string(),
                r.sample_scores.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                String::new(),
            ],
            TrialRecord::Failed { artwork_id, error, .. } => {
                vec![
                    artwork_id.clone(),
                    "failed".into(),
                    String::new(),
                    String::new(),
                    error.clone(),
                ]
            }
        }),
    )
}

fn label_code(l: CellLabel) -> &'static str {
    match l {
        CellLabel::ChallengerAgree => "C",
        CellLabel::DefenderAgree => "D",
        CellLabel::Disagree => "x",
    }
}

fn winner_name(w: Option<MatchWinner>) -> &'static str {
    match w {
        Some(MatchWinner::Challenger) => "challenger",
        Some(MatchWinner::Defender) => "defender",
        Some(MatchWinner::Draw) => "draw",
        None => "none",
    }
}

/// One row per ordered pair.
pub fn consistency_csv(m: &ConsistencyMatrix) -> String {
    csv_table(
        &["challenger_id", "defender_id", "label", "duel_winner", "fit_tie"],
        m.cells.iter().map(|c| {
            vec![
                c.challenger_id.clone(),
                c.defender_id.clone(),
                serde_json::to_value(c.label).unwrap().as_str().unwrap().to_string(),
                winner_name(c.duel_winner).to_string(),
                c.fit_tie.to_string(),
            ]
        }),
    )
}

/// Per-artwork agreement counts in imitation-rank order.
pub fn consistency_summary_csv(m: &ConsistencyMatrix) -> String {
    csv_table(
        &[
            "imitation_rank",
            "artwork_id",
            "row_challenger_agree",
            "row_defender_agree",
            "col_challenger_agree",
            "col_defender_agree",
        ],
        m.order.iter().enumerate().map(|(i, id)| {
            vec![
                (i + 1).to_string(),
                id.clone(),
                m.row_challenger_agree[i].to_string(),
                m.row_defender_agree[i].to_string(),
                m.col_challenger_agree[i].to_string(),
                m.col_defender_agree[i].to_string(),
            ]
        }),
    )
}

/// Grid with rows as challengers and columns as defenders, both labeled
/// `A1..AN` in imitation-rank order.
pub fn consistency_text(m: &ConsistencyMatrix, catalog: &Catalog) -> String {
    let n = m.order.len();
    let mut headers: Vec<String> = vec![String::new()];
    headers.extend((1..=n).map(|i| format!("A{i}")));
    headers.push("row".into());
    let mut rows = Vec::with_capacity(n + 1);
    let mut cells = m.cells.iter();
    for i in 0..n {
        let mut r = vec![format!("A{}", i + 1)];
        for j in 0..n {
            if i == j {
                r.push("-".into());
            } else {
                let c = cells.next().expect("n(n-1) cells");
                r.push(format!("{}{}", label_code(c.label), if c.fit_tie { "!" } else { "" }));
            }
        }
        r.push((m.row_challenger_agree[i] + m.row_defender_agree[i]).to_string());
        rows.push(r);
    }
    let mut col = vec!["col".to_string()];
    col.extend((0..n).map(|j| (m.col_challenger_agree[j] + m.col_defender_agree[j]).to_string()));
    col.push(m.total_agree.to_string());
    rows.push(col);
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut out = format!("Imitation / duel consistency ({})\n\n", m.metric);
    out.push_str(&text_table(&header_refs, &rows));
    writeln!(
        out,
        "\nC challenger agrees, D defender agrees, x disagree (draws and fit ties count as disagree), ! fit tie\ntotal agreement {} of {}\n",
        m.total_agree,
        m.cells.len()
    )
    .unwrap();
    for (i, id) in m.order.iter().enumerate() {
        writeln!(out, "A{:<3} {}", i + 1, title_of(catalog, id)).unwrap();
    }
    out
}

pub fn sensitivity_csv(curve: &SensitivityCurve) -> String {
    csv_table(
        &[
            "delta",
            "challenger_count",
            "defender_count",
            "challenger_match_count",
            "defender_match_count",
        ],
        curve.points.iter().map(|p| {
            vec![
                p.delta.to_string(),
                p.challenger_count.to_string(),
                p.defender_count.to_string(),
                p.challenger_match_count.to_string(),
                p.defender_match_count.to_string(),
            ]
        }),
    )
}

pub fn fit_distribution_text(s: &FitDistributionStats) -> String {
    let f = |x: f64| format!("{x:.4}");
    let rows = vec![
        vec!["count".into(), s.count.to_string()],
        vec!["q1".into(), f(s.q1)],
        vec!["median".into(), f(s.median)],
        vec!["q3".into(), f(s.q3)],
        vec!["iqr".into(), f(s.iqr)],
        vec!["whisker_low".into(), f(s.whisker_low)],
        vec!["whisker_high".into(), f(s.whisker_high)],
        vec![
            "outliers".into(),
            if s.outliers.is_empty() {
                "none".into()
            } else {
                s.outliers.join(", ")
            },
        ],
    ];
    let mut out = format!("Fit distribution ({})\n\n", s.metric);
    out.push_str(&text_table(&["statistic", "value"], &rows));
    out
}

pub fn rank_delta_csv(r: &RankDeltaReport) -> String {
    csv_table(
        &["artwork_id", "rank_before", "rank_after", "delta"],
        r.rows.iter().map(|row| {
            vec![
                row.artwork_id.clone(),
                row.rank_before.to_string(),
                row.rank_after.to_string(),
                row.delta.to_string(),
            ]
        }),
    )
}

/// `▲n` for improvements, `▼n` for declines, `0` for no movement.
pub fn delta_marker(delta: i64) -> String {
    match delta.signum() {
        1 => format!("▲+{delta}"),
        -1 => format!("▼{delta}"),
        _ => "0".into(),
    }
}

pub fn rank_delta_text(r: &RankDeltaReport, catalog: Option<&Catalog>) -> String {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            let name = catalog.map(|c| title_of(c, &row.artwork_id)).filter(|t| !t.is_empty());
            vec![
                name.unwrap_or(&row.artwork_id).to_string(),
                row.rank_before.to_string(),
                row.rank_after.to_string(),
                delta_marker(row.delta),
            ]
        })
        .collect();
    let mut out = text_table(&["artwork", "before", "after", "change"], &rows);
    for (label, ids) in [("only before", &r.only_before), ("only after", &r.only_after)] {
        if !ids.is_empty() {
            writeln!(out, "{label}: {}", ids.join(", ")).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers() {
        assert_eq!(delta_marker(17), "▲+17");
        assert_eq!(delta_marker(-3), "▼-3");
        assert_eq!(delta_marker(0), "0");
    }

    #[test]
    fn aligned_table() {
        let t = text_table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\n---  --\nxyz   1\n");
        let t = text_table(
            &["n", "x"],
            &[vec!["10*".into(), "ab".into()], vec!["2".into(), "c".into()]],
        );
        assert_eq!(t, "  n  x\n---  --\n10*  ab\n  2  c\n");
    }

    #[test]
    fn csv_quotes_commas() {
        let s = csv_table(&["t"], [vec!["Wheat Field, Auvers".to_string()]]);
        assert_eq!(s, "t\n\"Wheat Field, Auvers\"\n");
    }
}
