//! Motif combinations, challenger prompt sets and defender templates.
//!
//! Combinations of an N-motif artwork are numbered `1..=2^N - 1`: ordered by
//! cardinality, then lexicographically by motif index tuple, with each
//! combination listing its motifs in the artwork's original order.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ArtworkRecord, MotifEntry};
use crate::seed;
use crate::text::contains_phrase;

/// Literal marker carried by every combination for later style injection.
pub const STYLE_INJECTION_SLOT: &str = "{{STYLE_OR_ARTIST_TO_BE_INJECTED_LATER}}";

/// Default guard against exponential blowup.
pub const DEFAULT_MAX_MOTIFS: usize = 20;

/// Whitespace-token budget for composed content prompts.
pub const MAX_PROMPT_TOKENS: usize = 70;

/// Joins challenger content and the defender template.
pub const DUEL_SEPARATOR: &str = ", ";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("artwork `{0}` has no motifs")]
    NoMotifs(String),
    #[error("artwork `{artwork}` has {count} motifs, above the cap of {cap}")]
    TooManyMotifs { artwork: String, count: usize, cap: usize },
    #[error("artwork `{artwork}` yields {available} motif combinations, fewer than the {requested} rounds requested")]
    InsufficientCombinations {
        artwork: String,
        available: u64,
        requested: usize,
    },
    #[error("blending manifest{}: {reason}", .origin.as_deref().map(|o| format!(" {o}")).unwrap_or_default())]
    InvalidBlending { origin: Option<String>, reason: String },
}

fn blending_err(reason: impl Into<String>) -> PromptError {
    PromptError::InvalidBlending {
        origin: None,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotifCombination {
    pub combo_id: u32,
    pub motif_names: Vec<String>,
    pub content_prompt: String,
    pub style_injection_slot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefenderTemplate {
    pub artwork_id: String,
    pub text: String,
}

/// The fixed R-prompt challenger set of one artwork.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengerPromptSet {
    pub artwork_id: String,
    pub combo_ids: Vec<u32>,
    pub prompts: Vec<String>,
    pub sampling_seed: u64,
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of non-empty subsets of `n` motifs.
pub fn combination_count(n: usize) -> u64 {
    (1u64 << n) - 1
}

/// All non-empty index subsets of `0..n` in combo-id order.
pub fn combination_indices(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(combination_count(n) as usize);
    for k in 1..=n {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            // advance to the next k-combination in lexicographic order
            let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

/// Index subset for a 1-based `combo_id`, without enumerating the others.
pub fn combination_at(n: usize, combo_id: u64) -> Option<Vec<usize>> {
    if combo_id == 0 || combo_id > combination_count(n) {
        return None;
    }
    let mut rank = combo_id - 1;
    let mut k = 1;
    while rank >= binomial(n, k) {
        rank -= binomial(n, k);
        k += 1;
    }
    // lexicographic unranking of the k-subset
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let remaining = k - slot - 1;
        let mut candidate = next;
        loop {
            let block = binomial(n - candidate - 1, remaining);
            if rank < block {
                break;
            }
            rank -= block;
            candidate += 1;
        }
        out.push(candidate);
        next = candidate + 1;
    }
    Some(out)
}

fn lower_initial(desc: &str) -> String {
    let mut chars = desc.chars();
    match (chars.next(), chars.next()) {
        (Some(first), second) if first.is_uppercase() && !second.is_some_and(char::is_uppercase) => {
            first.to_lowercase().chain(desc.chars().skip(1)).collect()
        }
        _ => desc.to_string(),
    }
}

/// Deterministic composer: `"A scene with <desc1>, <desc2>, ..."` clipped to
/// [`MAX_PROMPT_TOKENS`] whitespace tokens.
pub fn compose_content_prompt(motifs: &[&MotifEntry]) -> String {
    let parts: Vec<String> = motifs
        .iter()
        .map(|m| lower_initial(m.description.trim().trim_end_matches('.').trim_end()))
        .collect();
    let full = format!("A scene with {}", parts.join(", "));
    full.split_whitespace()
        .take(MAX_PROMPT_TOKENS)
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_motif_count(artwork: &str, n: usize, cap: usize) -> Result<(), PromptError> {
    if n == 0 {
        return Err(PromptError::NoMotifs(artwork.to_string()));
    }
    if n > cap || n > 63 {
        return Err(PromptError::TooManyMotifs {
            artwork: artwork.to_string(),
            count: n,
            cap,
        });
    }
    Ok(())
}

fn build_combination(motifs: &[MotifEntry], combo_id: u32, idx: &[usize]) -> MotifCombination {
    let chosen: Vec<&MotifEntry> = idx.iter().map(|&i| &motifs[i]).collect();
    MotifCombination {
        combo_id,
        motif_names: chosen.iter().map(|m| m.name.clone()).collect(),
        content_prompt: compose_content_prompt(&chosen),
        style_injection_slot: STYLE_INJECTION_SLOT.to_string(),
    }
}

/// Every non-empty motif combination, `2^N - 1` of them, in combo-id order.
pub fn enumerate_combinations(motifs: &[MotifEntry], max_motifs: usize) -> Result<Vec<MotifCombination>, PromptError> {
    check_motif_count("<anonymous>", motifs.len(), max_motifs)?;
    Ok(combination_indices(motifs.len())
        .iter()
        .enumerate()
        .map(|(i, idx)| build_combination(motifs, i as u32 + 1, idx))
        .collect())
}

/// `"<title> in the style of <artist>"`.
pub fn compose_defender_template(artwork: &ArtworkRecord) -> DefenderTemplate {
    DefenderTemplate {
        artwork_id: artwork.id.clone(),
        text: format!("{} in the style of {}", artwork.title, artwork.artist),
    }
}

/// Challenger content, the separator, then the defender template.
pub fn compose_duel_prompt(challenger_prompt: &str, defender: &DefenderTemplate) -> String {
    debug_assert!(!challenger_prompt.is_empty() && !defender.text.is_empty());
    format!("{challenger_prompt}{DUEL_SEPARATOR}{}", defender.text)
}

/// Sort key of `combo_id` under `sampling_seed`. Drawing R combinations
/// without replacement means taking the R smallest keys, in key order.
pub fn draw_key(sampling_seed: u64, combo_id: u64) -> (u64, u64) {
    (seed::derive(sampling_seed, &[combo_id]), combo_id)
}

fn select_smallest(sampling_seed: u64, total: u64, r: usize) -> Vec<u64> {
    let mut heap: BinaryHeap<(u64, u64)> = BinaryHeap::with_capacity(r + 1);
    for id in 1..=total {
        let key = draw_key(sampling_seed, id);
        if heap.len() < r {
            heap.push(key);
        } else if heap.peek().is_some_and(|top| key < *top) {
            heap.pop();
            heap.push(key);
        }
    }
    heap.into_sorted_vec().into_iter().map(|(_, id)| id).collect()
}

/// Draws the fixed R-prompt challenger set of `artwork`.
///
/// The sampling seed mixes the tournament seed with a stable hash of the
/// artwork id, so adding or reordering other artworks never changes this
/// draw. With a blending manifest the content prompts come from it;
/// otherwise the deterministic composer builds them.
pub fn draw_prompt_set(
    artwork: &ArtworkRecord,
    rounds: usize,
    tournament_seed: u64,
    max_motifs: usize,
    blending: Option<&BlendingManifest>,
) -> Result<ChallengerPromptSet, PromptError> {
    let n = artwork.motifs.len();
    check_motif_count(&artwork.id, n, max_motifs)?;
    let total = combination_count(n);
    if (rounds as u64) > total {
        return Err(PromptError::InsufficientCombinations {
            artwork: artwork.id.clone(),
            available: total,
            requested: rounds,
        });
    }
    let sampling_seed = seed::prompt_set_seed(tournament_seed, &artwork.id);
    let ids = select_smallest(sampling_seed, total, rounds);
    let lookup = blending.map(|b| b.prompts_by_combo(artwork)).transpose()?;
    let prompts = ids
        .iter()
        .map(|&id| {
            let idx = combination_at(n, id).expect("id within range");
            match &lookup {
                Some(map) => {
                    let names: Vec<&str> = idx.iter().map(|&i| artwork.motifs[i].name.as_str()).collect();
                    map[&names.join("\u{1f}")].clone()
                }
                None => build_combination(&artwork.motifs, id as u32, &idx).content_prompt,
            }
        })
        .collect();
    Ok(ChallengerPromptSet {
        artwork_id: artwork.id.clone(),
        combo_ids: ids.iter().map(|&id| id as u32).collect(),
        prompts,
        sampling_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendingItem {
    pub combo_id: u32,
    pub motifs: Vec<String>,
    pub content_prompt: String,
    pub style_injection_slot: String,
}

/// Pre-authored blending output for one artwork.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendingManifest {
    pub num_motifs: usize,
    pub expected_combinations: u64,
    pub items: Vec<BlendingItem>,
}

impl BlendingManifest {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let m: Self = serde_json::from_str(text).map_err(|e| blending_err(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let origin = Some(path.display().to_string());
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::InvalidBlending {
            origin: origin.clone(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text).map_err(|e| match e {
            PromptError::InvalidBlending { reason, .. } => PromptError::InvalidBlending { origin, reason },
            other => other,
        })
    }

    /// The motif vocabulary in original order, read off the single
    /// all-motif item.
    pub fn motif_order(&self) -> Option<&[String]> {
        self.items
            .iter()
            .find(|i| i.motifs.len() == self.num_motifs)
            .map(|i| i.motifs.as_slice())
    }

    /// Checks the blending output contract: count, contiguous ids,
    /// cardinality ordering, original motif order inside each item, and no
    /// repeated or merged combinations.
    pub fn validate(&self) -> Result<(), PromptError> {
        let n = self.num_motifs;
        if n == 0 || n > 63 {
            return Err(blending_err(format!("num_motifs {n} out of range")));
        }
        let expected = combination_count(n);
        if self.expected_combinations != expected {
            return Err(blending_err(format!(
                "expected_combinations is {} but 2^{n} - 1 = {expected}",
                self.expected_combinations
            )));
        }
        if self.items.len() as u64 != expected {
            return Err(blending_err(format!("{} items, expected {expected}", self.items.len())));
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.combo_id as usize != i + 1 {
                return Err(blending_err(format!(
                    "item {} has combo_id {}, expected {}",
                    i,
                    item.combo_id,
                    i + 1
                )));
            }
            if item.motifs.is_empty() || item.motifs.len() > n {
                return Err(blending_err(format!(
                    "combo {} lists {} motifs",
                    item.combo_id,
                    item.motifs.len()
                )));
            }
            if item.content_prompt.trim().is_empty() {
                return Err(blending_err(format!(
                    "combo {} has an empty content_prompt",
                    item.combo_id
                )));
            }
            if item.style_injection_slot.trim().is_empty() {
                return Err(blending_err(format!(
                    "combo {} has an empty style_injection_slot",
                    item.combo_id
                )));
            }
        }
        for pair in self.items.windows(2) {
            if pair[1].motifs.len() < pair[0].motifs.len() {
                return Err(blending_err(format!(
                    "combo {} has fewer motifs than combo {}: combinations must be sorted by increasing number of motifs",
                    pair[1].combo_id, pair[0].combo_id
                )));
            }
        }
        let order = self
            .motif_order()
            .ok_or_else(|| blending_err("no item lists all motifs"))?;
        let position: HashMap<&str, usize> = order.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        if position.len() != n {
            return Err(blending_err("the all-motif item repeats a motif"));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            let mut prev = None;
            for m in &item.motifs {
                let p = *position
                    .get(m.as_str())
                    .ok_or_else(|| blending_err(format!("combo {} names unknown motif `{m}`", item.combo_id)))?;
                if prev.is_some_and(|q| p <= q) {
                    return Err(blending_err(format!(
                        "combo {} does not preserve the original motif order",
                        item.combo_id
                    )));
                }
                prev = Some(p);
            }
            if !seen.insert(item.motifs.clone()) {
                return Err(blending_err(format!(
                    "combo {} repeats an earlier combination",
                    item.combo_id
                )));
            }
        }
        Ok(())
    }

    /// Validates against a catalog record: same motifs in the same order,
    /// and no content prompt naming the artwork's title or artist.
    pub fn validate_for(&self, artwork: &ArtworkRecord) -> Result<(), PromptError> {
        self.validate()?;
        let names: Vec<&str> = artwork.motifs.iter().map(|m| m.name.as_str()).collect();
        let order: Vec<&str> = self
            .motif_order()
            .unwrap_or_default()
            .iter()
            .map(String::as_str)
            .collect();
        if names != order {
            return Err(PromptError::InvalidBlending {
                origin: Some(artwork.id.clone()),
                reason: format!("motifs {order:?} do not match catalog motifs {names:?}"),
            });
        }
        for item in &self.items {
            for (what, phrase) in [("title", &artwork.title), ("artist", &artwork.artist)] {
                if contains_phrase(&item.content_prompt, phrase) {
                    return Err(PromptError::InvalidBlending {
                        origin: Some(artwork.id.clone()),
                        reason: format!("combo {} content_prompt names the artwork's {what}", item.combo_id),
                    });
                }
            }
        }
        Ok(())
    }

    fn prompts_by_combo(&self, artwork: &ArtworkRecord) -> Result<HashMap<String, String>, PromptError> {
        self.validate_for(artwork)?;
        Ok(self
            .items
            .iter()
            .map(|i| (i.motifs.join("\u{1f}"), i.content_prompt.clone()))
            .collect())
    }

    /// The combinations this manifest supplies, keyed by its own combo ids.
    pub fn combinations(&self) -> Vec<MotifCombination> {
        self.items
            .iter()
            .map(|i| MotifCombination {
                combo_id: i.combo_id,
                motif_names: i.motifs.clone(),
                content_prompt: i.content_prompt.clone(),
                style_injection_slot: i.style_injection_slot.clone(),
            })
            .collect()
    }

    /// Manifest in the blending schema for `motifs`, using the
    /// deterministic composer.
    pub fn from_motifs(motifs: &[MotifEntry], max_motifs: usize) -> Result<Self, PromptError> {
        let combos = enumerate_combinations(motifs, max_motifs)?;
        Ok(Self {
            num_motifs: motifs.len(),
            expected_combinations: combination_count(motifs.len()),
            items: combos
                .into_iter()
                .map(|c| BlendingItem {
                    combo_id: c.combo_id,
                    motifs: c.motif_names,
                    content_prompt: c.content_prompt,
                    style_injection_slot: c.style_injection_slot,
                })
                .collect(),
        })
    }
}
