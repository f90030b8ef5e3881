//! Counterfactual synthesis by text matching.
//!
//! A treated paper's no-treatment outcome is estimated as the
//! similarity-weighted mean outcome of its closest same-year controls:
//! `y_hat = sum_i (m_i / sum_j m_j) * y_i` over the retained matches, or 0
//! when nothing clears the similarity threshold.

use serde::Serialize;

use crate::error::{Error, Result};

pub const PCI_SCHEMA_VERSION: u32 = 1;

/// Outcome transform: `log10(1 + citations)`. The shift keeps uncited
/// papers defined and preserves ordering.
pub fn outcome(citation_count: u64) -> f64 {
    (1.0 + citation_count as f64).log10()
}

/// Signed variant for callers holding unchecked integers.
pub fn outcome_checked(citation_count: i64) -> Result<f64> {
    u64::try_from(citation_count)
        .map(outcome)
        .map_err(|_| Error::contract("citation count must be non-negative"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchEntry {
    pub candidate_id: String,
    pub similarity: f64,
    pub weight: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchSet {
    pub treated_id: String,
    pub threshold: f64,
    pub max_matches: usize,
    pub entries: Vec<MatchEntry>,
    pub empty: bool,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A scored control candidate going into the rerank.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub candidate_id: String,
    /// `None` when the candidate has no embedding.
    pub similarity: Option<f64>,
    pub outcome: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RerankStats {
    pub missing_embedding: usize,
    pub below_threshold: usize,
    pub beyond_max_matches: usize,
}

/// Keeps candidates with similarity at or above `threshold` (and strictly
/// positive, so weights stay a convex combination), best `max_matches`
/// first, ties by ascending id, and normalizes their weights.
pub fn rerank(
    treated_id: &str,
    candidates: impl IntoIterator<Item = Scored>,
    threshold: f64,
    max_matches: usize,
) -> (MatchSet, RerankStats) {
    let mut stats = RerankStats::default();
    let mut kept: Vec<(String, f64, f64)> = Vec::new();
    for c in candidates {
        if c.candidate_id == treated_id {
            continue;
        }
        match c.similarity {
            None => stats.missing_embedding += 1,
            Some(m) if m >= threshold && m > 0.0 => kept.push((c.candidate_id, m, c.outcome)),
            Some(_) => stats.below_threshold += 1,
        }
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if kept.len() > max_matches {
        stats.beyond_max_matches = kept.len() - max_matches;
        kept.truncate(max_matches);
    }
    let total: f64 = kept.iter().map(|k| k.1).sum();
    let entries: Vec<MatchEntry> = kept
        .into_iter()
        .map(|(candidate_id, similarity, outcome)| MatchEntry {
            candidate_id,
            similarity,
            weight: similarity / total,
            outcome,
        })
        .collect();
    let set = MatchSet {
        treated_id: treated_id.to_owned(),
        threshold,
        max_matches,
        empty: entries.is_empty(),
        entries,
    };
    (set, stats)
}

/// `sum_i w_i * y_i`, or 0 for an empty set. Clamped to the observed outcome
/// range, which the exact value always lies in.
pub fn synthesize_counterfactual(set: &MatchSet) -> f64 {
    if set.entries.is_empty() {
        return 0.0;
    }
    let value: f64 = set.entries.iter().map(|e| e.weight * e.outcome).sum();
    let (lo, hi) = set
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e.outcome), hi.max(e.outcome)));
    value.clamp(lo, hi)
}

/// Where candidates fell out of the pipeline for one PCI computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PciDiagnostics {
    pub corpus_size: usize,
    /// Descendants of the treatment paper, removed before any matching.
    pub descendants_excluded: usize,
    /// Corpus minus descendants minus the treatment paper.
    pub pool_size: usize,
    pub removed_by_year_filter: usize,
    pub same_year_pool: usize,
    pub coarse_candidates: usize,
    pub beyond_coarse_k: usize,
    pub missing_embedding: usize,
    pub below_threshold: usize,
    pub beyond_max_matches: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PciResult {
    pub schema_version: u32,
    pub a_id: String,
    pub b_id: String,
    pub y_b: f64,
    pub y_hat_t0: f64,
    pub pci: f64,
    pub match_set: MatchSet,
    pub diagnostics: PciDiagnostics,
}

impl PciResult {
    pub fn new(a_id: &str, b_id: &str, y_b: f64, match_set: MatchSet, diagnostics: PciDiagnostics) -> Self {
        let y_hat_t0 = synthesize_counterfactual(&match_set);
        PciResult {
            schema_version: PCI_SCHEMA_VERSION,
            a_id: a_id.to_owned(),
            b_id: b_id.to_owned(),
            y_b,
            y_hat_t0,
            pci: y_b - y_hat_t0,
            match_set,
            diagnostics,
        }
    }
}
