//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use causalcite::config::EngineConfig;
use causalcite::embedding::{fallback_encode, DEFAULT_FALLBACK_SEED};
use causalcite::synthetic::{SyntheticCorpus, SyntheticSpec};
use causalcite::text::tokenize;
use causalcite::{Engine, EmbeddingProvider, TextPrep};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn engine(sc: &SyntheticCorpus, tweak: impl FnOnce(&mut EngineConfig)) -> Engine {
    let (corpus, graph) = sc.build().unwrap();
    let mut config = EngineConfig::default();
    config.workers = 2;
    tweak(&mut config);
    let dims = config.fallback_dims;
    Engine::new(corpus, graph, EmbeddingProvider::fallback(dims), TextPrep::default(), config).unwrap()
}

/// A small random corpus with a random DAG; sizes stay at or under 200.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> SyntheticCorpus {
    SyntheticCorpus::generate(&SyntheticSpec {
        papers: rng.gen_range(20..=200),
        years: rng.gen_range(1..=3),
        topics: rng.gen_range(2..=6),
        words_per_topic: rng.gen_range(4..=10),
        shared_words: rng.gen_range(5..=20),
        abstract_words: rng.gen_range(5..=25),
        mean_refs: rng.gen_range(0.5..4.0),
        seed: rng.gen(),
        ..SyntheticSpec::default()
    })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Everything reachable from `root` by repeated edge relaxation until
/// nothing changes; `root` itself is never a member.
pub fn reach_fixpoint(sc: &SyntheticCorpus, root: &str) -> HashSet<String> {
    let mut reach: HashSet<&str> = HashSet::new();
    loop {
        let mut changed = false;
        for e in &sc.edges {
            if (e.from_id == root || reach.contains(e.from_id.as_str())) && reach.insert(&e.to_id) {
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    reach.remove(root);
    reach.into_iter().map(str::to_owned).collect()
}

/// (from, to) pairs with at least one child, handy for picking pci inputs.
pub fn edges_of(sc: &SyntheticCorpus) -> Vec<(String, String)> {
    sc.edges.iter().map(|e| (e.from_id.clone(), e.to_id.clone())).collect()
}

pub fn y(citations: u64) -> f64 {
    (citations as f64 + 1.0).log10()
}

pub struct Oracle<'a> {
    pub sc: &'a SyntheticCorpus,
    prep: TextPrep,
    dims: usize,
    vectors: HashMap<&'a str, Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMatch {
    pub pci: f64,
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl<'a> Oracle<'a> {
    pub fn new(sc: &'a SyntheticCorpus, dims: usize) -> Self {
        let prep = TextPrep::default();
        let vectors = sc
            .records
            .iter()
            .map(|r| {
                let toks = tokenize(&prep.clean_text(&r.title_abstract()));
                (r.paper_id.as_str(), fallback_encode(&toks, dims, DEFAULT_FALLBACK_SEED))
            })
            .collect();
        Oracle { sc, prep, dims, vectors }
    }

    pub fn similarity(&self, u: &str, v: &str) -> f64 {
        let (u, v) = (&self.vectors[u], &self.vectors[v]);
        let mut s = 0.0f64;
        for i in 0..u.len() {
            s += f64::from(u[i]) * f64::from(v[i]);
        }
        s.clamp(-1.0, 1.0)
    }

    /// Control pool for pci(a, b): same year as b, not a, not a descendant.
    pub fn pool(&self, a: &str, b: &str) -> Vec<&'a str> {
        let desc = reach_fixpoint(self.sc, a);
        let year = self.sc.records.iter().find(|r| r.paper_id == b).unwrap().year;
        self.sc
            .records
            .iter()
            .filter(|r| r.year == year && r.paper_id != a && r.paper_id != b && !desc.contains(&r.paper_id))
            .map(|r| r.paper_id.as_str())
            .collect()
    }

    fn citations(&self, id: &str) -> u64 {
        self.sc.records.iter().find(|r| r.paper_id == id).unwrap().citation_count
    }

    /// Similarity-weighted synthesis over the whole pool, no lexical stage.
    pub fn full_pool(&self, a: &str, b: &str, threshold: f64, max_matches: usize) -> OracleMatch {
        let mut kept: Vec<(&str, f64)> = self
            .pool(a, b)
            .into_iter()
            .map(|c| (c, self.similarity(b, c)))
            .filter(|&(_, m)| m >= threshold && m > 0.0)
            .collect();
        kept.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(y.0)));
        kept.truncate(max_matches);
        let y_b = y(self.citations(b));
        if kept.is_empty() {
            return OracleMatch { pci: y_b, ids: vec![], weights: vec![] };
        }
        let total: f64 = kept.iter().map(|k| k.1).sum();
        let weights: Vec<f64> = kept.iter().map(|k| k.1 / total).collect();
        let ys: Vec<f64> = kept.iter().map(|k| y(self.citations(k.0))).collect();
        let mut y_hat: f64 = weights.iter().zip(&ys).map(|(w, y)| w * y).sum();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        y_hat = y_hat.clamp(lo, hi);
        OracleMatch {
            pci: y_b - y_hat,
            ids: kept.iter().map(|k| k.0.to_owned()).collect(),
            weights,
        }
    }

    /// Nearest single control; the counterfactual is 0 when none qualifies.
    pub fn one_to_one(&self, a: &str, b: &str, threshold: f64) -> f64 {
        let mut best: Option<(&str, f64)> = None;
        for c in self.pool(a, b) {
            let m = self.similarity(b, c);
            best = match best {
                Some((id, bm)) if bm > m || (bm == m && id < c) => Some((id, bm)),
                _ => Some((c, m)),
            };
        }
        let y_b = y(self.citations(b));
        match best {
            Some((c, m)) if m >= threshold && m > 0.0 => y_b - y(self.citations(c)),
            _ => y_b,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn prep(&self) -> &TextPrep {
        &self.prep
    }
}

/// Okapi BM25 by direct counting over every document.
pub fn brute_bm25(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|d| d.1.len()).sum::<usize>() as f64 / n;
    let mut terms: Vec<&String> = query.iter().collect();
    terms.sort();
    terms.dedup();
    docs.iter()
        .map(|(id, toks)| {
            let mut score = 0.0;
            for t in &terms {
                let tf = toks.iter().filter(|x| x == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.1.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let norm = 1.0 - b + b * toks.len() as f64 / avg;
                score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
            (id.clone(), score)
        })
        .collect()
}
