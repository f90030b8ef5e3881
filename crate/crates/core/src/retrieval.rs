//! Okapi BM25 over cleaned token lists.
//!
//! IDF uses the non-negative form `ln((N - df + 0.5) / (df + 0.5) + 1)`, and
//! query terms are treated as a set. Documents are stored in ascending id
//! order, so a document position doubles as its tie-break rank.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::CleanedText;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::config("bm25.k1", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::config("bm25.b", "must be within [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    terms: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    params: Bm25Params,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoarseCandidateList {
    pub query_id: String,
    /// (doc_id, score), best first; ties by ascending id.
    pub entries: Vec<(String, f64)>,
    pub k_requested: usize,
}

/// Unique query terms in a fixed (sorted) order, so every scorer adds
/// contributions in the same sequence.
fn unique_terms(tokens: &[String]) -> Vec<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

impl Bm25Index {
    pub fn build(mut docs: Vec<(String, Vec<String>)>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Error::contract("cannot build a BM25 index over an empty document set"));
        }
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::contract(format!("duplicate doc_id {:?}", w[0].0)));
        }
        Ok(Self::build_sorted(docs.iter().map(|(id, t)| (id.as_str(), t.as_slice())), params))
    }

    /// `docs` must be strictly ascending by id.
    pub(crate) fn build_sorted<'a, I, T>(docs: I, params: Bm25Params) -> Self
    where
        I: IntoIterator<Item = (&'a str, T)>,
        T: AsRef<[String]>,
    {
        let mut ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut terms: HashMap<String, u32> = HashMap::new();
        let mut postings: Vec<Vec<Posting>> = Vec::new();
        let mut tf: HashMap<u32, u32> = HashMap::new();
        let mut total_len = 0u64;
        for (pos, (id, tokens)) in docs.into_iter().enumerate() {
            let tokens = tokens.as_ref();
            ids.push(id.to_owned());
            doc_lengths.push(tokens.len() as u32);
            total_len += tokens.len() as u64;
            tf.clear();
            for t in tokens {
                let next = terms.len() as u32;
                let term = *terms.entry(t.clone()).or_insert_with(|| {
                    postings.push(Vec::new());
                    next
                });
                *tf.entry(term).or_insert(0) += 1;
            }
            for (&term, &count) in &tf {
                postings[term as usize].push(Posting {
                    doc: pos as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_len = if ids.is_empty() {
            0.0
        } else {
            total_len as f64 / ids.len() as f64
        };
        Bm25Index {
            ids,
            doc_lengths,
            avg_doc_len,
            terms,
            postings,
            params,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn doc_len(&self, pos: usize) -> u32 {
        self.doc_lengths[pos]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.ids.binary_search_by(|x| x.as_str().cmp(doc_id)).ok()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.terms
            .get(term)
            .map_or(0, |&t| self.postings[t as usize].len())
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.ids.len() as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    #[inline]
    fn term_weight(&self, idf: f64, tf: u32, len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(len) / self.avg_doc_len;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    pub fn score(&self, query_tokens: &[String], doc_id: &str) -> Result<f64> {
        let pos = self
            .position(doc_id)
            .ok_or_else(|| Error::NotFound(format!("document {doc_id:?}")))?;
        Ok(self.score_at(&unique_terms(query_tokens), pos))
    }

    fn score_at(&self, terms: &[&str], pos: usize) -> f64 {
        let mut total = 0.0;
        for term in terms {
            let Some(&t) = self.terms.get(*term) else { continue };
            let list = &self.postings[t as usize];
            if let Ok(i) = list.binary_search_by_key(&(pos as u32), |p| p.doc) {
                let idf = self.idf(list.len());
                total += self.term_weight(idf, list[i].tf, self.doc_lengths[pos]);
            }
        }
        total
    }

    /// Best `k` accepted documents as (position, score). Documents matching no
    /// query term score 0 and fill remaining slots in id order, so with `k` at
    /// least the accepted count every accepted document is returned. An empty
    /// query returns nothing.
    pub fn top_k_positions(
        &self,
        query_tokens: &[String],
        k: usize,
        accept: impl Fn(usize) -> bool,
    ) -> Vec<(usize, f64)> {
        let terms = unique_terms(query_tokens);
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            let Some(&t) = self.terms.get(*term) else { continue };
            let list = &self.postings[t as usize];
            let idf = self.idf(list.len());
            for p in list {
                if accept(p.doc as usize) {
                    let w = self.term_weight(idf, p.tf, self.doc_lengths[p.doc as usize]);
                    *acc.entry(p.doc).or_insert(0.0) += w;
                }
            }
        }
        let mut hits: Vec<(usize, f64)> = acc.into_iter().map(|(d, s)| (d as usize, s)).collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        if hits.len() < k {
            let scored: HashSet<usize> = hits.iter().map(|h| h.0).collect();
            let fill: Vec<(usize, f64)> = (0..self.ids.len())
                .filter(|pos| !scored.contains(pos) && accept(*pos))
                .take(k - hits.len())
                .map(|pos| (pos, 0.0))
                .collect();
            hits.extend(fill);
        }
        hits
    }

    /// Top-k over an explicit pool of ids. The query paper is never returned.
    pub fn top_k(&self, query: &CleanedText, pool: &HashSet<String>, k: usize) -> CoarseCandidateList {
        let entries = self
            .top_k_positions(&query.tokens, k, |pos| {
                let id = &self.ids[pos];
                *id != query.paper_id && pool.contains(id)
            })
            .into_iter()
            .map(|(pos, s)| (self.ids[pos].clone(), s))
            .collect();
        CoarseCandidateList {
            query_id: query.paper_id.clone(),
            entries,
            k_requested: k,
        }
    }

    /// Structural self-check used by tests.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mean = self.doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / self.ids.len() as f64;
        if (mean - self.avg_doc_len).abs() > 1e-12 * mean.max(1.0) {
            return Err(format!("avg_doc_len {} != mean {}", self.avg_doc_len, mean));
        }
        for list in &self.postings {
            if list.iter().any(|p| p.doc as usize >= self.ids.len() || p.tf == 0) {
                return Err("posting points outside the document table".into());
            }
            if list.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err("postings not strictly ascending".into());
            }
        }
        if self.ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err("ids not strictly ascending".into());
        }
        self.params.validate().map_err(|e| e.to_string())
    }
}
