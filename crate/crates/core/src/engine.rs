//! Shared, read-only state for PCI / impact computations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::corpus::{Corpus, PaperIdx};
use crate::embedding::{cosine_similarity, EmbeddingProvider, EmbeddingStore};
use crate::error::{Error, Result};
use crate::graph::{CitationGraph, PaperMask};
use crate::retrieval::Bm25Index;
use crate::store::Store;
use crate::text::{Blocklist, CleanedText, TextPrep};
use crate::textmatch::{outcome, rerank, PciDiagnostics, PciResult, Scored};

/// BM25 index over one publication year; position `i` is `members[i]`.
#[derive(Debug)]
pub struct YearIndex {
    pub year: i32,
    pub members: Vec<PaperIdx>,
    pub index: Bm25Index,
}

/// Lazily built per-year indexes; each year is built exactly once even under
/// concurrent first queries.
#[derive(Debug, Default)]
struct YearCache {
    slots: Mutex<HashMap<i32, Arc<OnceLock<Arc<YearIndex>>>>>,
}

impl YearCache {
    fn get_or_build(&self, year: i32, build: impl FnOnce() -> YearIndex) -> Arc<YearIndex> {
        let slot = Arc::clone(self.slots.lock().unwrap().entry(year).or_default());
        Arc::clone(slot.get_or_init(|| Arc::new(build())))
    }

    fn built_years(&self) -> usize {
        self.slots
            .lock()
            .unwrap()
            .values()
            .filter(|s| s.get().is_some())
            .count()
    }
}

pub struct Engine {
    corpus: Corpus,
    graph: CitationGraph,
    prep: TextPrep,
    embeddings: EmbeddingProvider,
    config: EngineConfig,
    years: YearCache,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("papers", &self.corpus.len())
            .field("edges", &self.graph.edge_count())
            .field("embeddings", &self.embeddings.describe())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(
        corpus: Corpus,
        graph: CitationGraph,
        embeddings: EmbeddingProvider,
        prep: TextPrep,
        config: EngineConfig,
    ) -> Result<Self> {
        config.validate()?;
        if graph.paper_count() != corpus.len() {
            return Err(Error::contract("graph was built over a different corpus"));
        }
        let workers = if config.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            config.workers
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::contract(format!("cannot start worker pool: {e}")))?;
        Ok(Engine {
            corpus,
            graph,
            prep,
            embeddings,
            config,
            years: YearCache::default(),
            pool,
        })
    }

    /// Loads everything named in `config.paths`: a saved store when
    /// `paths.store` is set, otherwise the corpus and edge files; embeddings
    /// from `paths.embeddings` or the fallback encoder.
    pub fn from_config(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let store = match (&config.paths.store, &config.paths.corpus, &config.paths.edges) {
            (Some(dir), _, _) => Store::open(dir)?,
            (None, Some(papers), Some(edges)) => {
                let (store, report) = Store::ingest(papers, edges)?;
                if !report.papers.rejected.is_empty() || !report.edges.rejected.is_empty() {
                    warn!(
                        "ingest rejected {} paper rows and {} edge rows",
                        report.papers.rejected.len(),
                        report.edges.rejected.len()
                    );
                }
                store
            }
            (None, None, _) => return Err(Error::NotFound("corpus file (paths.corpus or paths.store)".into())),
            (None, _, None) => return Err(Error::NotFound("edges file (paths.edges or paths.store)".into())),
        };
        let prep = match &config.paths.blocklist {
            Some(path) => TextPrep::new(Blocklist::load(path)?),
            None => TextPrep::default(),
        };
        let embeddings = match &config.paths.embeddings {
            Some(path) => {
                let (store_emb, report) = EmbeddingStore::load(path)?;
                for r in &report.rejected {
                    warn!("embedding record {} ({:?}) rejected: {}", r.record, r.paper_id, r.reason);
                }
                let unknown = store_emb.unknown_ids(&store.corpus).count();
                if unknown > 0 {
                    warn!("{unknown} embedding ids are not in the corpus (kept)");
                }
                EmbeddingProvider::precomputed(store_emb, &store.corpus)
            }
            None => {
                warn!("no embedding file configured; using the fallback hashed encoder (tests and demos only)");
                EmbeddingProvider::fallback(config.fallback_dims)
            }
        };
        Engine::new(store.corpus, store.graph, embeddings, prep, config)
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn graph(&self) -> &CitationGraph {
        &self.graph
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn embeddings(&self) -> &EmbeddingProvider {
        &self.embeddings
    }

    pub fn text_prep(&self) -> &TextPrep {
        &self.prep
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Runs `f` inside the engine's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn built_year_indexes(&self) -> usize {
        self.years.built_years()
    }

    pub fn clean(&self, idx: PaperIdx) -> CleanedText {
        self.prep.clean(self.corpus.record(idx))
    }

    pub fn year_index(&self, year: i32) -> Arc<YearIndex> {
        self.years.get_or_build(year, || {
            let members = self.corpus.year_partition(year).to_vec();
            let tokenize = |&i: &PaperIdx| {
                crate::text::tokenize(&self.prep.clean_text(&self.corpus.record(i).title_abstract()))
            };
            // A rayon worker waiting on a join may steal a task that blocks on
            // this same OnceLock, so only fan out from non-pool threads.
            let tokens: Vec<Vec<String>> = if rayon::current_thread_index().is_none() {
                self.pool.install(|| members.par_iter().map(tokenize).collect())
            } else {
                members.iter().map(tokenize).collect()
            };
            let index = Bm25Index::build_sorted(
                members
                    .iter()
                    .zip(&tokens)
                    .map(|(&i, t)| (self.corpus.record(i).paper_id.as_str(), t)),
                self.config.bm25,
            );
            info!("built BM25 index for {year}: {} papers", members.len());
            YearIndex { year, members, index }
        })
    }

    /// Direct follow-ups of `a`, honoring `graph.influential_only`.
    pub fn children(&self, a: PaperIdx) -> Result<Vec<PaperIdx>> {
        self.graph.children(a, self.config.influential_only)
    }

    fn is_follow_up(&self, a: PaperIdx, b: PaperIdx) -> bool {
        if self.config.influential_only {
            self.graph.is_influential(a, b)
        } else {
            self.graph.has_edge(a, b)
        }
    }

    /// Pairwise causal impact of `a` on its follow-up `b`.
    pub fn pci(&self, a_id: &str, b_id: &str) -> Result<PciResult> {
        let a = self.corpus.idx(a_id)?;
        let b = self.corpus.idx(b_id)?;
        if !self.is_follow_up(a, b) {
            return Err(Error::contract(format!("b is not a follow-up of a ({b_id:?} does not cite {a_id:?})")));
        }
        self.pci_idx(a, b)
    }

    /// Like [`Engine::pci`] for already-resolved, already-checked indices.
    pub fn pci_idx(&self, a: PaperIdx, b: PaperIdx) -> Result<PciResult> {
        let descendants = self.graph.descendants(a)?.members;
        let b_rec = self.corpus.record(b);
        let b_clean = self.clean(b);
        let b_vec = self.embeddings.vector(b, &b_clean).ok_or_else(|| {
            Error::contract(format!("missing embedding for treated paper {:?}", b_rec.paper_id))
        })?;

        let year = self.year_index(b_rec.year);
        let in_pool = |i: PaperIdx| i != a && !descendants.contains(i);
        let mut diagnostics = self.pool_counts(a, &descendants, &year);

        let accept = |pos: usize| {
            let i = year.members[pos];
            i != b && in_pool(i)
        };
        let coarse = year
            .index
            .top_k_positions(&b_clean.tokens, self.config.matching.coarse_k, accept);
        diagnostics.coarse_candidates = coarse.len();
        diagnostics.beyond_coarse_k = diagnostics.same_year_pool - coarse.len();

        let scored = coarse.iter().map(|&(pos, _)| {
            let idx = year.members[pos];
            self.score_candidate(idx, &b_vec)
        });
        let scored: Vec<Scored> = scored.collect::<Result<_>>()?;
        let (set, stats) = rerank(
            &b_rec.paper_id,
            scored,
            self.config.matching.threshold,
            self.config.matching.max_matches,
        );
        diagnostics.missing_embedding = stats.missing_embedding;
        diagnostics.below_threshold = stats.below_threshold;
        diagnostics.beyond_max_matches = stats.beyond_max_matches;
        diagnostics.matched = set.len();

        let a_rec = self.corpus.record(a);
        Ok(PciResult::new(
            &a_rec.paper_id,
            &b_rec.paper_id,
            outcome(b_rec.citation_count),
            set,
            diagnostics,
        ))
    }

    /// Similarity of one control candidate to the treated vector.
    pub fn score_candidate(&self, idx: PaperIdx, treated: &[f32]) -> Result<Scored> {
        let rec = self.corpus.record(idx);
        let vector = if self.embeddings.needs_text() {
            self.embeddings.vector(idx, &self.clean(idx))
        } else {
            let empty = CleanedText {
                paper_id: String::new(),
                text: String::new(),
                tokens: Vec::new(),
            };
            self.embeddings.vector(idx, &empty)
        };
        let similarity = match vector {
            Some(v) => Some(cosine_similarity(treated, &v)?),
            None => None,
        };
        Ok(Scored {
            candidate_id: rec.paper_id.clone(),
            similarity,
            outcome: outcome(rec.citation_count),
        })
    }

    fn pool_counts(&self, a: PaperIdx, descendants: &PaperMask, year: &YearIndex) -> PciDiagnostics {
        let n = self.corpus.len();
        let pool_size = n - descendants.len() - 1;
        let same_year_pool = year
            .members
            .iter()
            .filter(|&&i| i != a && !descendants.contains(i))
            .count();
        PciDiagnostics {
            corpus_size: n,
            descendants_excluded: descendants.len(),
            pool_size,
            removed_by_year_filter: pool_size - same_year_pool,
            // The treated paper is a descendant, so it never counts here.
            same_year_pool,
            ..PciDiagnostics::default()
        }
    }
}
