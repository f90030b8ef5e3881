//! Causal citation indices: pairwise causal impact (PCI) of a paper on one
//! follow-up, and the average/total impact (ACI/TCI) over all follow-ups,
//! estimated by text matching against same-year non-descendant controls.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod indices;
pub mod retrieval;
pub mod store;
pub mod synthetic;
pub mod text;
pub mod textmatch;

pub use config::EngineConfig;
pub use corpus::{Corpus, CorpusBuilder, PaperIdx, PaperRecord};
pub use embedding::{EmbeddingProvider, EmbeddingStore};
pub use engine::Engine;
pub use error::{Error, Result};
pub use graph::{CitationGraph, GraphBuilder};
pub use indices::{ImpactResult, SamplePlan};
pub use text::{Blocklist, TextPrep};
pub use textmatch::{outcome, PciResult};
