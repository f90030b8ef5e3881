//! Directory persistence for a corpus and its citation graph.
//!
//! Layout: `manifest.json` (format tag, version, counts), `papers.jsonl` in
//! the export format, `edges.tsv` in the edge input format.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusBuilder, IngestReport};
use crate::error::{Error, Result};
use crate::graph::{CitationGraph, EdgeIngestReport, GraphBuilder};

pub const STORE_FORMAT: &str = "causalcite-store";
pub const STORE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const PAPERS: &str = "papers.jsonl";
const EDGES: &str = "edges.tsv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub papers: usize,
    pub edges: usize,
}

#[derive(Debug)]
pub struct Store {
    pub corpus: Corpus,
    pub graph: CitationGraph,
}

#[derive(Debug, Clone, Serialize)]
pub struct StoreIngestReport {
    pub papers: IngestReport,
    pub edges: EdgeIngestReport,
}

impl Store {
    /// Builds from the two input files.
    pub fn ingest(papers: &Path, edges: &Path) -> Result<(Self, StoreIngestReport)> {
        let mut builder = CorpusBuilder::new();
        let paper_report = builder.ingest_path(papers)?;
        let corpus = builder.finish();
        let mut gb = GraphBuilder::new(&corpus);
        let edge_report = gb.ingest_path(edges)?;
        let graph = gb.finish();
        Ok((
            Store { corpus, graph },
            StoreIngestReport {
                papers: paper_report,
                edges: edge_report,
            },
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let papers = dir.join(PAPERS);
        let f = File::create(&papers).map_err(|e| Error::io(&papers, e))?;
        self.corpus
            .export_jsonl(BufWriter::new(f))
            .map_err(|e| Error::io(&papers, e))?;
        let edges = dir.join(EDGES);
        let f = File::create(&edges).map_err(|e| Error::io(&edges, e))?;
        self.graph
            .export_tsv(&self.corpus, BufWriter::new(f))
            .map_err(|e| Error::io(&edges, e))?;
        let manifest = Manifest {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            papers: self.corpus.len(),
            edges: self.graph.edge_count(),
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Opens a saved store. Any rejected row means the directory was not
    /// written by [`Store::save`] and is reported as a format error.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(None, format!("{}: {e}", path.display())))?;
        if manifest.format != STORE_FORMAT || manifest.version != STORE_VERSION {
            return Err(Error::format(
                None,
                format!(
                    "unsupported store {} v{} (expected {STORE_FORMAT} v{STORE_VERSION})",
                    manifest.format, manifest.version
                ),
            ));
        }
        let papers = dir.join(PAPERS);
        let f = File::open(&papers).map_err(|e| Error::io(&papers, e))?;
        let mut builder = CorpusBuilder::new();
        let report = builder.ingest_jsonl(BufReader::new(f))?;
        if let Some(bad) = report.rejected.first() {
            return Err(Error::format(Some(bad.row), format!("{}: {}", papers.display(), bad.reason)));
        }
        let corpus = builder.finish();
        let edges = dir.join(EDGES);
        let f = File::open(&edges).map_err(|e| Error::io(&edges, e))?;
        let mut gb = GraphBuilder::new(&corpus);
        let report = gb.ingest_tsv(BufReader::new(f))?;
        if let Some(bad) = report.rejected.first() {
            return Err(Error::format(Some(bad.row), format!("{}: {}", edges.display(), bad.reason)));
        }
        let graph = gb.finish();
        if corpus.len() != manifest.papers || graph.edge_count() != manifest.edges {
            return Err(Error::format(None, "store contents disagree with manifest counts"));
        }
        Ok(Store { corpus, graph })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_open_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let papers = dir.path().join("in.jsonl");
        let edges = dir.path().join("in.tsv");
        fs::write(
            &papers,
            "{\"paper_id\":\"b\",\"title\":\"B\",\"year\":2020,\"citation_count\":1}\n\
             {\"paper_id\":\"a\",\"title\":\"A\",\"abstract\":\"x y\",\"year\":2019,\"citation_count\":5,\"influential_citation_count\":1}\n",
        )
        .unwrap();
        fs::write(&edges, "a\tb\t1\n").unwrap();
        let (store, report) = Store::ingest(&papers, &edges).unwrap();
        assert_eq!((report.papers.accepted, report.edges.accepted), (2, 1));

        let out = dir.path().join("store");
        store.save(&out).unwrap();
        let back = Store::open(&out).unwrap();
        assert_eq!(back.corpus.records(), store.corpus.records());
        assert_eq!(back.graph.edges().collect::<Vec<_>>(), store.graph.edges().collect::<Vec<_>>());

        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest.version, STORE_VERSION);

        fs::write(out.join(MANIFEST), r#"{"format":"causalcite-store","version":99,"papers":2,"edges":1}"#).unwrap();
        assert!(matches!(Store::open(&out), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_inputs_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(Store::ingest(&missing, &missing), Err(Error::Io { .. })));
        assert!(matches!(Store::open(&missing), Err(Error::Io { .. })));
    }
}
