//! Paper metadata store.
//!
//! Records are kept sorted by `paper_id` byte order, so a [`PaperIdx`] orders
//! exactly like the string id it stands for. Every other module leans on this
//! when it breaks ties "by ascending id".

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_YEAR: i64 = 1000;
pub const MAX_YEAR: i64 = 3000;

/// Dense handle for a paper inside one [`Corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PaperIdx(pub u32);

impl PaperIdx {
    #[inline]
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract", default)]
    pub abstract_text: String,
    pub year: i32,
    pub citation_count: u64,
    #[serde(default)]
    pub influential_citation_count: u64,
}

impl PaperRecord {
    /// Title and abstract joined by a single space (title alone when the
    /// abstract is empty).
    pub fn title_abstract(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.paper_id.is_empty() {
            return Err("empty paper_id".into());
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&(self.year as i64)) {
            return Err("year out of range".into());
        }
        if self.influential_citation_count > self.citation_count {
            return Err("influential_citation_count exceeds citation_count".into());
        }
        Ok(())
    }
}

/// Loosely typed row so each invariant violation can be reported by name
/// instead of as a generic deserialization failure.
#[derive(Deserialize)]
struct RawRecord {
    paper_id: Option<String>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    year: Option<i64>,
    citation_count: Option<i64>,
    influential_citation_count: Option<i64>,
}

impl RawRecord {
    fn into_record(self) -> std::result::Result<PaperRecord, String> {
        let paper_id = self.paper_id.ok_or("missing paper_id")?;
        let title = self.title.ok_or("missing title")?;
        let year = self.year.ok_or("missing year")?;
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err("year out of range".into());
        }
        let citation_count = self.citation_count.ok_or("missing citation_count")?;
        if citation_count < 0 {
            return Err("negative citation_count".into());
        }
        let influential = self.influential_citation_count.unwrap_or(0);
        if influential < 0 {
            return Err("negative influential_citation_count".into());
        }
        let record = PaperRecord {
            paper_id,
            title,
            abstract_text: self.abstract_text.unwrap_or_default(),
            year: year as i32,
            citation_count: citation_count as u64,
            influential_citation_count: influential as u64,
        };
        record.validate()?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number within the source.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    /// Rows identical to an already accepted record.
    pub duplicates: usize,
    pub rejected: Vec<RejectedRow>,
}

impl IngestReport {
    pub fn rejected_count(&self) -> usize {
        self.rejected.len()
    }
}

/// Accumulates records from one or more sources; single writer.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    records: HashMap<String, (PaperRecord, usize)>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one already-typed record. `row` is only used for reporting.
    pub fn push(&mut self, record: PaperRecord, row: usize, report: &mut IngestReport) -> Result<()> {
        if let Err(reason) = record.validate() {
            report.rejected.push(RejectedRow { row, reason });
            return Ok(());
        }
        match self.records.get(&record.paper_id) {
            Some((existing, _)) if *existing == record => report.duplicates += 1,
            Some((_, first_row)) => {
                return Err(Error::Conflict {
                    id: record.paper_id,
                    first_row: *first_row,
                    second_row: row,
                });
            }
            None => {
                self.records.insert(record.paper_id.clone(), (record, row));
                report.accepted += 1;
            }
        }
        Ok(())
    }

    /// Ingests JSON-lines. Blank lines are skipped; malformed rows are
    /// rejected and reported, never fatal. A conflicting duplicate id is fatal.
    pub fn ingest_jsonl<R: BufRead>(&mut self, reader: R) -> Result<IngestReport> {
        let mut report = IngestReport::default();
        for (i, line) in reader.lines().enumerate() {
            let row = i + 1;
            let line = line.map_err(|e| Error::io("<papers>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RawRecord>(&line)
                .map_err(|e| format!("malformed row: {e}"))
                .and_then(RawRecord::into_record);
            match parsed {
                Ok(record) => self.push(record, row, &mut report)?,
                Err(reason) => report.rejected.push(RejectedRow { row, reason }),
            }
        }
        Ok(report)
    }

    pub fn ingest_path(&mut self, path: &Path) -> Result<IngestReport> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.ingest_jsonl(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn finish(self) -> Corpus {
        Corpus::from_unique(self.records.into_values().map(|(r, _)| r).collect())
    }
}

/// Immutable, id-sorted paper store with year partitions.
#[derive(Debug, Clone)]
pub struct Corpus {
    papers: Vec<PaperRecord>,
    by_id: HashMap<String, PaperIdx>,
    years: BTreeMap<i32, Vec<PaperIdx>>,
}

impl Corpus {
    /// Builds a corpus from records, rejecting the first invalid or
    /// duplicated one.
    pub fn from_records(records: Vec<PaperRecord>) -> Result<Self> {
        let mut builder = CorpusBuilder::new();
        let mut report = IngestReport::default();
        for (i, r) in records.into_iter().enumerate() {
            builder.push(r, i + 1, &mut report)?;
        }
        if let Some(bad) = report.rejected.first() {
            return Err(Error::contract(format!("record {}: {}", bad.row, bad.reason)));
        }
        if report.duplicates > 0 {
            return Err(Error::contract("duplicate records"));
        }
        Ok(builder.finish())
    }

    fn from_unique(mut papers: Vec<PaperRecord>) -> Self {
        assert!(papers.len() <= u32::MAX as usize, "corpus exceeds u32 index space");
        papers.sort_unstable_by(|a, b| a.paper_id.cmp(&b.paper_id));
        let mut by_id = HashMap::with_capacity(papers.len());
        let mut years: BTreeMap<i32, Vec<PaperIdx>> = BTreeMap::new();
        for (i, p) in papers.iter().enumerate() {
            let idx = PaperIdx(i as u32);
            by_id.insert(p.paper_id.clone(), idx);
            years.entry(p.year).or_default().push(idx);
        }
        Corpus { papers, by_id, years }
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn idx(&self, paper_id: &str) -> Result<PaperIdx> {
        self.by_id
            .get(paper_id)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("paper {paper_id:?}")))
    }

    pub fn get_paper(&self, paper_id: &str) -> Result<&PaperRecord> {
        self.idx(paper_id).map(|i| self.record(i))
    }

    #[inline]
    pub fn record(&self, idx: PaperIdx) -> &PaperRecord {
        &self.papers[idx.get()]
    }

    pub fn records(&self) -> &[PaperRecord] {
        &self.papers
    }

    /// Indices of the year partition, ascending (hence id-sorted).
    pub fn year_partition(&self, year: i32) -> &[PaperIdx] {
        self.years.get(&year).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn papers_in_year(&self, year: i32) -> Vec<&str> {
        self.year_partition(year)
            .iter()
            .map(|&i| self.record(i).paper_id.as_str())
            .collect()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        self.years.keys().copied()
    }

    /// Writes the export format: one JSON object per line, sorted by id.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.papers {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(src: &str) -> Result<(Corpus, IngestReport)> {
        let mut b = CorpusBuilder::new();
        let report = b.ingest_jsonl(src.as_bytes())?;
        Ok((b.finish(), report))
    }

    const THREE: &str = r#"{"paper_id":"p1","title":"A","abstract":"x","year":2019,"citation_count":3}
{"paper_id":"p2","title":"B","year":2019,"citation_count":0,"influential_citation_count":0}
{"paper_id":"p3","title":"C","abstract":"","year":2020,"citation_count":10,"influential_citation_count":2}
"#;

    #[test]
    fn three_valid_rows() {
        let (c, r) = ingest(THREE).unwrap();
        assert_eq!(r.accepted, 3);
        assert_eq!(r.rejected_count(), 0);
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn rejects_negative_citations_and_bad_year() {
        let src = r#"{"paper_id":"a","title":"t","year":2019,"citation_count":-1}
{"paper_id":"b","title":"t","year":20233,"citation_count":1}
{"paper_id":"c","title":"t","citation_count":1}
not json
{"paper_id":"d","title":"t","year":2000,"citation_count":1,"influential_citation_count":5}
"#;
        let (c, r) = ingest(src).unwrap();
        assert_eq!(c.len(), 0);
        let reasons: Vec<_> = r.rejected.iter().map(|x| (x.row, x.reason.as_str())).collect();
        assert_eq!(reasons[0], (1, "negative citation_count"));
        assert_eq!(reasons[1], (2, "year out of range"));
        assert_eq!(reasons[2], (3, "missing year"));
        assert_eq!(reasons[3].0, 4);
        assert!(reasons[3].1.starts_with("malformed row"));
        assert_eq!(reasons[4], (5, "influential_citation_count exceeds citation_count"));
    }

    #[test]
    fn lookup_and_missing_abstract() {
        let (c, _) = ingest(THREE).unwrap();
        let p2 = c.get_paper("p2").unwrap();
        assert_eq!(p2.abstract_text, "");
        assert_eq!(p2.title_abstract(), "B");
        assert_eq!(c.get_paper("p1").unwrap().title_abstract(), "A x");
        assert!(matches!(c.get_paper("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn year_partitions() {
        let (c, _) = ingest(THREE).unwrap();
        assert_eq!(c.papers_in_year(2019), vec!["p1", "p2"]);
        assert_eq!(c.papers_in_year(2020), vec!["p3"]);
        assert!(c.papers_in_year(1800).is_empty());
    }

    #[test]
    fn identical_reingest_is_idempotent() {
        let mut b = CorpusBuilder::new();
        b.ingest_jsonl(THREE.as_bytes()).unwrap();
        let second = b.ingest_jsonl(THREE.as_bytes()).unwrap();
        assert_eq!(second.accepted, 0);
        assert_eq!(second.duplicates, 3);
        let twice = b.finish();
        let (once, _) = ingest(THREE).unwrap();
        assert_eq!(twice.records(), once.records());
    }

    #[test]
    fn conflicting_duplicate_names_both_rows() {
        let src = r#"{"paper_id":"a","title":"t","year":2019,"citation_count":1}
{"paper_id":"b","title":"t","year":2019,"citation_count":1}
{"paper_id":"a","title":"other","year":2019,"citation_count":1}
"#;
        match ingest(src) {
            Err(Error::Conflict {
                id,
                first_row,
                second_row,
            }) => assert_eq!((id.as_str(), first_row, second_row), ("a", 1, 3)),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn export_is_sorted_and_complete() {
        let (c, _) = ingest(THREE).unwrap();
        let mut out = Vec::new();
        c.export_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let ids: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<PaperRecord>(l).unwrap().paper_id)
            .collect();
        assert_eq!(ids, ["p1", "p2", "p3"]);
    }
}
