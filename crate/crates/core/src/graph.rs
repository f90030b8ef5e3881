//! Citation graph over a [`Corpus`].
//!
//! An edge `from -> to` means `to` cites `from`: the follow-up paper points
//! away from the earlier one, so "children" are direct follow-ups and
//! "descendants" everything reachable downstream.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::corpus::{Corpus, PaperIdx, RejectedRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitationEdge {
    pub from_id: String,
    pub to_id: String,
    pub is_influential: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EdgeIngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: Vec<RejectedRow>,
}

/// Fixed-size bit set over corpus indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaperMask {
    words: Vec<u64>,
    count: usize,
}

impl PaperMask {
    pub fn new(len: usize) -> Self {
        PaperMask {
            words: vec![0; len.div_ceil(64)],
            count: 0,
        }
    }

    #[inline]
    pub fn contains(&self, idx: PaperIdx) -> bool {
        let i = idx.get();
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    /// Returns true when newly inserted.
    #[inline]
    pub fn insert(&mut self, idx: PaperIdx) -> bool {
        let i = idx.get();
        let bit = 1u64 << (i % 64);
        let word = &mut self.words[i / 64];
        if *word & bit != 0 {
            return false;
        }
        *word |= bit;
        self.count += 1;
        true
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = PaperIdx> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            let mut bits = bits;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(PaperIdx((w * 64) as u32 + tz))
            })
        })
    }
}

/// Everything reachable from `root` by one or more forward edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescendantSet {
    pub root: PaperIdx,
    pub members: Arc<PaperMask>,
}

/// Compressed adjacency, one row per paper.
#[derive(Debug, Clone, Default)]
struct Csr {
    offsets: Vec<u64>,
    targets: Vec<PaperIdx>,
}

impl Csr {
    /// `edges` must be sorted by (source, target) and free of duplicates.
    fn from_sorted(n: usize, edges: impl Iterator<Item = (PaperIdx, PaperIdx)>) -> Self {
        let mut offsets = vec![0u64; n + 1];
        let mut targets = Vec::new();
        for (s, t) in edges {
            offsets[s.get() + 1] += 1;
            targets.push(t);
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Csr { offsets, targets }
    }

    #[inline]
    fn range(&self, idx: PaperIdx) -> std::ops::Range<usize> {
        self.offsets[idx.get()] as usize..self.offsets[idx.get() + 1] as usize
    }

    #[inline]
    fn row(&self, idx: PaperIdx) -> &[PaperIdx] {
        &self.targets[self.range(idx)]
    }
}

/// Single-writer edge accumulator validated against a corpus.
pub struct GraphBuilder<'c> {
    corpus: &'c Corpus,
    edges: HashMap<(PaperIdx, PaperIdx), bool>,
}

impl<'c> GraphBuilder<'c> {
    pub fn new(corpus: &'c Corpus) -> Self {
        GraphBuilder {
            corpus,
            edges: HashMap::new(),
        }
    }

    pub fn push(&mut self, edge: &CitationEdge, row: usize, report: &mut EdgeIngestReport) {
        if edge.from_id == edge.to_id {
            report.rejected.push(RejectedRow {
                row,
                reason: "self-citation".into(),
            });
            return;
        }
        let ends = (self.corpus.idx(&edge.from_id), self.corpus.idx(&edge.to_id));
        let (from, to) = match ends {
            (Ok(f), Ok(t)) => (f, t),
            (Err(_), _) => {
                report.rejected.push(RejectedRow {
                    row,
                    reason: format!("unknown endpoint {:?}", edge.from_id),
                });
                return;
            }
            (_, Err(_)) => {
                report.rejected.push(RejectedRow {
                    row,
                    reason: format!("unknown endpoint {:?}", edge.to_id),
                });
                return;
            }
        };
        match self.edges.get_mut(&(from, to)) {
            Some(flag) => {
                *flag |= edge.is_influential;
                report.duplicates += 1;
            }
            None => {
                self.edges.insert((from, to), edge.is_influential);
                report.accepted += 1;
            }
        }
    }

    /// Reads `from_id<TAB>to_id[<TAB>0|1]` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn ingest_tsv<R: BufRead>(&mut self, reader: R) -> Result<EdgeIngestReport> {
        let mut report = EdgeIngestReport::default();
        for (i, line) in reader.lines().enumerate() {
            let row = i + 1;
            let line = line.map_err(|e| Error::io("<edges>", e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match parse_edge_line(line) {
                Ok(edge) => self.push(&edge, row, &mut report),
                Err(reason) => report.rejected.push(RejectedRow { row, reason }),
            }
        }
        Ok(report)
    }

    pub fn ingest_path(&mut self, path: &Path) -> Result<EdgeIngestReport> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        self.ingest_tsv(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn finish(self) -> CitationGraph {
        let n = self.corpus.len();
        let mut edges: Vec<((PaperIdx, PaperIdx), bool)> = self.edges.into_iter().collect();
        edges.sort_unstable_by_key(|e| e.0);
        let influential = edges.iter().map(|e| e.1).collect();
        let forward = Csr::from_sorted(n, edges.iter().map(|e| e.0));
        let mut rev: Vec<(PaperIdx, PaperIdx)> = edges.iter().map(|&((f, t), _)| (t, f)).collect();
        rev.sort_unstable();
        let reverse = Csr::from_sorted(n, rev.into_iter());
        CitationGraph {
            n,
            forward,
            forward_influential: influential,
            reverse,
            memo: RwLock::new(HashMap::new()),
        }
    }
}

fn parse_edge_line(line: &str) -> std::result::Result<CitationEdge, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    let is_influential = match cols.as_slice() {
        [_, _] => false,
        [_, _, "0"] | [_, _, ""] => false,
        [_, _, "1"] => true,
        [_, _, other] => return Err(format!("malformed row: is_influential must be 0 or 1, got {other:?}")),
        _ => return Err(format!("malformed row: expected 2 or 3 tab-separated columns, got {}", cols.len())),
    };
    let (from_id, to_id) = (cols[0].trim(), cols[1].trim());
    if from_id.is_empty() || to_id.is_empty() {
        return Err("malformed row: empty id".into());
    }
    Ok(CitationEdge {
        from_id: from_id.to_owned(),
        to_id: to_id.to_owned(),
        is_influential,
    })
}

/// Immutable citation graph. Descendant queries are memoized behind a lock
/// that is only held for map access, never during traversal.
#[derive(Debug)]
pub struct CitationGraph {
    n: usize,
    forward: Csr,
    forward_influential: Vec<bool>,
    reverse: Csr,
    memo: RwLock<HashMap<PaperIdx, Arc<PaperMask>>>,
}

impl CitationGraph {
    pub fn empty(corpus: &Corpus) -> Self {
        GraphBuilder::new(corpus).finish()
    }

    pub fn paper_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.forward.targets.len()
    }

    fn check(&self, idx: PaperIdx) -> Result<()> {
        if idx.get() < self.n {
            Ok(())
        } else {
            Err(Error::NotFound(format!("paper index {}", idx.0)))
        }
    }

    /// Direct follow-ups of `a`, ascending. With `influential_only`, only
    /// edges flagged as influential count.
    pub fn children(&self, a: PaperIdx, influential_only: bool) -> Result<Vec<PaperIdx>> {
        self.check(a)?;
        let range = self.forward.range(a);
        let row = &self.forward.targets[range.clone()];
        if !influential_only {
            return Ok(row.to_vec());
        }
        Ok(row
            .iter()
            .zip(&self.forward_influential[range])
            .filter(|(_, &inf)| inf)
            .map(|(&c, _)| c)
            .collect())
    }

    /// Papers that `b` cites.
    pub fn references(&self, b: PaperIdx) -> Result<&[PaperIdx]> {
        self.check(b)?;
        Ok(self.reverse.row(b))
    }

    pub fn has_edge(&self, a: PaperIdx, b: PaperIdx) -> bool {
        a.get() < self.n && self.forward.row(a).binary_search(&b).is_ok()
    }

    pub fn is_influential(&self, a: PaperIdx, b: PaperIdx) -> bool {
        if a.get() >= self.n {
            return false;
        }
        let range = self.forward.range(a);
        match self.forward.targets[range.clone()].binary_search(&b) {
            Ok(pos) => self.forward_influential[range.start + pos],
            Err(_) => false,
        }
    }

    /// Forward reachability from `a` (BFS with a visited set, so malformed
    /// cyclic input terminates). `a` itself is never a member.
    pub fn descendants(&self, a: PaperIdx) -> Result<DescendantSet> {
        self.check(a)?;
        if let Some(hit) = self.memo.read().unwrap().get(&a) {
            return Ok(DescendantSet {
                root: a,
                members: Arc::clone(hit),
            });
        }
        let mask = Arc::new(self.traverse(a));
        let members = Arc::clone(
            self.memo
                .write()
                .unwrap()
                .entry(a)
                .or_insert_with(|| Arc::clone(&mask)),
        );
        Ok(DescendantSet { root: a, members })
    }

    fn traverse(&self, a: PaperIdx) -> PaperMask {
        let mut seen = PaperMask::new(self.n);
        let mut frontier = vec![a];
        while let Some(node) = frontier.pop() {
            for &next in self.forward.row(node) {
                if next != a && seen.insert(next) {
                    frontier.push(next);
                }
            }
        }
        seen
    }

    /// Drops all memoized descendant sets.
    pub fn clear_memo(&self) {
        self.memo.write().unwrap().clear();
    }

    /// Every paper that is neither `a` nor one of its descendants.
    pub fn non_descendant_pool(&self, a: PaperIdx) -> Result<Vec<PaperIdx>> {
        let desc = self.descendants(a)?;
        Ok((0..self.n as u32)
            .map(PaperIdx)
            .filter(|&i| i != a && !desc.members.contains(i))
            .collect())
    }

    /// All edges as (from, to, influential), sorted by index.
    pub fn edges(&self) -> impl Iterator<Item = (PaperIdx, PaperIdx, bool)> + '_ {
        (0..self.n as u32).flat_map(move |f| {
            let from = PaperIdx(f);
            let range = self.forward.range(from);
            self.forward.targets[range.clone()]
                .iter()
                .zip(&self.forward_influential[range])
                .map(move |(&to, &inf)| (from, to, inf))
        })
    }

    pub fn export_tsv<W: Write>(&self, corpus: &Corpus, mut out: W) -> std::io::Result<()> {
        for (f, t, inf) in self.edges() {
            writeln!(
                out,
                "{}\t{}\t{}",
                corpus.record(f).paper_id,
                corpus.record(t).paper_id,
                u8::from(inf)
            )?;
        }
        out.flush()
    }
}

/// Convenience: resolves ids and collects into a string set.
pub fn id_set(corpus: &Corpus, idxs: impl IntoIterator<Item = PaperIdx>) -> HashSet<String> {
    idxs.into_iter()
        .map(|i| corpus.record(i).paper_id.clone())
        .collect()
}
