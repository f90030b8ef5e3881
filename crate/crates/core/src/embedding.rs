//! Dense confounder vectors: precomputed files or a hashed bag-of-words
//! fallback, plus cosine similarity.
//!
//! File layout (little-endian): magic `CCEMB1`, `u32` dims, `u64` count, then
//! `count` records of `u16` id length, id bytes (UTF-8), `dims` x `f32`.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Corpus, PaperIdx};
use crate::error::{Error, Result};
use crate::text::CleanedText;

pub const MAGIC: &[u8; 6] = b"CCEMB1";
pub const NORM_TOLERANCE: f64 = 1e-4;
pub const MIN_FALLBACK_DIMS: usize = 16;
pub const DEFAULT_FALLBACK_SEED: u64 = 0x5eed_c17e;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingVector {
    pub paper_id: String,
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dims(&self) -> usize {
        self.values.len()
    }
}

/// Scales `values` to unit L2 norm. Fails on zero or non-finite input.
pub fn normalize(values: &mut [f32]) -> std::result::Result<(), &'static str> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite component");
    }
    let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err("zero norm");
    }
    if (norm - 1.0).abs() > NORM_TOLERANCE * 0.1 {
        for v in values.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(())
}

/// Dot product accumulated in f64.
#[inline]
pub fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
}

/// Cosine of two unit vectors, clamped against float drift.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "embedding dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(dot(u, v).clamp(-1.0, 1.0))
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer spreads the low bits used for bucketing.
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic signed feature-hashing encoder. Not a semantic model: it
/// exists so the pipeline runs without external embeddings.
pub fn fallback_encode(tokens: &[String], dims: usize, seed: u64) -> Vec<f32> {
    assert!(dims >= MIN_FALLBACK_DIMS, "fallback dims must be >= {MIN_FALLBACK_DIMS}");
    let mut acc = vec![0f64; dims];
    for t in tokens {
        let h = fnv1a(seed, t.as_bytes());
        let bucket = (h % dims as u64) as usize;
        acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Empty text, or every contribution cancelled.
        let mut sentinel = vec![0f32; dims];
        sentinel[0] = 1.0;
        return sentinel;
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedVector {
    /// 0-based record position in the file.
    pub record: u64,
    pub paper_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EmbeddingLoadReport {
    pub accepted: usize,
    pub renormalized: usize,
    pub rejected: Vec<RejectedVector>,
}

/// Immutable in-memory vector table; rows are unit norm.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dims: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    by_id: HashMap<String, usize>,
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(None, format!("truncated embedding file reading {what}: {e}")))
}

impl EmbeddingStore {
    pub fn new(dims: usize) -> Self {
        EmbeddingStore {
            dims,
            ids: Vec::new(),
            data: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    /// Inserts (normalizing) a vector. Returns whether it was renormalized.
    pub fn insert(&mut self, paper_id: &str, mut values: Vec<f32>) -> std::result::Result<bool, String> {
        if values.len() != self.dims {
            return Err(format!("dims {} != store dims {}", values.len(), self.dims));
        }
        if self.by_id.contains_key(paper_id) {
            return Err("duplicate id".into());
        }
        let before = values.clone();
        normalize(&mut values).map_err(str::to_owned)?;
        self.by_id.insert(paper_id.to_owned(), self.ids.len());
        self.ids.push(paper_id.to_owned());
        self.data.extend_from_slice(&values);
        Ok(before != values)
    }

    pub fn read_from<R: Read>(reader: R) -> Result<(Self, EmbeddingLoadReport)> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 6];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::format(None, "bad embedding file magic"));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4, "dims")?;
        let dims = u32::from_le_bytes(b4) as usize;
        if dims == 0 {
            return Err(Error::format(None, "embedding dims must be positive"));
        }
        let mut b8 = [0u8; 8];
        read_exact(&mut r, &mut b8, "count")?;
        let count = u64::from_le_bytes(b8);

        let mut store = EmbeddingStore::new(dims);
        let mut report = EmbeddingLoadReport::default();
        let mut raw = vec![0u8; dims * 4];
        for rec in 0..count {
            let mut b2 = [0u8; 2];
            read_exact(&mut r, &mut b2, "id length")?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            read_exact(&mut r, &mut id, "id")?;
            read_exact(&mut r, &mut raw, "vector")?;
            let Ok(id) = String::from_utf8(id) else {
                report.rejected.push(RejectedVector {
                    record: rec,
                    paper_id: String::new(),
                    reason: "id is not UTF-8".into(),
                });
                continue;
            };
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            match store.insert(&id, values) {
                Ok(renormalized) => {
                    report.accepted += 1;
                    report.renormalized += usize::from(renormalized);
                }
                Err(reason) => report.rejected.push(RejectedVector {
                    record: rec,
                    paper_id: id,
                    reason,
                }),
            }
        }
        Ok((store, report))
    }

    pub fn load(path: &Path) -> Result<(Self, EmbeddingLoadReport)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (i, id) in self.ids.iter().enumerate() {
            let bytes = id.as_bytes();
            let len = u16::try_from(bytes.len())
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "id longer than 65535 bytes"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(bytes)?;
            for v in self.row(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file).map_err(|e| Error::io(path, e))
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn get(&self, paper_id: &str) -> Option<&[f32]> {
        self.by_id.get(paper_id).map(|&i| self.row(i))
    }

    pub fn vector(&self, paper_id: &str) -> Option<EmbeddingVector> {
        self.get(paper_id).map(|v| EmbeddingVector {
            paper_id: paper_id.to_owned(),
            values: v.to_vec(),
        })
    }

    /// Ids in the store that the corpus does not know about.
    pub fn unknown_ids<'a>(&'a self, corpus: &'a Corpus) -> impl Iterator<Item = &'a str> + 'a {
        self.ids
            .iter()
            .filter(|id| corpus.idx(id).is_err())
            .map(String::as_str)
    }
}

/// Where the engine gets confounder vectors from.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Precomputed {
        store: EmbeddingStore,
        /// Corpus index -> store row.
        rows: Vec<Option<u32>>,
    },
    Fallback { dims: usize, seed: u64 },
}

impl EmbeddingProvider {
    pub fn precomputed(store: EmbeddingStore, corpus: &Corpus) -> Self {
        let rows = corpus
            .records()
            .iter()
            .map(|p| store.by_id.get(&p.paper_id).map(|&r| r as u32))
            .collect();
        EmbeddingProvider::Precomputed { store, rows }
    }

    pub fn fallback(dims: usize) -> Self {
        EmbeddingProvider::Fallback {
            dims,
            seed: DEFAULT_FALLBACK_SEED,
        }
    }

    pub fn dims(&self) -> usize {
        match self {
            EmbeddingProvider::Precomputed { store, .. } => store.dims(),
            EmbeddingProvider::Fallback { dims, .. } => *dims,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, EmbeddingProvider::Fallback { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            EmbeddingProvider::Precomputed { store, .. } => {
                format!("precomputed ({} vectors, {} dims)", store.len(), store.dims())
            }
            EmbeddingProvider::Fallback { dims, .. } => {
                format!("fallback hashed bag-of-words ({dims} dims; for tests and demos only)")
            }
        }
    }

    /// Vector for a corpus paper; `None` when a precomputed store lacks it.
    pub fn vector(&self, idx: PaperIdx, cleaned: &CleanedText) -> Option<Cow<'_, [f32]>> {
        match self {
            EmbeddingProvider::Precomputed { store, rows } => rows
                .get(idx.get())
                .copied()
                .flatten()
                .map(|r| Cow::Borrowed(store.row(r as usize))),
            EmbeddingProvider::Fallback { dims, seed } => {
                Some(Cow::Owned(fallback_encode(&cleaned.tokens, *dims, *seed)))
            }
        }
    }

    /// True when `vector` would need the cleaned text to answer.
    pub fn needs_text(&self) -> bool {
        self.is_fallback()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn file_bytes(dims: u32, rows: &[(&str, &[f32])]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(dims.to_le_bytes());
        out.extend((rows.len() as u64).to_le_bytes());
        for (id, v) in rows {
            out.extend((id.len() as u16).to_le_bytes());
            out.extend(id.as_bytes());
            for x in *v {
                out.extend(x.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn load_normalizes_and_rejects_zero() {
        let bytes = file_bytes(
            4,
            &[("a", &[3.0, 4.0, 0.0, 0.0]), ("b", &[0.0, 0.0, 0.0, 1.0]), ("z", &[0.0; 4])],
        );
        let (store, report) = EmbeddingStore::read_from(bytes.as_slice()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(report.accepted, 2);
        assert_eq!(report.renormalized, 1);
        assert_eq!(report.rejected[0].reason, "zero norm");
        assert_eq!(store.get("a").unwrap(), &[0.6, 0.8, 0.0, 0.0]);
        for id in ["a", "b"] {
            let n = dot(store.get(id).unwrap(), store.get(id).unwrap()).sqrt();
            assert!((n - 1.0).abs() <= NORM_TOLERANCE);
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(EmbeddingStore::read_from(&b"CCEMB2\0\0\0\0"[..]), Err(Error::Format { .. })));
        assert!(matches!(EmbeddingStore::read_from(&b"CCEM"[..]), Err(Error::Format { .. })));
        let mut truncated = file_bytes(4, &[("a", &[1.0, 0.0, 0.0, 0.0])]);
        truncated.truncate(truncated.len() - 2);
        assert!(EmbeddingStore::read_from(truncated.as_slice()).is_err());
    }

    #[test]
    fn write_then_read() {
        let mut s = EmbeddingStore::new(3);
        s.insert("x", vec![1.0, 2.0, 2.0]).unwrap();
        s.insert("y", vec![0.0, -1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let (back, report) = EmbeddingStore::read_from(buf.as_slice()).unwrap();
        assert_eq!(report.renormalized, 0);
        assert_eq!(back.get("x"), s.get("x"));
        assert_eq!(back.get("y"), s.get("y"));
    }

    #[test]
    fn cosine_examples() {
        let u = fallback_encode(&toks("graph neural networks"), 64, 1);
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn fallback_sentinel_for_empty_text() {
        let v = fallback_encode(&[], 16, 7);
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fallback_is_stable_across_releases() {
        // Frozen so a hash change cannot slip through unnoticed.
        let v = fallback_encode(&toks("bitmap index"), 16, DEFAULT_FALLBACK_SEED);
        let nonzero: Vec<(usize, f32)> = v.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();
        assert_eq!(nonzero.len(), 2, "{nonzero:?}");
        let frozen = include_str!("../tests/data/fallback_bitmap_index.txt").trim();
        assert_eq!(format!("{nonzero:?}"), frozen);
    }

    #[test]
    fn disjoint_vocabularies_are_near_orthogonal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<String> = (0..30).map(|_| format!("a{}", rng.gen::<u32>())).collect();
            let b: Vec<String> = (0..30).map(|_| format!("b{}", rng.gen::<u32>())).collect();
            let cos = cosine_similarity(&fallback_encode(&a, 4096, 3), &fallback_encode(&b, 4096, 3)).unwrap();
            assert!(cos.abs() <= 0.1, "{cos}");
        }
    }

    proptest! {
        #[test]
        fn fallback_permutation_invariant(words in prop::collection::vec("[a-z]{1,6}", 0..25), seed in any::<u64>()) {
            let mut rev = words.clone();
            rev.reverse();
            let a = fallback_encode(&words, 32, seed);
            let b = fallback_encode(&rev, 32, seed);
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let n = dot(&a, &a).sqrt();
            prop_assert!((n - 1.0).abs() <= NORM_TOLERANCE);
        }

        #[test]
        fn cosine_symmetric_and_equals_dot(a in prop::collection::vec(-10.0f32..10.0, 8), b in prop::collection::vec(-10.0f32..10.0, 8)) {
            let mut s = EmbeddingStore::new(8);
            prop_assume!(s.insert("a", a).is_ok() && s.insert("b", b).is_ok());
            let (u, v) = (s.get("a").unwrap(), s.get("b").unwrap());
            prop_assert_eq!(cosine_similarity(u, v).unwrap(), cosine_similarity(v, u).unwrap());
            // On unit vectors the clamp is a no-op up to float drift.
            let naive = dot(u, v) / (dot(u, u).sqrt() * dot(v, v).sqrt());
            prop_assert!((cosine_similarity(u, v).unwrap() - naive).abs() < 1e-6);
        }
    }
}
