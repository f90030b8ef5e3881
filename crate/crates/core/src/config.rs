//! Engine configuration: defaults, `key = value` files, and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieval::Bm25Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScale {
    /// Bin on log10(1 + citations), the outcome being averaged.
    Log,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Bin-weighted mean of per-bin PCI means.
    Stratified,
    /// Unweighted mean over all samples.
    PlainMean,
}

macro_rules! keyword_enum {
    ($ty:ty, $key:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::config($key, format!(
                        "unknown value {other:?} (expected one of: {})",
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(BinMode, "sample.bin_mode", { "equal_width" => BinMode::EqualWidth, "quantile" => BinMode::Quantile });
keyword_enum!(BinScale, "sample.bin_scale", { "log" => BinScale::Log, "raw" => BinScale::Raw });
keyword_enum!(Estimator, "sample.estimator", { "stratified" => Estimator::Stratified, "plain_mean" => Estimator::PlainMean });

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub blocklist: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchConfig {
    pub threshold: f64,
    pub max_matches: usize,
    pub coarse_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleConfig {
    pub n: usize,
    pub bins: usize,
    pub bin_mode: BinMode,
    pub bin_scale: BinScale,
    pub estimator: Estimator,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineConfig {
    pub paths: Paths,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub bm25: Bm25Params,
    pub sample: SampleConfig,
    pub influential_only: bool,
    pub fallback_dims: usize,
    /// Execution-only; excluded from result provenance because it cannot
    /// change any output.
    #[serde(skip)]
    pub workers: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            paths: Paths::default(),
            matching: MatchConfig {
                threshold: 0.81,
                max_matches: 10,
                coarse_k: 100,
            },
            bm25: Bm25Params::default(),
            sample: SampleConfig {
                n: 40,
                bins: 8,
                bin_mode: BinMode::EqualWidth,
                bin_scale: BinScale::Log,
                estimator: Estimator::Stratified,
                seed: 0,
            },
            influential_only: false,
            fallback_dims: 256,
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse {raw:?}: {e}")))
}

impl EngineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "paths.corpus",
        "paths.edges",
        "paths.embeddings",
        "paths.blocklist",
        "paths.store",
        "match.threshold",
        "match.max_matches",
        "match.coarse_k",
        "bm25.k1",
        "bm25.b",
        "sample.n",
        "sample.bins",
        "sample.bin_mode",
        "sample.bin_scale",
        "sample.estimator",
        "sample.seed",
        "graph.influential_only",
        "embedding.fallback_dims",
        "workers",
    ];

    /// Sets one dotted key from its textual value. Range checks happen in
    /// [`EngineConfig::validate`].
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let path = || Some(PathBuf::from(raw.trim()));
        match key {
            "paths.corpus" => self.paths.corpus = path(),
            "paths.edges" => self.paths.edges = path(),
            "paths.embeddings" => self.paths.embeddings = path(),
            "paths.blocklist" => self.paths.blocklist = path(),
            "paths.store" => self.paths.store = path(),
            "match.threshold" => self.matching.threshold = parse(key, raw)?,
            "match.max_matches" => self.matching.max_matches = parse(key, raw)?,
            "match.coarse_k" => self.matching.coarse_k = parse(key, raw)?,
            "bm25.k1" => self.bm25.k1 = parse(key, raw)?,
            "bm25.b" => self.bm25.b = parse(key, raw)?,
            "sample.n" => self.sample.n = parse(key, raw)?,
            "sample.bins" => self.sample.bins = parse(key, raw)?,
            "sample.bin_mode" => self.sample.bin_mode = raw.trim().parse()?,
            "sample.bin_scale" => self.sample.bin_scale = raw.trim().parse()?,
            "sample.estimator" => self.sample.estimator = raw.trim().parse()?,
            "sample.seed" => self.sample.seed = parse(key, raw)?,
            "graph.influential_only" => self.influential_only = parse(key, raw)?,
            "embedding.fallback_dims" => self.fallback_dims = parse(key, raw)?,
            "workers" => self.workers = parse(key, raw)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a TOML-style file: `key = value` lines, dotted keys or
    /// `[section]` tables, `#` comments.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::format(None, format!("config: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat);
        for (key, value) in flat {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matching;
        if !(-1.0..=1.0).contains(&m.threshold) {
            return Err(Error::config("match.threshold", "must be within [-1, 1]"));
        }
        if m.max_matches < 1 {
            return Err(Error::config("match.max_matches", "must be >= 1"));
        }
        if m.coarse_k < 1 {
            return Err(Error::config("match.coarse_k", "must be >= 1"));
        }
        self.bm25.validate()?;
        if self.sample.n < 1 {
            return Err(Error::config("sample.n", "must be >= 1"));
        }
        if self.sample.bins < 1 {
            return Err(Error::config("sample.bins", "must be >= 1"));
        }
        if self.fallback_dims < crate::embedding::MIN_FALLBACK_DIMS {
            return Err(Error::config(
                "embedding.fallback_dims",
                format!("must be >= {}", crate::embedding::MIN_FALLBACK_DIMS),
            ));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.matching.threshold, 0.81);
        assert_eq!((c.matching.max_matches, c.matching.coarse_k), (10, 100));
        assert_eq!((c.sample.n, c.sample.bins), (40, 8));
    }

    #[test]
    fn file_with_dotted_keys_and_sections() {
        let mut c = EngineConfig::default();
        c.apply_str(
            "# comment\nmatch.threshold = 0.7\nbm25.k1 = 1.2\n[sample]\nn = 12\nbin_mode = \"quantile\"\nseed = 9\n[paths]\ncorpus = \"papers.jsonl\"\n",
        )
        .unwrap();
        assert_eq!(c.matching.threshold, 0.7);
        assert_eq!(c.bm25.k1, 1.2);
        assert_eq!(c.sample.n, 12);
        assert_eq!(c.sample.bin_mode, BinMode::Quantile);
        assert_eq!(c.sample.seed, 9);
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("papers.jsonl")));
    }

    #[test]
    fn violations_name_the_key() {
        let mut c = EngineConfig::default();
        c.set("bm25.b", "1.5").unwrap();
        match c.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bm25.b"),
            other => panic!("{other:?}"),
        }
        let mut c = EngineConfig::default();
        assert!(matches!(c.set("match.bogus", "1"), Err(Error::Config { key, .. }) if key == "match.bogus"));
        assert!(matches!(c.set("sample.n", "many"), Err(Error::Config { key, .. }) if key == "sample.n"));
        assert!(matches!(c.set("sample.bin_mode", "log"), Err(Error::Config { key, .. }) if key == "sample.bin_mode"));
        c.set("sample.n", "0").unwrap();
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "sample.n"));
    }

    #[test]
    fn every_key_is_settable() {
        for key in EngineConfig::KEYS {
            let mut c = EngineConfig::default();
            let value = match *key {
                k if k.starts_with("paths.") => "x",
                "sample.bin_mode" => "equal_width",
                "sample.bin_scale" => "raw",
                "sample.estimator" => "plain_mean",
                "graph.influential_only" => "true",
                "match.threshold" | "bm25.k1" | "bm25.b" => "0.5",
                _ => "20",
            };
            c.set(key, value).unwrap();
        }
    }
}
