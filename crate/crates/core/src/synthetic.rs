//! Deterministic synthetic corpora for demos, tests and benchmarks.
//!
//! Papers draw their words from a per-topic vocabulary plus a shared one,
//! citation counts follow a discrete power law, and every edge points from an
//! older paper to a newer one, so the graph is always acyclic. References
//! attach preferentially, giving a long tail of follow-up counts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, PaperRecord};
use crate::error::{Error, Result};
use crate::graph::{CitationEdge, CitationGraph, EdgeIngestReport, GraphBuilder};

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "tu", "re", "sa", "no", "vi", "de", "po", "ga", "li", "ze", "ru", "fa", "ko", "ne", "bi", "so", "ta",
];

/// Letters-only word for `n`; digits would be stripped as numbers.
pub fn word(n: usize) -> String {
    let mut n = n;
    let mut out = String::new();
    for _ in 0..3 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    while n > 0 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub papers: usize,
    pub first_year: i32,
    pub years: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub shared_words: usize,
    pub title_words: usize,
    pub abstract_words: usize,
    /// Probability that a word comes from the paper's topic vocabulary.
    pub topic_share: f64,
    /// Average number of references per paper (to older papers).
    pub mean_refs: f64,
    /// Probability that a reference goes to a paper of the same topic.
    pub same_topic_refs: f64,
    pub influential_share: f64,
    /// Tail exponent of the citation-count power law.
    pub citation_alpha: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            papers: 200,
            first_year: 2010,
            years: 4,
            topics: 8,
            words_per_topic: 8,
            shared_words: 30,
            title_words: 5,
            abstract_words: 30,
            topic_share: 0.9,
            mean_refs: 3.0,
            same_topic_refs: 0.7,
            influential_share: 0.2,
            citation_alpha: 1.2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<PaperRecord>,
    pub edges: Vec<CitationEdge>,
    /// Topic of each record, aligned with `records`.
    pub topics: Vec<usize>,
}

impl SyntheticCorpus {
    pub fn generate(spec: &SyntheticSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let topics_n = spec.topics.max(1);
        let shared: Vec<String> = (0..spec.shared_words).map(word).collect();
        let topic_vocab: Vec<Vec<String>> = (0..topics_n)
            .map(|t| {
                (0..spec.words_per_topic.max(1))
                    .map(|w| word(spec.shared_words + t * spec.words_per_topic.max(1) + w))
                    .collect()
            })
            .collect();
        let width = spec.papers.max(1).to_string().len().max(4);
        let years = spec.years.max(1);

        let mut records = Vec::with_capacity(spec.papers);
        let mut topics: Vec<usize> = Vec::with_capacity(spec.papers);
        // Each paper appears once plus once per citation received, so
        // uniform draws from these lists attach preferentially.
        let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); topics_n];
        let mut attachment: Vec<usize> = Vec::new();
        let mut edges = Vec::new();
        for i in 0..spec.papers {
            let topic = rng.gen_range(0..topics_n);
            let draw = |n: usize, rng: &mut ChaCha8Rng| {
                (0..n)
                    .map(|_| {
                        if shared.is_empty() || rng.gen_bool(spec.topic_share) {
                            topic_vocab[topic].choose(rng).unwrap().as_str()
                        } else {
                            shared.choose(rng).unwrap().as_str()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let title = draw(spec.title_words, &mut rng);
            let abstract_text = draw(spec.abstract_words, &mut rng);
            let u: f64 = rng.gen();
            let citation_count = ((1.0 - u).powf(-1.0 / spec.citation_alpha) - 1.0).floor().min(1e6) as u64;
            let influential_citation_count = (citation_count as f64 * rng.gen_range(0.0..0.2)).floor() as u64;
            let year = spec.first_year + (i * years / spec.papers.max(1)) as i32;
            let paper_id = format!("p{i:0width$}");

            if i > 0 {
                let want = poisson(spec.mean_refs, &mut rng).min(i);
                let mut cited = Vec::with_capacity(want);
                for _ in 0..want * 4 {
                    if cited.len() == want {
                        break;
                    }
                    let same = &by_topic[topic];
                    let j = if !same.is_empty() && rng.gen_bool(spec.same_topic_refs) {
                        *same.choose(&mut rng).unwrap()
                    } else {
                        *attachment.choose(&mut rng).unwrap()
                    };
                    if !cited.contains(&j) {
                        cited.push(j);
                    }
                }
                cited.sort_unstable();
                for &j in &cited {
                    attachment.push(j);
                    by_topic[topics[j]].push(j);
                }
                for j in cited {
                    edges.push(CitationEdge {
                        from_id: format!("p{j:0width$}"),
                        to_id: paper_id.clone(),
                        is_influential: rng.gen_bool(spec.influential_share),
                    });
                }
            }
            by_topic[topic].push(i);
            attachment.push(i);
            topics.push(topic);
            records.push(PaperRecord {
                paper_id,
                title,
                abstract_text,
                year,
                citation_count,
                influential_citation_count,
            });
        }
        SyntheticCorpus { records, edges, topics }
    }

    pub fn build(&self) -> Result<(Corpus, CitationGraph)> {
        self.clone().into_parts()
    }

    /// Like [`SyntheticCorpus::build`] without keeping a copy of the records.
    pub fn into_parts(self) -> Result<(Corpus, CitationGraph)> {
        let corpus = Corpus::from_records(self.records)?;
        let mut gb = GraphBuilder::new(&corpus);
        let mut report = EdgeIngestReport::default();
        for (row, e) in self.edges.iter().enumerate() {
            gb.push(e, row + 1, &mut report);
        }
        if let Some(bad) = report.rejected.first() {
            return Err(Error::contract(format!("synthetic edge {} rejected: {}", bad.row, bad.reason)));
        }
        let graph = gb.finish();
        Ok((corpus, graph))
    }

    /// Writes the corpus and edges in the ingest formats.
    pub fn write(&self, papers: &Path, edges: &Path) -> Result<()> {
        let f = File::create(papers).map_err(|e| Error::io(papers, e))?;
        let mut out = BufWriter::new(f);
        for r in &self.records {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(papers, e))?;
        }
        out.flush().map_err(|e| Error::io(papers, e))?;
        let f = File::create(edges).map_err(|e| Error::io(edges, e))?;
        let mut out = BufWriter::new(f);
        for e in &self.edges {
            writeln!(out, "{}\t{}\t{}", e.from_id, e.to_id, u8::from(e.is_influential)).map_err(|err| Error::io(edges, err))?;
        }
        out.flush().map_err(|e| Error::io(edges, e))
    }
}

/// Knuth's multiplication method; fine for the small means used here.
fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let limit = (-mean).exp();
    let mut k = 0;
    let mut p: f64 = rng.gen();
    while p > limit {
        k += 1;
        p *= rng.gen::<f64>();
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_are_letters_and_distinct() {
        let words: Vec<String> = (0..9000).map(word).collect();
        assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
        let unique: std::collections::HashSet<&String> = words.iter().collect();
        assert_eq!(unique.len(), words.len());
    }

    #[test]
    fn generation_is_deterministic_and_acyclic() {
        let spec = SyntheticSpec::default();
        let a = SyntheticCorpus::generate(&spec);
        assert_eq!(a, SyntheticCorpus::generate(&spec));
        assert_eq!(a.records.len(), 200);
        let (corpus, graph) = a.build().unwrap();
        assert_eq!(graph.edge_count(), a.edges.len());
        for (from, to, _) in graph.edges() {
            assert!(corpus.record(from).paper_id < corpus.record(to).paper_id);
        }
        let other = SyntheticCorpus::generate(&SyntheticSpec { seed: 8, ..spec });
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn records_validate() {
        let c = SyntheticCorpus::generate(&SyntheticSpec::default());
        for r in &c.records {
            r.validate().unwrap();
        }
    }
}
