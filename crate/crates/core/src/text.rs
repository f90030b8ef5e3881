//! Confounder text preparation: strip outcome-bearing content (numbers and
//! performance claims) from title + abstract, then tokenize.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::corpus::PaperRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BLOCKLIST: &[&str] = &[
    "state-of-the-art",
    "state of the art",
    "sota",
    "outperform",
    "outperforms",
    "outperformed",
    "new record",
    "best performance",
];

/// Integers, decimals, comma groups, percentages and ordinals like `3rd`.
fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\d(?:[\d.,]*\d)?(?:\s?%|(?:st|nd|rd|th)\b)?").expect("number regex")
    })
}

fn whitespace_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s+").expect("whitespace regex"))
}

#[derive(Debug, Clone)]
pub struct Blocklist {
    phrases: Vec<String>,
    pattern: Option<Regex>,
}

impl Default for Blocklist {
    fn default() -> Self {
        Blocklist::new(DEFAULT_BLOCKLIST.iter().copied())
    }
}

impl Blocklist {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Self {
        let mut phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        phrases.sort();
        phrases.dedup();
        // Longest first so "outperformed" wins over "outperform".
        let mut ordered: Vec<&String> = phrases.iter().collect();
        ordered.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let pattern = (!ordered.is_empty()).then(|| {
            let alts: Vec<String> = ordered
                .iter()
                .map(|p| {
                    p.split_whitespace()
                        .map(regex::escape)
                        .collect::<Vec<_>>()
                        .join(r"\s+")
                })
                .collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("blocklist regex")
        });
        Blocklist { phrases, pattern }
    }

    /// Parses a blocklist file: one phrase per line, `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Blocklist::new(text.lines().map(|l| match l.find('#') {
            Some(pos) => &l[..pos],
            None => l,
        }))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Blocklist::parse(&text))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    fn strip(&self, text: &str) -> String {
        let mut current = collapse(text);
        let Some(re) = &self.pattern else {
            return current;
        };
        // Removing one phrase can splice a new one together ("new sota record").
        loop {
            let next = collapse(&re.replace_all(&current, " "));
            if next == current {
                return current;
            }
            current = next;
        }
    }
}

fn collapse(text: &str) -> String {
    whitespace_pattern().replace_all(text, " ").trim().to_owned()
}

/// Removes numeric expressions and blocklisted phrases, collapsing
/// whitespace. Total and idempotent.
pub fn remove_mediator(raw: &str, blocklist: &Blocklist) -> String {
    let without_numbers = number_pattern().replace_all(raw, " ");
    blocklist.strip(&without_numbers)
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CleanedText {
    pub paper_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

/// Text cleaning with a fixed blocklist.
#[derive(Debug, Clone, Default)]
pub struct TextPrep {
    blocklist: Blocklist,
}

impl TextPrep {
    pub fn new(blocklist: Blocklist) -> Self {
        TextPrep { blocklist }
    }

    pub fn blocklist(&self) -> &Blocklist {
        &self.blocklist
    }

    pub fn clean_text(&self, raw: &str) -> String {
        remove_mediator(raw, &self.blocklist)
    }

    pub fn clean(&self, paper: &PaperRecord) -> CleanedText {
        let text = self.clean_text(&paper.title_abstract());
        let tokens = tokenize(&text);
        CleanedText {
            paper_id: paper.paper_id.clone(),
            text,
            tokens,
        }
    }
}
