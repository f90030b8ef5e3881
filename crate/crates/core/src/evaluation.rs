//! Metric-agnostic evaluation harnesses: reference-impact accuracy,
//! point-biserial award correlation, and log-linear fit with IQR outliers.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "sig")]
    Significant,
    #[serde(rename = "nonsig")]
    NonSignificant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub reference_id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceBatch {
    pub pivot_paper_id: String,
    pub rows: Vec<ReferenceRow>,
}

impl ReferenceBatch {
    fn split(&self) -> (Vec<f64>, Vec<f64>) {
        let sig = self
            .rows
            .iter()
            .filter(|r| r.label == Label::Significant)
            .map(|r| r.score)
            .collect();
        let non = self
            .rows
            .iter()
            .filter(|r| r.label == Label::NonSignificant)
            .map(|r| r.score)
            .collect();
        (sig, non)
    }

    /// Per non-significant row: the share of significant rows scoring
    /// strictly higher. Errors with the reason the batch cannot contribute.
    pub fn conformities(&self) -> std::result::Result<Vec<f64>, String> {
        if let Some(r) = self.rows.iter().find(|r| !r.score.is_finite()) {
            return Err(format!("non-finite score for {:?}", r.reference_id));
        }
        let (sig, non) = self.split();
        if sig.is_empty() {
            return Err("no significant references".into());
        }
        if non.is_empty() {
            return Err("no non-significant references".into());
        }
        Ok(non
            .iter()
            .map(|&x| sig.iter().filter(|&&s| s > x).count() as f64 / sig.len() as f64)
            .collect())
    }
}

/// Mean conformity over the batch's non-significant rows.
pub fn batch_accuracy(batch: &ReferenceBatch) -> std::result::Result<f64, String> {
    let c = batch.conformities()?;
    Ok(c.iter().sum::<f64>() / c.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Every non-significant row across all batches weighs the same.
    PooledRows,
    /// Each contributing batch weighs the same.
    BatchMean,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedBatch {
    pub pivot_paper_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetAccuracy {
    pub accuracy: f64,
    pub mode: AccuracyMode,
    pub contributing_batches: usize,
    pub non_significant_rows: usize,
    pub skipped: Vec<SkippedBatch>,
}

pub fn dataset_accuracy(batches: &[ReferenceBatch], mode: AccuracyMode) -> Result<DatasetAccuracy> {
    let mut skipped = Vec::new();
    let mut per_batch: Vec<Vec<f64>> = Vec::new();
    for b in batches {
        match b.conformities() {
            Ok(c) => per_batch.push(c),
            Err(reason) => skipped.push(SkippedBatch {
                pivot_paper_id: b.pivot_paper_id.clone(),
                reason,
            }),
        }
    }
    if per_batch.is_empty() {
        return Err(Error::contract("no batch has both significant and non-significant references"));
    }
    let rows: usize = per_batch.iter().map(Vec::len).sum();
    let accuracy = match mode {
        AccuracyMode::PooledRows => per_batch.iter().flatten().sum::<f64>() / rows as f64,
        AccuracyMode::BatchMean => {
            per_batch
                .iter()
                .map(|c| c.iter().sum::<f64>() / c.len() as f64)
                .sum::<f64>()
                / per_batch.len() as f64
        }
    };
    Ok(DatasetAccuracy {
        accuracy,
        mode,
        contributing_batches: per_batch.len(),
        non_significant_rows: rows,
        skipped,
    })
}

/// One reference as it appears in a batch file.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct BatchRef {
    pub id: String,
    pub label: Label,
    #[serde(default)]
    pub score_overrides: BTreeMap<String, f64>,
}

/// One line of a reference-batch file.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct BatchLine {
    pub pivot: String,
    pub refs: Vec<BatchRef>,
}

pub fn read_batches<R: BufRead>(reader: R) -> Result<Vec<BatchLine>> {
    read_jsonl(reader)
}

/// Parses JSON-lines, skipping blank lines; the first bad line is a format
/// error carrying its 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(Some(i + 1), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(Some(i + 1), e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Metric {
    Pci,
    Citations,
    Column(String),
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pci" => Ok(Metric::Pci),
            "citations" => Ok(Metric::Citations),
            _ => match s.strip_prefix("column:") {
                Some(name) if !name.is_empty() => Ok(Metric::Column(name.to_owned())),
                _ => Err(Error::contract(format!(
                    "unknown metric {s:?} (expected pci, citations or column:NAME)"
                ))),
            },
        }
    }

    pub fn column_name(&self) -> &str {
        match self {
            Metric::Pci => "pci",
            Metric::Citations => "citations",
            Metric::Column(name) => name,
        }
    }

    /// Score of `reference` for the batch pivoting on `pivot`: an override
    /// column when the file carries one, otherwise computed from the engine.
    pub fn score(&self, engine: Option<&Engine>, pivot: &str, reference: &BatchRef) -> Result<f64> {
        if let Some(&v) = reference.score_overrides.get(self.column_name()) {
            return Ok(v);
        }
        let need = || {
            Error::contract(format!(
                "reference {:?} has no {:?} value and no corpus is loaded to compute it",
                reference.id,
                self.column_name()
            ))
        };
        match self {
            Metric::Pci => Ok(engine.ok_or_else(need)?.pci(&reference.id, pivot)?.pci),
            Metric::Citations => Ok(engine.ok_or_else(need)?.corpus().get_paper(&reference.id)?.citation_count as f64),
            Metric::Column(_) => Err(need()),
        }
    }
}

/// Turns parsed batch lines into scored batches.
pub fn score_batches(lines: &[BatchLine], metric: &Metric, engine: Option<&Engine>) -> Result<Vec<ReferenceBatch>> {
    lines
        .iter()
        .map(|line| {
            let rows = line
                .refs
                .iter()
                .map(|r| {
                    Ok(ReferenceRow {
                        reference_id: r.id.clone(),
                        label: r.label,
                        score: metric.score(engine, &line.pivot, r)?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ReferenceBatch {
                pivot_paper_id: line.pivot.clone(),
                rows,
            })
        })
        .collect()
}

/// `(M1 - M0) / s * sqrt(p q)` with `s` the population standard deviation.
pub fn point_biserial(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::contract("labels and scores differ in length"));
    }
    if labels.len() < 2 {
        return Err(Error::contract("need at least two observations"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("non-finite score"));
    }
    let n = labels.len() as f64;
    let n1 = labels.iter().filter(|&&l| l).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::contract("both label classes must be present"));
    }
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(Error::contract("scores have zero variance"));
    }
    let class_mean = |want: bool, count: usize| {
        labels
            .iter()
            .zip(scores)
            .filter(|(&l, _)| l == want)
            .map(|(_, s)| s)
            .sum::<f64>()
            / count as f64
    };
    let (m1, m0) = (class_mean(true, n1), class_mean(false, n0));
    let (p, q) = (n1 as f64 / n, n0 as f64 / n);
    Ok(((m1 - m0) / sd * (p * q).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactPoint {
    pub paper_id: String,
    pub tci: f64,
    pub citations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub rmse: f64,
    pub points_used: usize,
    /// Ids of points with non-positive tci or citations.
    pub dropped: Vec<String>,
}

impl LogLinearFit {
    pub fn predict_log_tci(&self, citations: f64) -> f64 {
        self.slope * citations.log10() + self.intercept
    }
}

fn usable(p: &ImpactPoint) -> bool {
    p.tci > 0.0 && p.citations > 0.0 && p.tci.is_finite() && p.citations.is_finite()
}

/// Ordinary least squares of log10(tci) on log10(citations).
pub fn fit_log_linear(points: &[ImpactPoint]) -> Result<LogLinearFit> {
    let (kept, dropped): (Vec<&ImpactPoint>, Vec<&ImpactPoint>) = points.iter().partition(|p| usable(p));
    if kept.len() < 2 {
        return Err(Error::contract(format!(
            "log-linear fit needs at least 2 points with positive tci and citations, got {}",
            kept.len()
        )));
    }
    let xs: Vec<f64> = kept.iter().map(|p| p.citations.log10()).collect();
    let ys: Vec<f64> = kept.iter().map(|p| p.tci.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("all citation values are identical; slope undefined"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    Ok(LogLinearFit {
        slope,
        intercept,
        rmse: (sse / n).sqrt(),
        points_used: kept.len(),
        dropped: dropped.iter().map(|p| p.paper_id.clone()).collect(),
    })
}

/// Linear interpolation between order statistics ("type 7").
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Overcited,
    Aligned,
    Undercited,
    /// tci <= 0: outside the log-linear model.
    NegativeImpact,
    /// Positive tci but no citations: outside the log-linear model.
    NoCitations,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Overcited => "overcited",
            Category::Aligned => "aligned",
            Category::Undercited => "undercited",
            Category::NegativeImpact => "negative-impact",
            Category::NoCitations => "no-citations",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fences {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Fences {
    pub fn from_residuals(residuals: &[f64]) -> Self {
        let mut sorted = residuals.to_vec();
        sorted.sort_by(f64::total_cmp);
        Fences::from_quartiles(quantile(&sorted, 0.25), quantile(&sorted, 0.75))
    }

    pub fn from_quartiles(q1: f64, q3: f64) -> Self {
        let iqr = q3 - q1;
        Fences {
            q1,
            q3,
            lower: q1 - 1.5 * iqr,
            upper: q3 + 1.5 * iqr,
        }
    }

    /// Strictly beyond a fence is an outlier; on the fence is aligned.
    pub fn categorize(&self, residual: f64) -> Category {
        if residual < self.lower {
            Category::Overcited
        } else if residual > self.upper {
            Category::Undercited
        } else {
            Category::Aligned
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierClassification {
    pub paper_id: String,
    pub log_tci: Option<f64>,
    pub log_citations: Option<f64>,
    pub residual: Option<f64>,
    pub category: Category,
}

/// Residual `log10(tci) - predicted` per point, categorized against the IQR
/// fences of all residuals. Points the fit dropped get an informational
/// category instead.
pub fn classify_outliers(points: &[ImpactPoint], fit: &LogLinearFit) -> (Vec<OutlierClassification>, Option<Fences>) {
    let residuals: Vec<Option<f64>> = points
        .iter()
        .map(|p| usable(p).then(|| p.tci.log10() - fit.predict_log_tci(p.citations)))
        .collect();
    let present: Vec<f64> = residuals.iter().flatten().copied().collect();
    let fences = (!present.is_empty()).then(|| Fences::from_residuals(&present));
    let out = points
        .iter()
        .zip(residuals)
        .map(|(p, r)| {
            let category = match (r, fences) {
                (Some(r), Some(f)) => f.categorize(r),
                _ if p.tci <= 0.0 => Category::NegativeImpact,
                _ => Category::NoCitations,
            };
            OutlierClassification {
                paper_id: p.paper_id.clone(),
                log_tci: (p.tci > 0.0).then(|| p.tci.log10()),
                log_citations: (p.citations > 0.0).then(|| p.citations.log10()),
                residual: r,
                category,
            }
        })
        .collect();
    (out, fences)
}

/// Rank-ordered values (largest first, ties by id) for long-tail plots.
pub fn rank_distribution(values: &[(String, f64)]) -> Vec<(usize, String, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, (id, v))| (i + 1, id, v))
        .collect()
}
