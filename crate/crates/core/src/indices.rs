//! Paper-level impact: ACI and TCI from a citation-stratified sample of
//! follow-up papers.
//!
//! Follow-ups are binned by outcome into intervals, each bin is sampled
//! without replacement under a seeded RNG with quotas proportional to bin
//! size, and the bin means are recombined with weights `N_h / |B|`.
//! `TCI = ACI * |B|`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BinMode, BinScale, Estimator, SampleConfig};
use crate::corpus::PaperIdx;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::textmatch::{outcome, PciResult};

pub const IMPACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    /// Ascending by id.
    pub member_ids: Vec<String>,
    pub quota: usize,
    /// Members in sampling order; the first `quota` are the sample and the
    /// rest are backfill candidates.
    #[serde(skip)]
    pub draw_order: Vec<String>,
}

impl Bin {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePlan {
    pub paper_a: String,
    pub children_count: usize,
    pub n_requested: usize,
    pub bin_mode: BinMode,
    pub bin_scale: BinScale,
    pub seed: u64,
    pub bins: Vec<Bin>,
    /// Bin by bin, in draw order.
    pub sampled_ids: Vec<String>,
}

impl SamplePlan {
    pub fn is_exhaustive(&self) -> bool {
        self.sampled_ids.len() == self.children_count
    }
}

/// A follow-up paper with its citation count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Child {
    pub id: String,
    pub citation_count: u64,
}

fn bin_value(c: &Child, scale: BinScale) -> f64 {
    match scale {
        BinScale::Log => outcome(c.citation_count),
        BinScale::Raw => c.citation_count as f64,
    }
}

/// Groups children into bins, each sorted by id, as (lower, upper, members).
fn make_bins(children: &[Child], bin_count: usize, mode: BinMode, scale: BinScale) -> Vec<(f64, f64, Vec<Child>)> {
    let values: Vec<f64> = children.iter().map(|c| bin_value(c, scale)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo || bin_count == 1 {
        let mut all = children.to_vec();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        return vec![(lo, hi, all)];
    }
    let mut bins: Vec<(f64, f64, Vec<Child>)> = match mode {
        BinMode::EqualWidth => {
            let width = (hi - lo) / bin_count as f64;
            let mut bins: Vec<(f64, f64, Vec<Child>)> = (0..bin_count)
                .map(|h| {
                    let upper = if h + 1 == bin_count { hi } else { lo + (h + 1) as f64 * width };
                    (lo + h as f64 * width, upper, Vec::new())
                })
                .collect();
            for (c, &v) in children.iter().zip(&values) {
                let h = (((v - lo) / width) as usize).min(bin_count - 1);
                bins[h].2.push(c.clone());
            }
            bins
        }
        BinMode::Quantile => {
            let mut order: Vec<usize> = (0..children.len()).collect();
            order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then_with(|| children[i].id.cmp(&children[j].id)));
            let m = children.len();
            (0..bin_count)
                .map(|h| (h * m / bin_count, (h + 1) * m / bin_count))
                .filter(|(s, e)| e > s)
                .map(|(s, e)| {
                    let members: Vec<Child> = order[s..e].iter().map(|&i| children[i].clone()).collect();
                    (values[order[s]], values[order[e - 1]], members)
                })
                .collect()
        }
    };
    for b in &mut bins {
        b.2.sort_by(|x, y| x.id.cmp(&y.id));
    }
    bins
}

/// Largest-remainder proportional allocation of `n` draws over bin sizes,
/// then at least one draw per non-empty bin when `n` allows it.
pub fn allocate_quotas(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if n >= total {
        return sizes.to_vec();
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| n * s / total).collect();
    let mut left = n - quotas.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..sizes.len()).collect();
    by_remainder.sort_by(|&i, &j| ((n * sizes[j]) % total).cmp(&((n * sizes[i]) % total)).then(i.cmp(&j)));
    for &i in &by_remainder {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    let non_empty = sizes.iter().filter(|&&s| s > 0).count();
    if n >= non_empty {
        while let Some(starved) = (0..sizes.len()).find(|&i| sizes[i] > 0 && quotas[i] == 0) {
            // Donor: the largest quota above one; ties go to the lowest index.
            let donor = (0..sizes.len())
                .filter(|&i| quotas[i] > 1)
                .max_by(|&i, &j| quotas[i].cmp(&quotas[j]).then(j.cmp(&i)))
                .expect("n >= non-empty bins leaves a donor");
            quotas[donor] -= 1;
            quotas[starved] += 1;
        }
    }
    quotas
}

/// Builds a reproducible stratified sample plan over `children`.
pub fn plan_sample(
    paper_a: &str,
    children: &[Child],
    n: usize,
    bin_count: usize,
    mode: BinMode,
    scale: BinScale,
    seed: u64,
) -> Result<SamplePlan> {
    if children.is_empty() {
        return Err(Error::contract("paper has no follow-up studies"));
    }
    if n < 1 {
        return Err(Error::contract("sample size must be >= 1"));
    }
    if bin_count < 1 {
        return Err(Error::contract("bin count must be >= 1"));
    }
    let unique: BTreeSet<&str> = children.iter().map(|c| c.id.as_str()).collect();
    if unique.len() != children.len() {
        return Err(Error::contract("duplicate follow-up ids"));
    }
    let raw = make_bins(children, bin_count, mode, scale);
    let sizes: Vec<usize> = raw.iter().map(|b| b.2.len()).collect();
    let quotas = allocate_quotas(&sizes, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins = Vec::with_capacity(raw.len());
    let mut sampled_ids = Vec::new();
    for ((lower, upper, members), quota) in raw.into_iter().zip(quotas) {
        let member_ids: Vec<String> = members.into_iter().map(|c| c.id).collect();
        let mut draw_order = member_ids.clone();
        draw_order.shuffle(&mut rng);
        sampled_ids.extend(draw_order[..quota].iter().cloned());
        bins.push(Bin {
            lower,
            upper,
            member_ids,
            quota,
            draw_order,
        });
    }
    Ok(SamplePlan {
        paper_a: paper_a.to_owned(),
        children_count: children.len(),
        n_requested: n,
        bin_mode: mode,
        bin_scale: scale,
        seed,
        bins,
        sampled_ids,
    })
}

/// ACI from per-bin sample values. Bins without any value drop out and the
/// remaining bin weights are renormalized.
pub fn aggregate(plan: &SamplePlan, per_bin: &[Vec<f64>], estimator: Estimator) -> Result<f64> {
    if per_bin.len() != plan.bins.len() {
        return Err(Error::contract("per-bin values do not match the plan"));
    }
    let count: usize = per_bin.iter().map(Vec::len).sum();
    if count == 0 {
        return Err(Error::contract("no successful samples"));
    }
    match estimator {
        Estimator::PlainMean => Ok(per_bin.iter().flatten().sum::<f64>() / count as f64),
        Estimator::Stratified => {
            let mut weighted = 0.0;
            let mut covered = 0usize;
            for (bin, values) in plan.bins.iter().zip(per_bin) {
                if values.is_empty() {
                    continue;
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                weighted += bin.size() as f64 * mean;
                covered += bin.size();
            }
            Ok(weighted / covered as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedSample {
    pub b_id: String,
    pub bin: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactResult {
    pub schema_version: u32,
    pub paper_a: String,
    pub aci: f64,
    pub tci: f64,
    pub children_count: usize,
    pub estimator: Estimator,
    pub sample_plan: SamplePlan,
    /// Successful samples, bin by bin in draw order.
    pub per_sample: Vec<PciResult>,
    /// Samples dropped (and backfilled where the bin allowed).
    pub failed: Vec<FailedSample>,
}

/// Evaluates the plan with `eval`, replacing failed draws with the next
/// member of the same bin. Evaluation runs in parallel; results are gathered
/// in plan order so the reduction is independent of scheduling.
pub fn run_plan<F>(plan: &SamplePlan, estimator: Estimator, eval: F) -> Result<ImpactResult>
where
    F: Fn(&str) -> Result<PciResult> + Sync,
{
    let mut cursor: Vec<usize> = plan.bins.iter().map(|b| b.quota).collect();
    let mut pending: Vec<(usize, usize)> = plan
        .bins
        .iter()
        .enumerate()
        .flat_map(|(h, b)| (0..b.quota).map(move |k| (h, k)))
        .collect();
    let mut done: Vec<(usize, usize, PciResult)> = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() {
        let outcomes: Vec<Result<PciResult>> = pending
            .par_iter()
            .map(|&(h, k)| eval(&plan.bins[h].draw_order[k]))
            .collect();
        let mut next = Vec::new();
        for ((h, k), res) in pending.into_iter().zip(outcomes) {
            match res {
                Ok(r) => done.push((h, k, r)),
                Err(e) => {
                    failed.push(FailedSample {
                        b_id: plan.bins[h].draw_order[k].clone(),
                        bin: h,
                        reason: e.to_string(),
                    });
                    if cursor[h] < plan.bins[h].size() {
                        next.push((h, cursor[h]));
                        cursor[h] += 1;
                    }
                }
            }
        }
        pending = next;
    }
    done.sort_by_key(|d| (d.0, d.1));
    let mut per_bin = vec![Vec::new(); plan.bins.len()];
    for (h, _, r) in &done {
        per_bin[*h].push(r.pci);
    }
    let aci = aggregate(plan, &per_bin, estimator).map_err(|_| {
        Error::contract(format!(
            "every sampled follow-up of {:?} failed ({} failures)",
            plan.paper_a,
            failed.len()
        ))
    })?;
    Ok(ImpactResult {
        schema_version: IMPACT_SCHEMA_VERSION,
        paper_a: plan.paper_a.clone(),
        aci,
        tci: aci * plan.children_count as f64,
        children_count: plan.children_count,
        estimator,
        sample_plan: plan.clone(),
        per_sample: done.into_iter().map(|d| d.2).collect(),
        failed,
    })
}

impl Engine {
    pub fn children_of(&self, a: PaperIdx) -> Result<Vec<Child>> {
        Ok(self
            .children(a)?
            .into_iter()
            .map(|c| {
                let r = self.corpus().record(c);
                Child {
                    id: r.paper_id.clone(),
                    citation_count: r.citation_count,
                }
            })
            .collect())
    }

    pub fn plan_sample(&self, a_id: &str, sample: &SampleConfig) -> Result<SamplePlan> {
        let a = self.corpus().idx(a_id)?;
        let children = self.children_of(a)?;
        plan_sample(
            a_id,
            &children,
            sample.n,
            sample.bins,
            sample.bin_mode,
            sample.bin_scale,
            sample.seed,
        )
    }

    /// ACI and TCI of `a_id` under the configured sampling parameters.
    pub fn impact(&self, a_id: &str) -> Result<ImpactResult> {
        self.impact_with(a_id, &self.config().sample.clone())
    }

    /// Exhaustive variant: every follow-up is evaluated.
    pub fn impact_exact(&self, a_id: &str) -> Result<ImpactResult> {
        let a = self.corpus().idx(a_id)?;
        let mut sample = self.config().sample.clone();
        sample.n = self.children(a)?.len().max(1);
        self.impact_with(a_id, &sample)
    }

    pub fn impact_with(&self, a_id: &str, sample: &SampleConfig) -> Result<ImpactResult> {
        let plan = self.plan_sample(a_id, sample)?;
        let a = self.corpus().idx(a_id)?;
        // Build indexes and the descendant set up front, outside the pool.
        let years: BTreeSet<i32> = plan
            .bins
            .iter()
            .flat_map(|b| &b.member_ids)
            .map(|id| self.corpus().get_paper(id).map(|r| r.year))
            .collect::<Result<_>>()?;
        for y in years {
            self.year_index(y);
        }
        self.graph().descendants(a)?;
        self.install(|| {
            run_plan(&plan, sample.estimator, |b_id| {
                let b = self.corpus().idx(b_id)?;
                self.pci_idx(a, b)
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmatch::{MatchSet, PciDiagnostics};

    fn kids(counts: &[u64]) -> Vec<Child> {
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Child {
                id: format!("c{i:04}"),
                citation_count: c,
            })
            .collect()
    }

    fn fake(id: &str, pci: f64) -> PciResult {
        let set = MatchSet {
            treated_id: id.into(),
            threshold: 0.81,
            max_matches: 10,
            entries: vec![],
            empty: true,
        };
        PciResult::new("a", id, pci, set, PciDiagnostics::default())
    }

    #[test]
    fn small_sets_are_exhaustive() {
        let p = plan_sample("a", &kids(&[1, 5, 50, 500, 5000]), 40, 8, BinMode::EqualWidth, BinScale::Log, 1).unwrap();
        assert!(p.is_exhaustive());
        let mut s = p.sampled_ids.clone();
        s.sort();
        assert_eq!(s, ["c0000", "c0001", "c0002", "c0003", "c0004"]);
    }

    #[test]
    fn equal_outcomes_collapse_to_one_bin() {
        let p = plan_sample("a", &kids(&[7; 100]), 40, 8, BinMode::EqualWidth, BinScale::Log, 3).unwrap();
        assert_eq!(p.bins.len(), 1);
        assert_eq!(p.bins[0].quota, 40);
        assert_eq!(p.sampled_ids.iter().collect::<BTreeSet<_>>().len(), 40);
    }

    #[test]
    fn uniform_outcomes_get_five_per_bin() {
        // Outcomes log10(1+c) evenly spread over [0, 4]: 125 children per bin.
        let counts: Vec<u64> = (0..1000)
            .map(|i| {
                let target = 4.0 * (i as f64 + 0.5) / 1000.0;
                (10f64.powf(target) - 1.0).round() as u64
            })
            .collect();
        let p = plan_sample("a", &kids(&counts), 40, 8, BinMode::EqualWidth, BinScale::Log, 5).unwrap();
        let sizes: Vec<usize> = p.bins.iter().map(Bin::size).collect();
        let quotas: Vec<usize> = p.bins.iter().map(|b| b.quota).collect();
        assert_eq!(quotas.iter().sum::<usize>(), 40);
        // Hand allocation: floor(40 * size / 1000) plus largest remainders.
        assert_eq!(quotas, allocate_quotas(&sizes, 40));
        for (q, s) in quotas.iter().zip(&sizes) {
            let exact = 40.0 * *s as f64 / 1000.0;
            assert!((*q as f64 - exact).abs() < 1.0, "{q} vs {exact}");
            assert!((4..=6).contains(q), "{quotas:?} from {sizes:?}");
        }
    }

    #[test]
    fn quota_arithmetic() {
        assert_eq!(allocate_quotas(&[125; 8], 40), [5; 8]);
        assert_eq!(allocate_quotas(&[3, 3, 4], 5), [2, 1, 2]);
        assert_eq!(allocate_quotas(&[1, 0, 98, 1], 4), [1, 0, 2, 1]);
        assert_eq!(allocate_quotas(&[2, 2], 10), [2, 2]);
        // Not enough draws to cover every bin.
        assert_eq!(allocate_quotas(&[10, 10, 10], 2).iter().sum::<usize>(), 2);
    }

    #[test]
    fn seeds_reproduce_plans() {
        let c = kids(&(0..300).map(|i| (i * i) as u64 % 977).collect::<Vec<_>>());
        let p1 = plan_sample("a", &c, 40, 8, BinMode::EqualWidth, BinScale::Log, 42).unwrap();
        let p2 = plan_sample("a", &c, 40, 8, BinMode::EqualWidth, BinScale::Log, 42).unwrap();
        let p3 = plan_sample("a", &c, 40, 8, BinMode::EqualWidth, BinScale::Log, 43).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1.sampled_ids, p3.sampled_ids);
        assert_eq!(p1.sampled_ids.len(), 40);
        assert_eq!(p1.sampled_ids.iter().collect::<BTreeSet<_>>().len(), 40);
    }

    #[test]
    fn bins_partition_children() {
        let c = kids(&(0..500).map(|i| (i * 7919) as u64 % 10_000).collect::<Vec<_>>());
        for mode in [BinMode::EqualWidth, BinMode::Quantile] {
            for scale in [BinScale::Log, BinScale::Raw] {
                let p = plan_sample("a", &c, 40, 8, mode, scale, 0).unwrap();
                let mut all: Vec<&String> = p.bins.iter().flat_map(|b| &b.member_ids).collect();
                assert_eq!(all.len(), 500);
                all.sort();
                all.dedup();
                assert_eq!(all.len(), 500);
                for b in &p.bins {
                    for id in &b.member_ids {
                        let child = c.iter().find(|x| &x.id == id).unwrap();
                        let v = bin_value(child, scale);
                        assert!(b.lower <= v && v <= b.upper, "{v} outside [{}, {}]", b.lower, b.upper);
                    }
                }
            }
        }
    }

    #[test]
    fn no_children_is_an_error() {
        assert!(plan_sample("a", &[], 40, 8, BinMode::EqualWidth, BinScale::Log, 0).is_err());
    }

    #[test]
    fn two_children_mean_and_total() {
        let p = plan_sample("a", &kids(&[1, 100]), 40, 8, BinMode::EqualWidth, BinScale::Log, 0).unwrap();
        let values = |id: &str| if id == "c0000" { 1.0 } else { 3.0 };
        let r = run_plan(&p, Estimator::Stratified, |id| Ok(fake(id, values(id)))).unwrap();
        assert_eq!(r.aci, 2.0);
        assert_eq!(r.tci, 4.0);
        assert_eq!(r.tci, r.aci * r.children_count as f64);
    }

    #[test]
    fn failed_samples_are_backfilled_within_bin() {
        let c = kids(&[5; 20]);
        let p = plan_sample("a", &c, 4, 1, BinMode::EqualWidth, BinScale::Log, 9).unwrap();
        let bad = p.sampled_ids[1].clone();
        let r = run_plan(&p, Estimator::Stratified, |id| {
            if id == bad {
                Err(Error::contract("missing embedding"))
            } else {
                Ok(fake(id, 1.0))
            }
        })
        .unwrap();
        assert_eq!(r.per_sample.len(), 4);
        assert_eq!(r.failed.len(), 1);
        assert_eq!(r.failed[0].b_id, bad);
        assert!(r.per_sample.iter().all(|s| s.b_id != bad));
        assert!(run_plan(&p, Estimator::Stratified, |_| Err(Error::contract("x"))).is_err());
    }
}
