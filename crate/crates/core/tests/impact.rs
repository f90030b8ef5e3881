mod common;

use std::collections::BTreeMap;

use causalcite::config::{BinMode, BinScale, Estimator};
use causalcite::corpus::PaperRecord;
use causalcite::graph::CitationEdge;
use causalcite::indices::{plan_sample, run_plan, Child};
use causalcite::synthetic::{SyntheticCorpus, SyntheticSpec};
use causalcite::textmatch::{rerank, PciDiagnostics, PciResult};
use causalcite::Error;
use common::{engine, rng, y};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A corpus where `p0000` has `children` follow-ups.
fn hub_corpus(children: usize, seed: u64) -> SyntheticCorpus {
    let mut sc = SyntheticCorpus::generate(&SyntheticSpec {
        papers: children * 3,
        years: 2,
        mean_refs: 1.0,
        seed,
        ..SyntheticSpec::default()
    });
    let hub = sc.records[0].paper_id.clone();
    let mut r = rng(seed);
    let mut others: Vec<usize> = (1..sc.records.len()).collect();
    others.shuffle(&mut r);
    sc.edges.retain(|e| e.from_id != hub);
    for &j in &others[..children] {
        sc.edges.push(CitationEdge {
            from_id: hub.clone(),
            to_id: sc.records[j].paper_id.clone(),
            is_influential: false,
        });
    }
    sc
}

#[test]
fn exhaustive_tci_is_the_sum_over_children() {
    let sc = hub_corpus(100, 31);
    let eng = engine(&sc, |c| c.matching.threshold = 0.5);
    let a = &sc.records[0].paper_id;
    let exact = eng.impact_exact(a).unwrap();
    assert_eq!(exact.children_count, 100);
    assert!(exact.sample_plan.is_exhaustive());
    let children: Vec<&String> = sc.edges.iter().filter(|e| &e.from_id == a).map(|e| &e.to_id).collect();
    let brute: f64 = children.iter().map(|b| eng.pci(a, b).unwrap().pci).sum();
    assert!((exact.tci - brute).abs() <= 1e-9, "{} vs {brute}", exact.tci);
    assert_eq!(exact.aci * exact.children_count as f64, exact.tci);

    // Asking for more samples than children is the exhaustive case too.
    let mut sample = eng.config().sample.clone();
    sample.n = 500;
    let big = eng.impact_with(a, &sample).unwrap();
    assert!((big.tci - brute).abs() <= 1e-9);
}

#[test]
fn impact_is_reproducible_across_runs_and_workers() {
    let sc = hub_corpus(80, 32);
    let a = sc.records[0].paper_id.clone();
    let one = engine(&sc, |c| c.workers = 1);
    let many = engine(&sc, |c| c.workers = 6);
    let first = serde_json::to_string(&one.impact(&a).unwrap()).unwrap();
    assert_eq!(first, serde_json::to_string(&one.impact(&a).unwrap()).unwrap());
    assert_eq!(first, serde_json::to_string(&many.impact(&a).unwrap()).unwrap());
    let other_seed = engine(&sc, |c| c.sample.seed = 99);
    assert_ne!(first, serde_json::to_string(&other_seed.impact(&a).unwrap()).unwrap());
}

#[test]
fn no_follow_ups_is_an_error() {
    let sc = hub_corpus(10, 33);
    let eng = engine(&sc, |_| {});
    let lonely = sc
        .records
        .iter()
        .find(|r| !sc.edges.iter().any(|e| e.from_id == r.paper_id))
        .unwrap();
    match eng.impact(&lonely.paper_id) {
        Err(Error::Contract(m)) => assert!(m.contains("no follow-up")),
        other => panic!("{other:?}"),
    }
}

fn known_pci(b: &str, value: f64) -> PciResult {
    let (set, _) = rerank(b, Vec::new(), 0.81, 10);
    PciResult::new("a", b, value, set, PciDiagnostics::default())
}

/// 1,000 follow-ups with power-law citations and PCIs that grow with them.
fn long_tail_children(seed: u64) -> (Vec<Child>, BTreeMap<String, f64>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.15).unwrap();
    let mut kids = Vec::new();
    let mut pcis = BTreeMap::new();
    for i in 0..1000 {
        let u: f64 = r.gen();
        let c = ((1.0 - u).powf(-1.0 / 1.1) - 1.0).floor().min(1e6) as u64;
        let id = format!("b{i:04}");
        pcis.insert(id.clone(), 0.9 * y(c) + noise.sample(&mut r));
        kids.push(Child { id, citation_count: c });
    }
    (kids, pcis)
}

fn estimates(kids: &[Child], pcis: &BTreeMap<String, f64>, bins: usize, estimator: Estimator, seeds: u64) -> Vec<f64> {
    (0..seeds)
        .map(|seed| {
            let plan = plan_sample("a", kids, 40, bins, BinMode::EqualWidth, BinScale::Log, seed).unwrap();
            run_plan(&plan, estimator, |b| Ok(known_pci(b, pcis[b]))).unwrap().tci
        })
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn stratified_estimator_is_unbiased_and_tighter() {
    let (kids, pcis) = long_tail_children(34);
    let truth: f64 = pcis.values().sum();
    let strat = estimates(&kids, &pcis, 8, Estimator::Stratified, 200);
    let srs = estimates(&kids, &pcis, 1, Estimator::PlainMean, 200);
    let (m, v) = mean_var(&strat);
    let se = (v / strat.len() as f64).sqrt();
    assert!((m - truth).abs() <= 2.0 * se, "mean {m} truth {truth} se {se}");
    let (_, v_srs) = mean_var(&srs);
    assert!(v <= v_srs, "stratified {v} vs srs {v_srs}");
}

#[test]
fn failed_draws_are_backfilled_from_the_same_bin() {
    let (kids, pcis) = long_tail_children(35);
    let plan = plan_sample("a", &kids, 40, 8, BinMode::EqualWidth, BinScale::Log, 3).unwrap();
    let bad: Vec<String> = plan.sampled_ids.iter().step_by(4).cloned().collect();
    let res = run_plan(&plan, Estimator::Stratified, |b| {
        if bad.iter().any(|x| x == b) {
            Err(Error::Contract("synthetic failure".into()))
        } else {
            Ok(known_pci(b, pcis[b]))
        }
    })
    .unwrap();
    assert_eq!(res.failed.len(), bad.len());
    let per_bin = |ids: &mut dyn Iterator<Item = &String>| {
        let mut counts = vec![0usize; plan.bins.len()];
        for id in ids {
            let h = plan.bins.iter().position(|b| b.member_ids.contains(id)).unwrap();
            counts[h] += 1;
        }
        counts
    };
    let got = per_bin(&mut res.per_sample.iter().map(|p| &p.b_id));
    let want: Vec<usize> = plan.bins.iter().map(|b| b.quota).collect();
    // Full quotas wherever the bin had spare members.
    for (h, b) in plan.bins.iter().enumerate() {
        let failed_here = res.failed.iter().filter(|f| f.bin == h).count();
        assert_eq!(got[h], want[h].min(b.size() - failed_here));
    }
}

fn paper(id: &str, text: &str, citations: u64) -> PaperRecord {
    PaperRecord {
        paper_id: id.into(),
        title: text.into(),
        abstract_text: String::new(),
        year: 2021,
        citation_count: citations,
        influential_citation_count: 0,
    }
}

#[test]
fn discrete_confounder_reduces_to_ratio_matching() {
    // Topics are the only confounder and every paper in a topic shares its
    // text, so matching by similarity is matching on the stratum.
    let strata = [
        "sparse matrix kernels",
        "protein folding dynamics",
        "bitmap index compression",
    ];
    let mut r = rng(36);
    let mut records = vec![paper("a", "causal estimators", 10)];
    let mut edges = Vec::new();
    let mut treated: Vec<Vec<f64>> = vec![Vec::new(); strata.len()];
    let mut control: Vec<Vec<f64>> = vec![Vec::new(); strata.len()];
    for (s, text) in strata.iter().enumerate() {
        for k in 0..r.gen_range(2..6) {
            let c = r.gen_range(0..500);
            let id = format!("t{s}{k}");
            records.push(paper(&id, text, c));
            edges.push(CitationEdge {
                from_id: "a".into(),
                to_id: id,
                is_influential: false,
            });
            treated[s].push(y(c));
        }
        for k in 0..r.gen_range(2..6) {
            let c = r.gen_range(0..500);
            records.push(paper(&format!("c{s}{k}"), text, c));
            control[s].push(y(c));
        }
    }
    let sc = SyntheticCorpus {
        topics: vec![0; records.len()],
        records,
        edges,
    };
    let eng = engine(&sc, |c| {
        c.matching.max_matches = 100;
        c.fallback_dims = 4096;
        c.sample.estimator = Estimator::PlainMean;
    });
    let res = eng.impact_exact("a").unwrap();

    let n_treated: usize = treated.iter().map(Vec::len).sum();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ratio: f64 = (0..strata.len())
        .map(|s| treated[s].len() as f64 / n_treated as f64 * (mean(&treated[s]) - mean(&control[s])))
        .sum();
    assert!((res.aci - ratio).abs() <= 1e-9, "{} vs {ratio}", res.aci);
}
