//! Budgeted coreset selection over scored samples.
//!
//! The pipeline normalizes raw gain and relevance, forms a joint quality
//! score, keeps the top-gain eligible set, shortlists by quality, buckets the
//! shortlist by skill signature, allocates capped temperature-weighted quotas,
//! selects within buckets, and backfills any unused budget.
//!
//! Every "top" operation ranks by its key descending with ties broken by
//! ascending sample id. Rows are sorted by sample id on entry, so row index
//! order is sample-id order throughout.

mod allocate;
mod manifest;
mod normalize;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

pub use allocate::{allocate, Allocation};
pub use manifest::{
    input_hash, CoresetManifest, ManifestEntry, ManifestHeader, Stage, StageCounts,
    MANIFEST_VERSION,
};
pub use normalize::{percentile_sorted, quality, robust_norm};

use crate::config::{ceil_count, SelectionConfig};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scoring::ScoreRow;

/// A scored sample with its normalized scores and joint quality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityRow {
    pub sample_id: String,
    pub g: f64,
    pub b: f64,
    pub g_hat: f64,
    pub b_hat: f64,
    pub q: f64,
    pub signature: String,
}

/// All rows of a selection run, sorted by sample id.
#[derive(Debug, Clone)]
pub struct Population {
    pub rows: Vec<QualityRow>,
}

impl Population {
    /// Sorts by sample id, rejects duplicates, and computes `g_hat`, `b_hat`
    /// and `q`.
    pub fn new(rows: &[ScoreRow], cfg: &SelectionConfig, exec: Exec) -> Result<Self> {
        let sorted = sort_rows(rows, exec)?;
        Self::from_sorted(&sorted, cfg)
    }

    fn from_sorted(sorted: &[ScoreRow], cfg: &SelectionConfig) -> Result<Self> {
        let g: Vec<f64> = sorted.iter().map(|r| r.g).collect();
        let b: Vec<f64> = sorted.iter().map(|r| r.b).collect();
        let g_hat = robust_norm(&g, cfg.clip_percentiles)?;
        let b_hat = robust_norm(&b, cfg.clip_percentiles)?;
        let rows = sorted
            .iter()
            .enumerate()
            .map(|(i, r)| QualityRow {
                sample_id: r.sample_id.clone(),
                g: r.g,
                b: r.b,
                g_hat: g_hat[i],
                b_hat: b_hat[i],
                q: quality(g_hat[i], b_hat[i], cfg.alpha, cfg.beta),
                signature: r.signature.clone(),
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn by_q(&self) -> impl Fn(&usize, &usize) -> Ordering + Sync + '_ {
        move |&a, &b| desc_then_index(self.rows[a].q, self.rows[b].q, a, b)
    }
}

fn desc_then_index(ka: f64, kb: f64, a: usize, b: usize) -> Ordering {
    kb.partial_cmp(&ka).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

fn sort_rows(rows: &[ScoreRow], exec: Exec) -> Result<Vec<ScoreRow>> {
    if rows.is_empty() {
        return Err(Error::Dimension("no score rows to select from".into()));
    }
    let mut sorted = rows.to_vec();
    par::sort_by(exec, &mut sorted, |a, b| a.sample_id.cmp(&b.sample_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
        return Err(Error::DuplicateId(w[0].sample_id.clone()));
    }
    Ok(sorted)
}

/// Top `ceil(rho * N)` rows by raw gain; indices in rank order.
pub fn eligibility_filter(pop: &Population, rho: f64, exec: Exec) -> Vec<usize> {
    let n = pop.len();
    let keep = ceil_count(rho * n as f64).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    par::sort_by(exec, &mut idx, |&a, &b| {
        desc_then_index(pop.rows[a].g, pop.rows[b].g, a, b)
    });
    idx.truncate(keep);
    idx
}

/// Top `min(ceil(eta * M), |E|)` eligible rows by quality; indices in rank
/// order.
pub fn shortlist(pop: &Population, eligible: &[usize], eta: f64, m: usize, exec: Exec) -> Vec<usize> {
    let size = ceil_count(eta * m as f64).min(eligible.len());
    let mut idx = eligible.to_vec();
    par::sort_by(exec, &mut idx, pop.by_q());
    idx.truncate(size);
    idx
}

/// Shortlisted rows sharing one signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub key: String,
    /// Member row indices in ascending sample-id order.
    pub members: Vec<usize>,
    pub mass: f64,
    pub weight: f64,
    pub quota: usize,
}

/// Partitions the shortlist by signature key; buckets in ascending key order.
pub fn bucketize(pop: &Population, shortlist: &[usize]) -> Vec<Bucket> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in shortlist {
        groups.entry(pop.rows[i].signature.as_str()).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, mut members)| {
            members.sort_unstable();
            Bucket {
                key: key.to_string(),
                members,
                mass: 0.0,
                weight: 0.0,
                quota: 0,
            }
        })
        .collect()
}

/// Fills mass, weight and quota on each bucket.
pub fn allocate_buckets(pop: &Population, buckets: &mut [Bucket], tau: f64, gamma: f64, m: usize) -> Allocation {
    let qs: Vec<Vec<f64>> = buckets
        .iter()
        .map(|b| b.members.iter().map(|&i| pop.rows[i].q).collect())
        .collect();
    let refs: Vec<&[f64]> = qs.iter().map(Vec::as_slice).collect();
    let alloc = allocate(&refs, tau, gamma, m);
    for (j, b) in buckets.iter_mut().enumerate() {
        b.mass = alloc.mass[j];
        b.weight = alloc.weight[j];
        b.quota = alloc.quota[j];
    }
    alloc
}

/// Top-`quota` members of each bucket by quality, in rank order.
pub fn select_within_buckets(pop: &Population, buckets: &[Bucket]) -> Vec<Vec<usize>> {
    buckets
        .iter()
        .map(|b| {
            let mut members = b.members.clone();
            members.sort_by(pop.by_q());
            members.truncate(b.quota);
            members
        })
        .collect()
}

/// Intermediate sets of a run, kept for reporting and invariant checks.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub manifest: CoresetManifest,
    pub population: Population,
    pub eligible: Vec<usize>,
    pub shortlist: Vec<usize>,
    pub buckets: Vec<Bucket>,
    pub allocation: Allocation,
}

/// Runs the full selection pipeline.
pub fn run_selection(rows: &[ScoreRow], cfg: &SelectionConfig, exec: Exec) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let sorted = sort_rows(rows, exec)?;
    let pop = Population::from_sorted(&sorted, cfg)?;
    let n = pop.len();
    let m = cfg.resolve_budget(n);
    if m == 0 {
        return Err(Error::Config(format!("budget resolves to 0 for {n} rows")));
    }

    let eligible = eligibility_filter(&pop, cfg.rho, exec);
    let short = shortlist(&pop, &eligible, cfg.eta, m, exec);
    let mut buckets = bucketize(&pop, &short);
    let allocation = allocate_buckets(&pop, &mut buckets, cfg.tau, cfg.gamma, m);
    let picked = select_within_buckets(&pop, &buckets);

    let mut chosen = vec![false; n];
    let mut entries = Vec::with_capacity(m);
    let mut counts = StageCounts::default();
    let mut push = |i: usize, stage: Stage, chosen: &mut [bool], entries: &mut Vec<ManifestEntry>| {
        chosen[i] = true;
        counts.bump(stage);
        let row = &pop.rows[i];
        entries.push(ManifestEntry {
            sample_id: row.sample_id.clone(),
            q: row.q,
            bucket_key: row.signature.clone(),
            stage,
            rank_within_stage: counts.get(stage),
        });
    };

    for members in &picked {
        for &i in members {
            push(i, Stage::Bucket, &mut chosen, &mut entries);
        }
    }

    let mut eligible_by_q = eligible.clone();
    par::sort_by(exec, &mut eligible_by_q, pop.by_q());
    let mut pools: Vec<(Stage, Vec<usize>)> = vec![
        (Stage::BackfillShortlist, short.clone()),
        (Stage::BackfillEligible, eligible_by_q),
    ];
    if cfg.allow_global_backfill {
        let mut all: Vec<usize> = (0..n).collect();
        par::sort_by(exec, &mut all, pop.by_q());
        pools.push((Stage::BackfillGlobal, all));
    }
    for (stage, pool) in &pools {
        for &i in pool {
            if entries.len() >= m {
                break;
            }
            if !chosen[i] {
                push(i, *stage, &mut chosen, &mut entries);
            }
        }
    }

    if entries.len() < m {
        return Err(Error::InsufficientEligible {
            achieved: entries.len(),
            required: m,
        });
    }

    let mut snapshot = cfg.clone();
    snapshot.budget_m = Some(m);
    let header = ManifestHeader {
        kind: "header".into(),
        version: MANIFEST_VERSION,
        config: snapshot,
        input_hash: input_hash(&sorted),
        n_rows: n,
        budget: m,
        n_eligible: eligible.len(),
        n_shortlist: short.len(),
        n_buckets: buckets.len(),
        bucket_cap: allocation.cap,
        cap_hits: allocation.cap_hits,
        counts,
    };
    Ok(SelectionOutcome {
        manifest: CoresetManifest { header, entries },
        population: pop,
        eligible,
        shortlist: short,
        buckets,
        allocation,
    })
}

/// Baseline policy: the `m` highest-quality rows over the whole population.
pub fn top_by_quality(pop: &Population, m: usize, exec: Exec) -> Vec<usize> {
    let mut all: Vec<usize> = (0..pop.len()).collect();
    par::sort_by(exec, &mut all, pop.by_q());
    all.truncate(m);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, g: f64, b: f64, sig: &str) -> ScoreRow {
        ScoreRow {
            sample_id: id.into(),
            g,
            b,
            signature: sig.into(),
        }
    }

    fn pop_from(rows: &[ScoreRow]) -> Population {
        Population::new(rows, &SelectionConfig::default(), Exec::Serial).unwrap()
    }

    #[test]
    fn eligibility_counts_and_ties() {
        let rows: Vec<_> = (0..10).map(|i| row(&format!("s{i}"), i as f64, 0.0, "8:1")).collect();
        let pop = pop_from(&rows);
        let e = eligibility_filter(&pop, 0.6, Exec::Serial);
        assert_eq!(e.len(), 6);
        assert_eq!(e[0], 9);

        let tied: Vec<_> = ["d", "a", "c", "b", "e"].iter().map(|id| row(id, 1.0, 0.0, "8:1")).collect();
        let pop = pop_from(&tied);
        let e = eligibility_filter(&pop, 0.6, Exec::Serial);
        let ids: Vec<_> = e.iter().map(|&i| pop.rows[i].sample_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);

        assert_eq!(eligibility_filter(&pop, 1.0, Exec::Serial).len(), 5);
    }

    #[test]
    fn shortlist_sizes() {
        let rows: Vec<_> = (0..100).map(|i| row(&format!("s{i:03}"), 0.0, i as f64, "8:1")).collect();
        let pop = pop_from(&rows);
        let all: Vec<usize> = (0..100).collect();
        assert_eq!(shortlist(&pop, &all, 2.0, 30, Exec::Serial).len(), 60);
        assert_eq!(shortlist(&pop, &all[..40], 2.0, 30, Exec::Serial).len(), 40);
        let s = shortlist(&pop, &all[..40], 1.0, 40, Exec::Serial);
        let mut sorted = s.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, all[..40].to_vec());
    }

    #[test]
    fn bucketize_cases() {
        let same: Vec<_> = (0..5).map(|i| row(&format!("s{i}"), 0.0, 0.0, "8:1")).collect();
        let pop = pop_from(&same);
        assert_eq!(bucketize(&pop, &[0, 1, 2, 3, 4]).len(), 1);

        let distinct: Vec<_> = (0..5).map(|i| row(&format!("s{i}"), 0.0, 0.0, &format!("8:{i}"))).collect();
        let pop = pop_from(&distinct);
        let b = bucketize(&pop, &[4, 3, 2, 1, 0]);
        assert_eq!(b.len(), 5);
        assert!(b.iter().all(|b| b.members.len() == 1));
        assert!(b.windows(2).all(|w| w[0].key < w[1].key));
    }

    #[test]
    fn within_bucket_quota_edges() {
        let rows: Vec<_> = (0..4).map(|i| row(&format!("s{i}"), 0.0, i as f64, "8:1")).collect();
        let pop = pop_from(&rows);
        let mut b = bucketize(&pop, &[0, 1, 2, 3]);
        b[0].quota = 4;
        assert_eq!(select_within_buckets(&pop, &b)[0].len(), 4);
        b[0].quota = 0;
        assert!(select_within_buckets(&pop, &b)[0].is_empty());
        b[0].quota = 2;
        assert_eq!(select_within_buckets(&pop, &b)[0], vec![3, 2]);
    }

    #[test]
    fn budget_equals_population() {
        let rows: Vec<_> = (0..5).map(|i| row(&format!("s{i}"), i as f64, 0.1, &format!("8:{}", i % 2))).collect();
        let cfg = SelectionConfig {
            budget_m: Some(5),
            rho: 1.0,
            eta: 1.0,
            ..Default::default()
        };
        let out = run_selection(&rows, &cfg, Exec::Serial).unwrap();
        let mut ids: Vec<_> = out.manifest.sample_ids().collect();
        ids.sort_unstable();
        assert_eq!(ids, vec!["s0", "s1", "s2", "s3", "s4"]);
    }

    #[test]
    fn insufficient_without_global() {
        let rows: Vec<_> = (0..10).map(|i| row(&format!("s{i}"), i as f64, 0.1, "8:1")).collect();
        let cfg = SelectionConfig {
            budget_m: Some(8),
            ..Default::default()
        };
        assert_eq!(
            run_selection(&rows, &cfg, Exec::Serial).unwrap_err(),
            Error::InsufficientEligible { achieved: 6, required: 8 }
        );
        let cfg = SelectionConfig {
            allow_global_backfill: true,
            ..cfg
        };
        let out = run_selection(&rows, &cfg, Exec::Serial).unwrap();
        assert_eq!(out.manifest.entries.len(), 8);
        assert_eq!(out.manifest.header.counts.backfill_global, 2);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![row("a", 0.0, 0.0, "8:1"), row("a", 1.0, 0.0, "8:1")];
        assert_eq!(
            run_selection(&rows, &SelectionConfig::default(), Exec::Serial).unwrap_err(),
            Error::DuplicateId("a".into())
        );
    }

    #[test]
    fn manifest_roundtrip() {
        let rows: Vec<_> = (0..20).map(|i| row(&format!("s{i:02}"), (i * 7 % 11) as f64, (i % 5) as f64 / 5.0, &format!("8:{}", i % 3))).collect();
        let cfg = SelectionConfig {
            budget_m: Some(5),
            ..Default::default()
        };
        let out = run_selection(&rows, &cfg, Exec::Serial).unwrap();
        let text = out.manifest.to_jsonl();
        let back = CoresetManifest::parse(&text).unwrap();
        assert_eq!(back, out.manifest);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(out.manifest.ids_text().lines().count(), 5);
    }
}
