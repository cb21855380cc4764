//! Quadratic, line-by-line transcription of the selection algorithm.
//!
//! Shares the resolved conventions with the library (tie rule, snapping of
//! set sizes, mass summation order, saturation skip during redistribution)
//! but none of its code.

use coreset_core::{ScoreRow, SelectionConfig, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEntry {
    pub sample_id: String,
    pub q: f64,
    pub bucket_key: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    Insufficient { achieved: usize, required: usize },
    Invalid(String),
}

/// Full oracle output, including intermediate quotas for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSelection {
    pub entries: Vec<OracleEntry>,
    pub bucket_keys: Vec<String>,
    pub initial_quotas: Vec<usize>,
    pub quotas: Vec<usize>,
}

fn snapped(x: f64, up: bool) -> usize {
    let nearest = x.round();
    let tol = 1e-9 * if nearest.abs() > 1.0 { nearest.abs() } else { 1.0 };
    if (x - nearest).abs() <= tol {
        nearest as usize
    } else if up {
        x.ceil() as usize
    } else {
        x.floor() as usize
    }
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    for i in 1..s.len() {
        let mut j = i;
        while j > 0 && s[j - 1] > s[j] {
            s.swap(j - 1, j);
            j -= 1;
        }
    }
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= s.len() {
        s[s.len() - 1]
    } else {
        s[i] + (pos - i as f64) * (s[i + 1] - s[i])
    }
}

fn norm(values: &[f64], low: f64, high: f64) -> Vec<f64> {
    let lo = percentile(values, low);
    let hi = percentile(values, high);
    let mut out = Vec::new();
    for &v in values {
        if hi <= lo {
            out.push(0.5);
        } else {
            let c = if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            };
            out.push((c - lo) / (hi - lo));
        }
    }
    out
}

/// Picks the best remaining candidate by `key` descending, lowest index on
/// ties (rows are id-sorted, so lowest index is lowest sample id).
fn take_best(candidates: &[usize], taken: &[bool], key: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in candidates {
        if taken[i] {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if key[i] > key[b] || (key[i] == key[b] && i < b) => Some(i),
            keep => keep,
        };
    }
    best
}

fn top(candidates: &[usize], key: &[f64], count: usize, n: usize) -> Vec<usize> {
    let mut taken = vec![false; n];
    let mut out = Vec::new();
    while out.len() < count {
        match take_best(candidates, &taken, key) {
            Some(i) => {
                taken[i] = true;
                out.push(i);
            }
            None => break,
        }
    }
    out
}

pub fn oracle_select(rows: &[ScoreRow], cfg: &SelectionConfig) -> Result<OracleSelection, OracleError> {
    let mut d = rows.to_vec();
    d.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    for i in 1..d.len() {
        if d[i].sample_id == d[i - 1].sample_id {
            return Err(OracleError::Invalid(format!("duplicate id {}", d[i].sample_id)));
        }
    }
    let n = d.len();
    if n == 0 {
        return Err(OracleError::Invalid("empty".into()));
    }
    let m = match cfg.budget_m {
        Some(m) => m,
        None => snapped(cfg.budget_fraction * n as f64, false),
    };

    // Normalization and joint quality.
    let g: Vec<f64> = d.iter().map(|r| r.g).collect();
    let b: Vec<f64> = d.iter().map(|r| r.b).collect();
    let g_hat = norm(&g, cfg.clip_percentiles.0, cfg.clip_percentiles.1);
    let b_hat = norm(&b, cfg.clip_percentiles.0, cfg.clip_percentiles.1);
    let mut q = Vec::new();
    for i in 0..n {
        q.push(cfg.alpha * g_hat[i] + cfg.beta * b_hat[i]);
    }

    // Eligibility on raw gain.
    let all: Vec<usize> = (0..n).collect();
    let mut e_size = snapped(cfg.rho * n as f64, true);
    if e_size > n {
        e_size = n;
    }
    let eligible = top(&all, &g, e_size, n);

    // Quality shortlist.
    let mut s_size = snapped(cfg.eta * m as f64, true);
    if s_size > eligible.len() {
        s_size = eligible.len();
    }
    let short = top(&eligible, &q, s_size, n);

    // Buckets by signature, keys ascending, members in id order.
    let mut keys: Vec<String> = Vec::new();
    for &i in &short {
        if !keys.contains(&d[i].signature) {
            keys.push(d[i].signature.clone());
        }
    }
    keys.sort();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for key in &keys {
        let mut bucket = Vec::new();
        for i in 0..n {
            if d[i].signature == *key && short.contains(&i) {
                bucket.push(i);
            }
        }
        members.push(bucket);
    }
    let k = keys.len();

    // Shifted temperature mass and weights.
    let mut q_max = f64::NEG_INFINITY;
    for &i in &short {
        if q[i] > q_max {
            q_max = q[i];
        }
    }
    let mut mass = Vec::new();
    for bucket in &members {
        let mut mj = 0.0;
        for &i in bucket {
            mj += ((q[i] - q_max) / cfg.tau).exp();
        }
        mass.push(mj);
    }
    let mut total = 0.0;
    for &mj in &mass {
        total += mj;
    }

    // Capped initial quota.
    let cap = snapped(cfg.gamma * m as f64, true);
    let mut quota = Vec::new();
    let mut frac = Vec::new();
    for j in 0..k {
        let share = m as f64 * (mass[j] / total);
        let fl = snapped(share, false) as f64;
        // Remainders are compared in units of 1e-9.
        let r = if share > fl { share - fl } else { 0.0 };
        frac.push((r * 1e9).round());
        let mut nj = members[j].len();
        if cap < nj {
            nj = cap;
        }
        if (fl as usize) < nj {
            nj = fl as usize;
        }
        quota.push(nj);
    }
    let initial_quotas = quota.clone();

    // Redistribute leftover by descending fractional remainder.
    let mut order: Vec<usize> = Vec::new();
    let mut used = vec![false; k];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for j in 0..k {
            if used[j] {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) => {
                    let better = frac[j] > frac[b]
                        || (frac[j] == frac[b] && mass[j] > mass[b])
                        || (frac[j] == frac[b] && mass[j] == mass[b] && keys[j] < keys[b]);
                    if better {
                        Some(j)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let b = best.unwrap();
        used[b] = true;
        order.push(b);
    }
    let assigned: usize = quota.iter().sum();
    let mut leftover = m.saturating_sub(assigned);
    while leftover > 0 {
        let mut progressed = false;
        for &j in &order {
            if leftover == 0 {
                break;
            }
            let limit = if members[j].len() < cap { members[j].len() } else { cap };
            if quota[j] < limit {
                quota[j] += 1;
                leftover -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    // Top-quota per bucket.
    let mut chosen = vec![false; n];
    let mut entries = Vec::new();
    for j in 0..k {
        for i in top(&members[j], &q, quota[j], n) {
            chosen[i] = true;
            entries.push(OracleEntry {
                sample_id: d[i].sample_id.clone(),
                q: q[i],
                bucket_key: d[i].signature.clone(),
                stage: Stage::Bucket,
            });
        }
    }

    // Backfill S \ C, then E \ C, then optionally D \ C.
    let mut pools = vec![(Stage::BackfillShortlist, short.clone()), (Stage::BackfillEligible, eligible.clone())];
    if cfg.allow_global_backfill {
        pools.push((Stage::BackfillGlobal, all.clone()));
    }
    for (stage, pool) in pools {
        while entries.len() < m {
            match take_best(&pool, &chosen, &q) {
                Some(i) => {
                    chosen[i] = true;
                    entries.push(OracleEntry {
                        sample_id: d[i].sample_id.clone(),
                        q: q[i],
                        bucket_key: d[i].signature.clone(),
                        stage,
                    });
                }
                None => break,
            }
        }
    }
    if entries.len() < m {
        return Err(OracleError::Insufficient {
            achieved: entries.len(),
            required: m,
        });
    }
    Ok(OracleSelection {
        entries,
        bucket_keys: keys,
        initial_quotas,
        quotas: quota,
    })
}
