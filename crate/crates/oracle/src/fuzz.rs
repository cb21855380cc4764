//! Random instance generators for equivalence fuzzing.

use std::collections::BTreeMap;

use coreset_core::{CompactRecord, FfnSummary, Record, ScoreRow, SelectionConfig, SignalRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng_for(seed: u64, instance: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance);
    rng
}

/// A selection instance: `N <= 500` rows over `K <= 50` signatures with a
/// fuzzed configuration.
#[derive(Debug, Clone)]
pub struct SelectionInstance {
    pub rows: Vec<ScoreRow>,
    pub cfg: SelectionConfig,
}

fn quantized_or_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64, levels: Option<u32>) -> f64 {
    match levels {
        Some(l) => lo + (hi - lo) * rng.random_range(0..=l) as f64 / l as f64,
        None => rng.random_range(lo..hi),
    }
}

pub fn selection_instance(rng: &mut ChaCha8Rng) -> SelectionInstance {
    let n = rng.random_range(1..=500usize);
    let k = rng.random_range(1..=n.min(50));
    let keys: Vec<String> = (0..k)
        .map(|j| {
            let a = rng.random_range(0..4096u32);
            format!("8:{j}|12:{a}")
        })
        .collect();
    let g_levels = rng.random_bool(0.3).then(|| rng.random_range(1..6u32));
    let b_levels = rng.random_bool(0.3).then(|| rng.random_range(1..6u32));
    let g_scale = if rng.random_bool(0.1) { 1e6 } else { 1.0 };
    let text_only = if rng.random_bool(0.3) { 0.2 } else { 0.0 };
    // Skewed bucket sizes so some buckets dominate.
    let skew: f64 = rng.random_range(0.0..2.0);
    let rows = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let j = ((u.powf(1.0 + skew)) * k as f64) as usize;
            let (g, b) = if rng.random_bool(text_only) {
                (0.0, 0.0)
            } else {
                (
                    g_scale * quantized_or_uniform(rng, -1.0, 2.0, g_levels),
                    quantized_or_uniform(rng, 0.0, 1.0, b_levels),
                )
            };
            ScoreRow {
                sample_id: format!("r{:04}", (i * 7919) % 10_007),
                g,
                b,
                signature: keys[j.min(k - 1)].clone(),
            }
        })
        .collect();

    let pick = |rng: &mut ChaCha8Rng, p: f64, fixed: f64, lo: f64, hi: f64| {
        if rng.random_bool(p) {
            fixed
        } else {
            rng.random_range(lo..hi)
        }
    };
    let rho = pick(rng, 0.15, 1.0, 0.05, 1.0);
    let eta = pick(rng, 0.15, 1.0, 1.0, 4.0);
    let mut alpha = pick(rng, 0.15, 0.0, 0.0, 1.0);
    let beta = pick(rng, 0.15, 0.0, 0.0, 1.0);
    if alpha + beta == 0.0 {
        alpha = 0.5;
    }
    let tau = 10f64.powf(rng.random_range(-2.0..1.0));
    let gamma = pick(rng, 0.15, 1.0, 0.01, 1.0);
    let clip = if rng.random_bool(0.3) {
        (0.0, 100.0)
    } else {
        (rng.random_range(0.0..25.0), rng.random_range(75.0..=100.0))
    };
    let budget = rng.random_range(1..=n);
    let cfg = SelectionConfig {
        budget_m: Some(budget),
        rho,
        eta,
        alpha,
        beta,
        tau,
        gamma,
        clip_percentiles: clip,
        allow_global_backfill: rng.random_bool(0.5),
        ..SelectionConfig::default()
    };
    SelectionInstance { rows, cfg }
}

/// Scoring config over the default layer set with random per-layer `k`.
pub fn scoring_config(rng: &mut ChaCha8Rng) -> SelectionConfig {
    SelectionConfig {
        k_per_layer: (0..4).map(|_| rng.random_range(1..=3)).collect(),
        ..SelectionConfig::default()
    }
}

fn attention_row(rng: &mut ChaCha8Rng, n_v: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n_v)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    let total: f64 = row.iter().sum();
    let mass = match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    };
    if total > 0.0 {
        row.iter_mut().for_each(|x| *x *= mass / total * (1.0 - 1e-9));
    }
    row
}

/// A valid raw record over `layers`, with full or ranked FFN summaries.
pub fn raw_record(rng: &mut ChaCha8Rng, id: &str, layers: &[u32]) -> SignalRecord {
    let image_present = rng.random_bool(0.9);
    let t = rng.random_range(1..=5usize);
    let n_v = if rng.random_bool(0.1) { 1 } else { rng.random_range(2..=12usize) };
    let d_ff = rng.random_range(3..=80usize);
    let full = rng.random_bool(0.5);
    let (ce_with_image, ce_without_image) = if image_present {
        (
            (0..t).map(|_| rng.random_range(0.0..4.0)).collect(),
            (0..t).map(|_| rng.random_range(0.0..4.0)).collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let mut attn = BTreeMap::new();
    let mut ffn = BTreeMap::new();
    for &layer in layers {
        if image_present {
            attn.insert(layer, (0..t).map(|_| attention_row(rng, n_v)).collect());
        }
        let levels = rng.random_range(2..20u32);
        let h: Vec<f64> = (0..d_ff)
            .map(|_| (rng.random_range(0..levels) as f64) / levels as f64 - 0.2)
            .collect();
        let summary = if full {
            FfnSummary::Full(h)
        } else {
            let mut pairs: Vec<(u32, f64)> = h.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect();
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            pairs.truncate(64);
            FfnSummary::Ranked(pairs)
        };
        ffn.insert(layer, summary);
    }
    SignalRecord {
        v: 1,
        sample_id: id.to_string(),
        image_present,
        ce_with_image,
        ce_without_image,
        attn,
        ffn,
        n_visual_tokens: if image_present { n_v } else { 0 },
    }
}

/// A random record in either form; compact ones come from reducing a raw one.
pub fn any_record(rng: &mut ChaCha8Rng, id: &str, cfg: &SelectionConfig) -> Record {
    let raw = Record::Raw(raw_record(rng, id, &cfg.layers));
    if rng.random_bool(0.5) {
        raw
    } else {
        let compact: CompactRecord =
            coreset_core::reduce_to_compact(&raw, cfg).expect("generated records are valid");
        Record::Compact(compact)
    }
}
