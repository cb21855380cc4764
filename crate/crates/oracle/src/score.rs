//! Naive per-sample scoring. Loops only; nothing from `coreset_core::scoring`.

use coreset_core::{FfnSummary, Record, SelectionConfig};

/// `(g, b, sorted (layer, neuron) pairs)`.
pub type OracleScore = (f64, f64, Vec<(u32, u32)>);

fn largest_k(values: &[f64], k: usize) -> Vec<u32> {
    let mut taken = vec![false; values.len()];
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..values.len() {
            if taken[i] {
                continue;
            }
            match best {
                None => best = Some(i),
                Some(b) => {
                    if values[i] > values[b] {
                        best = Some(i);
                    }
                }
            }
        }
        let b = best.expect("k <= len");
        taken[b] = true;
        out.push(b as u32);
    }
    out
}

fn token_term(row: &[f64]) -> f64 {
    let mut mass = 0.0;
    for &a in row {
        mass += a;
    }
    if mass == 0.0 {
        return 0.0;
    }
    if row.len() == 1 {
        return mass;
    }
    let mut e = 0.0;
    for &a in row {
        let p = a / mass;
        if p > 0.0 {
            e -= p * p.ln();
        }
    }
    mass * (1.0 - e / (row.len() as f64).ln())
}

fn sort_pairs(mut pairs: Vec<(u32, u32)>) -> Vec<(u32, u32)> {
    for i in 1..pairs.len() {
        let mut j = i;
        while j > 0 && pairs[j - 1] > pairs[j] {
            pairs.swap(j - 1, j);
            j -= 1;
        }
    }
    pairs
}

/// Scores a record by direct transcription of the extraction formulas.
pub fn oracle_score(rec: &Record, cfg: &SelectionConfig) -> Result<OracleScore, String> {
    let mut pairs = Vec::new();
    let (g, b) = match rec {
        Record::Raw(r) => {
            for (li, &layer) in cfg.layers.iter().enumerate() {
                let k = cfg.k_per_layer[li];
                let idx = match r.ffn.get(&layer).ok_or("missing ffn layer")? {
                    FfnSummary::Full(h) => {
                        if k > h.len() {
                            return Err("k exceeds d_ff".into());
                        }
                        largest_k(h, k)
                    }
                    FfnSummary::Ranked(list) => {
                        if k > list.len() {
                            return Err("k exceeds ranked list".into());
                        }
                        (0..k).map(|i| list[i].0).collect()
                    }
                };
                for n in idx {
                    pairs.push((layer, n));
                }
            }
            if !r.image_present {
                (0.0, 0.0)
            } else {
                let t = r.ce_with_image.len();
                let mut delta_sum = 0.0;
                for i in 0..t {
                    delta_sum += r.ce_without_image[i] - r.ce_with_image[i];
                }
                let g = delta_sum / t as f64;
                let mut layer_sum = 0.0;
                for &layer in &cfg.layers {
                    let rows = r.attn.get(&layer).ok_or("missing attn layer")?;
                    let mut tok_sum = 0.0;
                    for row in rows {
                        tok_sum += token_term(row);
                    }
                    layer_sum += tok_sum / rows.len() as f64;
                }
                (g, layer_sum / cfg.layers.len() as f64)
            }
        }
        Record::Compact(c) => {
            for (li, &layer) in cfg.layers.iter().enumerate() {
                let k = cfg.k_per_layer[li];
                let list = c.ffn_top.get(&layer).ok_or("missing ffn_top layer")?;
                if k > list.len() {
                    return Err("k exceeds ranked list".into());
                }
                for item in list.iter().take(k) {
                    pairs.push((layer, item.0));
                }
            }
            if !c.image_present {
                (0.0, 0.0)
            } else {
                let mut layer_sum = 0.0;
                for &layer in &cfg.layers {
                    let stats = c.token_stats.get(&layer).ok_or("missing token_stats layer")?;
                    let mut tok_sum = 0.0;
                    for &(mass, ne) in stats {
                        tok_sum += mass * (1.0 - ne);
                    }
                    layer_sum += tok_sum / stats.len() as f64;
                }
                (c.g, layer_sum / cfg.layers.len() as f64)
            }
        }
    };
    Ok((g, b, sort_pairs(pairs)))
}

/// Canonical key for sorted pairs, `layer:neuron` joined by `|`.
pub fn pairs_key(pairs: &[(u32, u32)]) -> String {
    let mut key = String::new();
    for (i, (l, n)) in pairs.iter().enumerate() {
        if i > 0 {
            key.push('|');
        }
        key.push_str(&format!("{l}:{n}"));
    }
    key
}
