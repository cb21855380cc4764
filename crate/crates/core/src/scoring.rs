//! Per-sample score extraction: multimodal gain `g`, bridging relevance `b`,
//! and the skill-neuron signature.
//!
//! Every function here is pure and per-sample, so batches can be scored in
//! parallel with results identical to a sequential pass.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{LayerId, SelectionConfig};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::record::{from_json, FfnSummary, RankedNeurons, Record};

/// Canonical neuron ranking: higher activation first, ties by lower index.
pub fn neuron_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then(a.0.cmp(&b.0))
}

/// Mean per-answer-token drop in cross-entropy when the image is present.
/// Negative when the image hurts prediction.
pub fn multimodal_gain(ce_without: &[f64], ce_with: &[f64]) -> Result<f64> {
    if ce_without.is_empty() || ce_without.len() != ce_with.len() {
        return Err(Error::Dimension(format!(
            "cross-entropy arrays must have equal nonzero length (got {} and {})",
            ce_without.len(),
            ce_with.len()
        )));
    }
    let total: f64 = ce_without.iter().zip(ce_with).map(|(a, b)| a - b).sum();
    Ok(total / ce_without.len() as f64)
}

/// Attention mass on the visual block and normalized entropy of its
/// within-block distribution.
///
/// Zero-mass rows report entropy 1, and a single visual token reports
/// entropy 0. Entropy uses natural log and is divided by `ln N_v`.
pub fn token_attention_stats(row: &[f64]) -> Result<(f64, f64)> {
    if row.is_empty() {
        return Err(Error::Dimension("attention row has no visual tokens".into()));
    }
    if let Some(x) = row.iter().find(|&&x| x < 0.0 || x.is_nan()) {
        return Err(Error::Domain(format!("negative attention weight {x}")));
    }
    let mass: f64 = row.iter().sum();
    if mass == 0.0 {
        return Ok((0.0, 1.0));
    }
    if row.len() == 1 {
        return Ok((mass, 0.0));
    }
    let entropy: f64 = row
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / mass;
            -p * p.ln()
        })
        .sum();
    let norm = (entropy / (row.len() as f64).ln()).clamp(0.0, 1.0);
    Ok((mass, norm))
}

/// Mean over layers of the mean over answer tokens of `mass * (1 - norm_entropy)`.
pub fn bridging_relevance<'a, I>(layers: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a [(f64, f64)]>,
{
    let mut n_layers = 0usize;
    let mut n_tokens = None;
    let mut total = 0.0;
    for stats in layers {
        if stats.is_empty() {
            return Err(Error::Dimension("layer has no answer tokens".into()));
        }
        match n_tokens {
            None => n_tokens = Some(stats.len()),
            Some(t) if t != stats.len() => {
                return Err(Error::Dimension(format!(
                    "answer-token count differs across layers ({t} vs {})",
                    stats.len()
                )))
            }
            _ => {}
        }
        let layer_sum: f64 = stats.iter().map(|&(m, e)| m * (1.0 - e)).sum();
        total += layer_sum / stats.len() as f64;
        n_layers += 1;
    }
    if n_layers == 0 {
        return Err(Error::Dimension("no layers for bridging relevance".into()));
    }
    Ok(total / n_layers as f64)
}

/// Column-wise mean of per-answer-token FFN activations.
pub fn mean_answer_activation(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Dimension("no answer-token activation rows".into()))?;
    let width = first.len();
    let mut acc = vec![0.0; width];
    for row in rows {
        if row.len() != width {
            return Err(Error::Dimension(format!(
                "activation rows have unequal width ({width} vs {})",
                row.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x;
        }
    }
    let t = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= t);
    Ok(acc)
}

/// The `k` highest-activation `(index, value)` pairs in canonical order.
/// `k` is clamped to `h.len()`.
pub fn ranked_top(h: &[f64], k: usize) -> RankedNeurons {
    let mut pairs: Vec<(u32, f64)> = h.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect();
    let k = k.min(pairs.len());
    if k == 0 {
        return Vec::new();
    }
    if k < pairs.len() {
        pairs.select_nth_unstable_by(k - 1, neuron_order);
        pairs.truncate(k);
    }
    pairs.sort_unstable_by(neuron_order);
    pairs
}

/// Indices of the `k` largest activations, ordered by the canonical rule.
pub fn topk_neurons(h: &[f64], k: usize) -> Result<Vec<u32>> {
    if k > h.len() {
        return Err(Error::Dimension(format!(
            "top-{k} requested from {} neurons",
            h.len()
        )));
    }
    Ok(ranked_top(h, k).into_iter().map(|(i, _)| i).collect())
}

/// Canonical set of `(layer, neuron)` pairs; the bucketing key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkillSignature {
    pairs: Vec<(LayerId, u32)>,
    key: String,
}

impl SkillSignature {
    pub fn from_pairs(mut pairs: Vec<(LayerId, u32)>) -> Result<Self> {
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::schema("signature", "duplicate (layer, neuron) pair"));
        }
        let key = pairs
            .iter()
            .map(|(l, n)| format!("{l}:{n}"))
            .collect::<Vec<_>>()
            .join("|");
        Ok(Self { pairs, key })
    }

    /// Parses a canonical key. Non-canonical keys (unsorted or duplicated
    /// pairs) are rejected so that key and pair set stay in bijection.
    pub fn from_key(key: &str) -> Result<Self> {
        let bad = || Error::schema("signature", format!("malformed signature key `{key}`"));
        if key.is_empty() {
            return Err(bad());
        }
        let pairs = key
            .split('|')
            .map(|p| {
                let (l, n) = p.split_once(':').ok_or_else(bad)?;
                Ok((l.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?))
            })
            .collect::<Result<Vec<(LayerId, u32)>>>()?;
        let sig = Self::from_pairs(pairs)?;
        if sig.key != key {
            return Err(bad());
        }
        Ok(sig)
    }

    pub fn pairs(&self) -> &[(LayerId, u32)] {
        &self.pairs
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn into_key(self) -> String {
        self.key
    }
}

impl fmt::Display for SkillSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key)
    }
}

/// Takes the first `k_l` entries of each configured layer's ranked list.
pub fn skill_signature(
    ffn_top: &BTreeMap<LayerId, RankedNeurons>,
    layer_k: impl IntoIterator<Item = (LayerId, usize)>,
) -> Result<SkillSignature> {
    let mut pairs = Vec::new();
    for (layer, k) in layer_k {
        let list = ffn_top
            .get(&layer)
            .ok_or_else(|| Error::Dimension(format!("no ranked neurons for layer {layer}")))?;
        if list.len() < k {
            return Err(Error::Dimension(format!(
                "layer {layer} has {} ranked neurons, signature needs {k}",
                list.len()
            )));
        }
        pairs.extend(list[..k].iter().map(|&(n, _)| (layer, n)));
    }
    SkillSignature::from_pairs(pairs)
}

/// Per-sample scores as written to `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRow {
    pub sample_id: String,
    pub g: f64,
    pub b: f64,
    pub signature: String,
}

impl ScoreRow {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("score row serialization is infallible")
    }
}

/// Parses and validates one `scores.jsonl` line.
pub fn parse_score_row(line: &[u8]) -> Result<ScoreRow> {
    let row: ScoreRow = from_json(line)?;
    if row.sample_id.is_empty() {
        return Err(Error::schema("sample_id", "empty"));
    }
    if !row.g.is_finite() {
        return Err(Error::schema("g", "non-finite value"));
    }
    if !(0.0..=1.0 + crate::record::MASS_TOLERANCE).contains(&row.b) {
        return Err(Error::schema("b", "outside [0, 1]"));
    }
    SkillSignature::from_key(&row.signature)?;
    Ok(row)
}

fn ranked_for_signature(
    ffn: &BTreeMap<LayerId, FfnSummary>,
    cfg: &SelectionConfig,
) -> Result<BTreeMap<LayerId, RankedNeurons>> {
    cfg.layer_k()
        .map(|(layer, k)| {
            let summary = ffn
                .get(&layer)
                .ok_or_else(|| Error::schema("ffn", format!("missing configured layer {layer}")))?;
            let ranked = match summary {
                FfnSummary::Full(h) => {
                    topk_neurons(h, k)?;
                    ranked_top(h, k)
                }
                FfnSummary::Ranked(list) => list.clone(),
            };
            Ok((layer, ranked))
        })
        .collect()
}

/// Scores one record: `(g, b, signature)` over the configured layers.
/// Text-only samples score `g = b = 0` and keep their signature.
pub fn score_record(rec: &Record, cfg: &SelectionConfig) -> Result<ScoreRow> {
    let (sample_id, g, b, signature) = match rec {
        Record::Raw(raw) => {
            let (g, b) = if raw.image_present {
                let g = multimodal_gain(&raw.ce_without_image, &raw.ce_with_image)?;
                let per_layer = cfg
                    .layers
                    .iter()
                    .map(|layer| {
                        let rows = raw.attn.get(layer).ok_or_else(|| {
                            Error::schema("attn", format!("missing configured layer {layer}"))
                        })?;
                        rows.iter()
                            .map(|row| token_attention_stats(row))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                (g, bridging_relevance(per_layer.iter().map(Vec::as_slice))?)
            } else {
                (0.0, 0.0)
            };
            let ranked = ranked_for_signature(&raw.ffn, cfg)?;
            (&raw.sample_id, g, b, skill_signature(&ranked, cfg.layer_k())?)
        }
        Record::Compact(c) => {
            let b = if c.image_present {
                let per_layer = cfg
                    .layers
                    .iter()
                    .map(|layer| {
                        c.token_stats.get(layer).map(Vec::as_slice).ok_or_else(|| {
                            Error::schema("token_stats", format!("missing configured layer {layer}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                bridging_relevance(per_layer)?
            } else {
                0.0
            };
            let g = if c.image_present { c.g } else { 0.0 };
            (&c.sample_id, g, b, skill_signature(&c.ffn_top, cfg.layer_k())?)
        }
    };
    Ok(ScoreRow {
        sample_id: sample_id.clone(),
        g,
        b,
        signature: signature.into_key(),
    })
}

/// Scores a batch, preserving input order.
pub fn score_batch(exec: Exec, records: &[Record], cfg: &SelectionConfig) -> Vec<Result<ScoreRow>> {
    par::map(exec, records, |r| score_record(r, cfg))
}
