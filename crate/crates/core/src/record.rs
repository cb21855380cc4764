//! On-disk signal record schemas (raw and compact) and their validation.
//!
//! Both forms are line-delimited JSON. A raw record carries the forward-pass
//! evidence an extractor dumped for one sample; a compact record carries only
//! the sufficient statistics the scorer needs (gain, per-token attention mass
//! and normalized entropy, ranked FFN neurons).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::config::{LayerId, SelectionConfig, RAW_TOP_NEURONS};
use crate::error::{Error, Result};
use crate::scoring;

pub const SCHEMA_VERSION: u32 = 1;

/// Tolerance on attention mass restricted to visual tokens.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// A ranked `(neuron_index, activation)` list: activation descending, ties by
/// ascending neuron index.
pub type RankedNeurons = Vec<(u32, f64)>;

/// Per-layer FFN summary of a raw record: either the full answer-token mean
/// activation vector or an already-ranked top list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FfnSummary {
    Full(Vec<f64>),
    Ranked(RankedNeurons),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalRecord {
    pub v: u32,
    pub sample_id: String,
    pub image_present: bool,
    #[serde(default)]
    pub ce_with_image: Vec<f64>,
    #[serde(default)]
    pub ce_without_image: Vec<f64>,
    /// Layer -> `[answer tokens x visual tokens]` head-averaged attention.
    #[serde(default)]
    pub attn: BTreeMap<LayerId, Vec<Vec<f64>>>,
    pub ffn: BTreeMap<LayerId, FfnSummary>,
    #[serde(default)]
    pub n_visual_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactRecord {
    pub v: u32,
    pub sample_id: String,
    pub image_present: bool,
    pub g: f64,
    /// Layer -> per-answer-token `(mass, norm_entropy)`.
    #[serde(default)]
    pub token_stats: BTreeMap<LayerId, Vec<(f64, f64)>>,
    pub ffn_top: BTreeMap<LayerId, RankedNeurons>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Raw,
    Compact,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Format::Raw),
            "compact" => Ok(Format::Compact),
            other => Err(format!("unknown record format `{other}` (expected raw|compact)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Raw(SignalRecord),
    Compact(CompactRecord),
}

impl Record {
    pub fn sample_id(&self) -> &str {
        match self {
            Record::Raw(r) => &r.sample_id,
            Record::Compact(r) => &r.sample_id,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Record::Raw(r) => r.to_line(),
            Record::Compact(r) => r.to_line(),
        }
    }
}

/// Parses and validates one serialized record.
pub fn parse_record(line: &[u8], format: Format) -> Result<Record> {
    match format {
        Format::Raw => {
            let rec: SignalRecord = from_json(line)?;
            rec.validate()?;
            Ok(Record::Raw(rec))
        }
        Format::Compact => {
            let rec: CompactRecord = from_json(line)?;
            rec.validate()?;
            Ok(Record::Compact(rec))
        }
    }
}

/// Deserializes JSON, mapping syntax errors to [`Error::Parse`] and type or
/// field errors to [`Error::Schema`].
pub(crate) fn from_json<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => Error::schema("record", strip_position(&e.to_string())),
            Category::Eof => Error::Parse {
                offset: bytes.len(),
                message: strip_position(&e.to_string()),
            },
            _ => Error::Parse {
                offset: byte_offset(bytes, e.line(), e.column()),
                message: strip_position(&e.to_string()),
            },
        }
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    bytes.len()
}

fn check_finite(field: &str, xs: impl IntoIterator<Item = f64>) -> Result<()> {
    if xs.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::schema(field, "non-finite value"))
    }
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::schema("v", format!("unsupported schema version {v}")))
    }
}

/// Checks the canonical ranking rule, length bound, and index uniqueness.
pub fn validate_ranked(field: &str, list: &[(u32, f64)]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::schema(field, "empty neuron list"));
    }
    if list.len() > RAW_TOP_NEURONS {
        return Err(Error::schema(
            field,
            format!("ranked list longer than {RAW_TOP_NEURONS}"),
        ));
    }
    check_finite(field, list.iter().map(|p| p.1))?;
    let mut seen = HashSet::with_capacity(list.len());
    for &(idx, _) in list {
        if !seen.insert(idx) {
            return Err(Error::schema(field, format!("duplicate neuron index {idx}")));
        }
    }
    for w in list.windows(2) {
        if scoring::neuron_order(&w[0], &w[1]) != std::cmp::Ordering::Less {
            return Err(Error::schema(
                field,
                "ranked list not in canonical order (activation desc, index asc)",
            ));
        }
    }
    Ok(())
}

impl SignalRecord {
    pub fn validate(&self) -> Result<()> {
        check_version(self.v)?;
        if self.sample_id.is_empty() {
            return Err(Error::schema("sample_id", "empty"));
        }
        if self.image_present {
            let t = self.ce_with_image.len();
            if t != self.ce_without_image.len() {
                return Err(Error::schema("ce_with_image", "ce length mismatch"));
            }
            if t == 0 {
                return Err(Error::schema("ce_with_image", "no answer tokens"));
            }
            for (name, ce) in [
                ("ce_with_image", &self.ce_with_image),
                ("ce_without_image", &self.ce_without_image),
            ] {
                check_finite(name, ce.iter().copied())?;
                if ce.iter().any(|&x| x < 0.0) {
                    return Err(Error::schema(name, "negative cross-entropy"));
                }
            }
            if self.n_visual_tokens == 0 {
                return Err(Error::schema("n_visual_tokens", "must be positive"));
            }
            let attn_keys: BTreeSet<_> = self.attn.keys().collect();
            let ffn_keys: BTreeSet<_> = self.ffn.keys().collect();
            if attn_keys != ffn_keys {
                return Err(Error::schema("attn", "layer set differs from ffn"));
            }
            for (layer, rows) in &self.attn {
                let field = format!("attn.{layer}");
                if rows.len() != t {
                    return Err(Error::schema(field, "attn row count differs from answer tokens"));
                }
                for row in rows {
                    if row.len() != self.n_visual_tokens {
                        return Err(Error::schema(field, "attn row length"));
                    }
                    check_finite(&field, row.iter().copied())?;
                    if row.iter().any(|&x| x < 0.0) {
                        return Err(Error::schema(field, "negative attention"));
                    }
                    if row.iter().sum::<f64>() > 1.0 + MASS_TOLERANCE {
                        return Err(Error::schema(field, "attn row mass exceeds 1"));
                    }
                }
            }
        } else {
            if !self.ce_with_image.is_empty() || !self.ce_without_image.is_empty() {
                return Err(Error::schema("ce_with_image", "text-only record carries ce arrays"));
            }
            if !self.attn.is_empty() {
                return Err(Error::schema("attn", "text-only record carries attention"));
            }
        }
        if self.ffn.is_empty() {
            return Err(Error::schema("ffn", "no layers"));
        }
        for (layer, summary) in &self.ffn {
            let field = format!("ffn.{layer}");
            match summary {
                FfnSummary::Full(h) => {
                    if h.is_empty() {
                        return Err(Error::schema(field, "empty activation vector"));
                    }
                    check_finite(&field, h.iter().copied())?;
                }
                FfnSummary::Ranked(list) => validate_ranked(&field, list)?,
            }
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

impl CompactRecord {
    pub fn validate(&self) -> Result<()> {
        check_version(self.v)?;
        if self.sample_id.is_empty() {
            return Err(Error::schema("sample_id", "empty"));
        }
        check_finite("g", [self.g])?;
        if self.image_present {
            let mut lens = self.token_stats.values().map(Vec::len);
            let t = lens.next().unwrap_or(0);
            if t == 0 {
                return Err(Error::schema("token_stats", "no answer tokens"));
            }
            if lens.any(|l| l != t) {
                return Err(Error::schema("token_stats", "token count differs across layers"));
            }
            let stat_keys: BTreeSet<_> = self.token_stats.keys().collect();
            let ffn_keys: BTreeSet<_> = self.ffn_top.keys().collect();
            if stat_keys != ffn_keys {
                return Err(Error::schema("token_stats", "layer set differs from ffn_top"));
            }
            for (layer, stats) in &self.token_stats {
                let field = format!("token_stats.{layer}");
                check_finite(&field, stats.iter().flat_map(|&(m, e)| [m, e]))?;
                for &(mass, ent) in stats {
                    if !(0.0..=1.0 + MASS_TOLERANCE).contains(&mass) {
                        return Err(Error::schema(&field, "mass outside [0, 1]"));
                    }
                    if !(0.0..=1.0).contains(&ent) {
                        return Err(Error::schema(&field, "norm_entropy outside [0, 1]"));
                    }
                }
            }
        } else {
            if !self.token_stats.is_empty() {
                return Err(Error::schema("token_stats", "text-only record carries attention"));
            }
            if self.g != 0.0 {
                return Err(Error::schema("g", "text-only record must have g = 0"));
            }
        }
        if self.ffn_top.is_empty() {
            return Err(Error::schema("ffn_top", "no layers"));
        }
        for (layer, list) in &self.ffn_top {
            validate_ranked(&format!("ffn_top.{layer}"), list)?;
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serialization is infallible")
    }
}

fn require_layer<'a, V>(map: &'a BTreeMap<LayerId, V>, field: &str, layer: LayerId) -> Result<&'a V> {
    map.get(&layer)
        .ok_or_else(|| Error::schema(field, format!("missing configured layer {layer}")))
}

/// Reduces a record to compact form over the configured layers.
///
/// Compact input is re-validated, restricted to the configured layers, and
/// truncated to [`RAW_TOP_NEURONS`], which makes compacting idempotent.
pub fn reduce_to_compact(rec: &Record, cfg: &SelectionConfig) -> Result<CompactRecord> {
    match rec {
        Record::Raw(raw) => {
            raw.validate()?;
            let g = if raw.image_present {
                scoring::multimodal_gain(&raw.ce_without_image, &raw.ce_with_image)?
            } else {
                0.0
            };
            let mut token_stats = BTreeMap::new();
            let mut ffn_top = BTreeMap::new();
            for &layer in &cfg.layers {
                if raw.image_present {
                    let rows = require_layer(&raw.attn, "attn", layer)?;
                    let stats = rows
                        .iter()
                        .map(|row| scoring::token_attention_stats(row))
                        .collect::<Result<Vec<_>>>()?;
                    token_stats.insert(layer, stats);
                }
                let ranked = match require_layer(&raw.ffn, "ffn", layer)? {
                    FfnSummary::Full(h) => scoring::ranked_top(h, RAW_TOP_NEURONS.min(h.len())),
                    FfnSummary::Ranked(list) => list.clone(),
                };
                ffn_top.insert(layer, ranked);
            }
            Ok(CompactRecord {
                v: SCHEMA_VERSION,
                sample_id: raw.sample_id.clone(),
                image_present: raw.image_present,
                g,
                token_stats,
                ffn_top,
            })
        }
        Record::Compact(c) => {
            c.validate()?;
            let mut token_stats = BTreeMap::new();
            let mut ffn_top = BTreeMap::new();
            for &layer in &cfg.layers {
                if c.image_present {
                    token_stats.insert(layer, require_layer(&c.token_stats, "token_stats", layer)?.clone());
                }
                let mut list = require_layer(&c.ffn_top, "ffn_top", layer)?.clone();
                list.truncate(RAW_TOP_NEURONS);
                ffn_top.insert(layer, list);
            }
            Ok(CompactRecord {
                v: SCHEMA_VERSION,
                sample_id: c.sample_id.clone(),
                image_present: c.image_present,
                g: c.g,
                token_stats,
                ffn_top,
            })
        }
    }
}
