//! Coreset manifest: a header line followed by one JSON entry per selected
//! sample.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SelectionConfig;
use crate::error::{Error, Result};
use crate::record::from_json;
use crate::scoring::ScoreRow;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bucket,
    BackfillShortlist,
    BackfillEligible,
    BackfillGlobal,
}

impl Stage {
    pub const ALL: [Stage; 4] = [
        Stage::Bucket,
        Stage::BackfillShortlist,
        Stage::BackfillEligible,
        Stage::BackfillGlobal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Bucket => "bucket",
            Stage::BackfillShortlist => "backfill_shortlist",
            Stage::BackfillEligible => "backfill_eligible",
            Stage::BackfillGlobal => "backfill_global",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub bucket: usize,
    pub backfill_shortlist: usize,
    pub backfill_eligible: usize,
    pub backfill_global: usize,
}

impl StageCounts {
    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::Bucket => self.bucket,
            Stage::BackfillShortlist => self.backfill_shortlist,
            Stage::BackfillEligible => self.backfill_eligible,
            Stage::BackfillGlobal => self.backfill_global,
        }
    }

    pub(crate) fn bump(&mut self, stage: Stage) {
        match stage {
            Stage::Bucket => self.bucket += 1,
            Stage::BackfillShortlist => self.backfill_shortlist += 1,
            Stage::BackfillEligible => self.backfill_eligible += 1,
            Stage::BackfillGlobal => self.backfill_global += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub kind: String,
    pub version: u32,
    /// Effective configuration with the budget resolved.
    pub config: SelectionConfig,
    /// SHA-256 over the id-sorted score rows.
    pub input_hash: String,
    pub n_rows: usize,
    pub budget: usize,
    pub n_eligible: usize,
    pub n_shortlist: usize,
    pub n_buckets: usize,
    pub bucket_cap: usize,
    pub cap_hits: usize,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub q: f64,
    pub bucket_key: String,
    pub stage: Stage,
    /// 1-based position within the entry's stage.
    pub rank_within_stage: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetManifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

impl CoresetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serialization");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serialization"));
            out.push('\n');
        }
        out
    }

    /// Bare sample ids, one per line.
    pub fn ids_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.sample_id);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::schema("manifest", "missing header line"))?;
        let header: ManifestHeader = from_json(header_line.as_bytes())?;
        if header.kind != "header" || header.version != MANIFEST_VERSION {
            return Err(Error::schema("manifest", "unrecognized header"));
        }
        let entries = lines
            .map(|l| from_json::<ManifestEntry>(l.as_bytes()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, entries })
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.sample_id.as_str())
    }
}

/// Content hash of score rows already sorted by sample id.
pub fn input_hash(sorted_rows: &[ScoreRow]) -> String {
    let mut hasher = Sha256::new();
    for row in sorted_rows {
        hasher.update(row.to_line().as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest.iter() {
        write!(hex, "{byte:02x}").expect("writing to a String");
    }
    hex
}
