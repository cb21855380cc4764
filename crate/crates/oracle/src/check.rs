//! Randomized equivalence check of the library against the oracles.

use std::collections::HashSet;

use coreset_core::{run_selection, score_record, Error, Exec, Stage};

use crate::fuzz::{any_record, rng_for, scoring_config, selection_instance};
use crate::score::{oracle_score, pairs_key};
use crate::select::{oracle_select, OracleError};

/// Relative tolerance for scoring comparisons.
pub const SCORE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub instances: usize,
    pub selection_matches: usize,
    pub scoring_matches: usize,
    pub invariant_passes: usize,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn all_match(&self) -> bool {
        self.selection_matches == self.instances
            && self.scoring_matches == self.instances
            && self.invariant_passes == self.instances
    }
}

pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rtol * a.abs().max(b.abs()) || diff <= 1e-15
}

/// Compares selection on one instance. `Ok` carries whether invariants held.
pub fn check_selection(seed: u64, instance: u64) -> Result<bool, String> {
    let mut rng = rng_for(seed, instance);
    let inst = selection_instance(&mut rng);
    let got = run_selection(&inst.rows, &inst.cfg, Exec::Parallel);
    let want = oracle_select(&inst.rows, &inst.cfg);
    match (got, want) {
        (Ok(out), Ok(oracle)) => {
            let entries = &out.manifest.entries;
            if entries.len() != oracle.entries.len() {
                return Err(format!(
                    "size {} vs oracle {} (quotas {:?} vs {:?})",
                    entries.len(),
                    oracle.entries.len(),
                    out.allocation.quota,
                    oracle.quotas
                ));
            }
            for (pos, (a, b)) in entries.iter().zip(&oracle.entries).enumerate() {
                if a.sample_id != b.sample_id || a.stage != b.stage || a.bucket_key != b.bucket_key || a.q.to_bits() != b.q.to_bits() {
                    return Err(format!("entry {pos}: {a:?} vs oracle {b:?}"));
                }
            }
            Ok(selection_invariants(&out))
        }
        (Err(Error::InsufficientEligible { achieved, required }), Err(OracleError::Insufficient { achieved: oa, required: or })) => {
            if (achieved, required) == (oa, or) {
                Ok(true)
            } else {
                Err(format!("insufficient {achieved}/{required} vs oracle {oa}/{or}"))
            }
        }
        (got, want) => Err(format!(
            "outcome mismatch: {:?} vs oracle {:?}",
            got.map(|o| o.manifest.entries.len()),
            want.map(|o| o.entries.len())
        )),
    }
}

/// Budget exactness, uniqueness, caps, and the stage containment chain.
pub fn selection_invariants(out: &coreset_core::SelectionOutcome) -> bool {
    let pop = &out.population;
    let entries = &out.manifest.entries;
    let m = out.manifest.header.budget;
    let ids: HashSet<&str> = entries.iter().map(|e| e.sample_id.as_str()).collect();
    if ids.len() != entries.len() {
        return false;
    }
    if out.eligible.len() >= m && entries.len() != m {
        return false;
    }
    let id_of = |i: usize| pop.rows[i].sample_id.as_str();
    let eligible: HashSet<&str> = out.eligible.iter().map(|&i| id_of(i)).collect();
    let short: HashSet<&str> = out.shortlist.iter().map(|&i| id_of(i)).collect();
    if !short.is_subset(&eligible) {
        return false;
    }
    for e in entries {
        let ok = match e.stage {
            Stage::Bucket | Stage::BackfillShortlist => short.contains(e.sample_id.as_str()),
            Stage::BackfillEligible => eligible.contains(e.sample_id.as_str()),
            Stage::BackfillGlobal => true,
        };
        if !ok {
            return false;
        }
    }
    let cap = out.allocation.cap;
    out.buckets.iter().zip(&out.allocation.initial).all(|(b, &init)| {
        init <= cap.min(b.members.len()) && b.quota <= cap.min(b.members.len())
    })
}

/// Compares scoring of one random record against the oracle.
pub fn check_scoring(seed: u64, instance: u64) -> Result<(), String> {
    let mut rng = rng_for(seed ^ 0x5c0_5c0, instance);
    let cfg = scoring_config(&mut rng);
    let rec = any_record(&mut rng, &format!("x{instance}"), &cfg);
    let got = score_record(&rec, &cfg).map_err(|e| format!("library error: {e}"))?;
    let (g, b, pairs) = oracle_score(&rec, &cfg)?;
    if !rel_close(got.g, g, SCORE_RTOL) || !rel_close(got.b, b, SCORE_RTOL) {
        return Err(format!("(g, b) = ({}, {}) vs oracle ({g}, {b})", got.g, got.b));
    }
    let key = pairs_key(&pairs);
    if got.signature != key {
        return Err(format!("signature {} vs oracle {key}", got.signature));
    }
    Ok(())
}

/// Runs `n` randomized instances of both checks.
pub fn run_check(n: usize, seed: u64) -> CheckReport {
    let mut report = CheckReport {
        instances: n,
        ..Default::default()
    };
    for i in 0..n as u64 {
        match check_selection(seed, i) {
            Ok(inv) => {
                report.selection_matches += 1;
                if inv {
                    report.invariant_passes += 1;
                } else {
                    report.failures.push(format!("instance {i}: selection invariant violated"));
                }
            }
            Err(msg) => report.failures.push(format!("instance {i}: selection {msg}")),
        }
        match check_scoring(seed, i) {
            Ok(()) => report.scoring_matches += 1,
            Err(msg) => report.failures.push(format!("instance {i}: scoring {msg}")),
        }
    }
    report
}
