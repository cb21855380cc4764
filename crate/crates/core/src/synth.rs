//! Synthetic signal-record corpora with planted ground truth.
//!
//! Each sample belongs to one planted skill (Zipf-distributed) and one
//! quality tier. Tiers control the cross-entropy gap and how concentrated the
//! attention on visual tokens is; skills add activation bumps on a disjoint
//! block of FFN neurons so top-k extraction recovers the skill. Sample `i` is
//! a pure function of `(spec, i)`: every sample draws from its own ChaCha
//! stream derived from the master seed.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::config::{LayerId, RAW_TOP_NEURONS};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::record::{FfnSummary, SignalRecord, SCHEMA_VERSION};
use crate::scoring::{ranked_top, SkillSignature};
use crate::selection::ManifestEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_planted_skills: usize,
    /// Zipf exponent of the skill distribution.
    pub zipf_exponent: f64,
    pub frac_text_only: f64,
    pub frac_weak_grounding: f64,
    /// Fraction of samples that are near-duplicates of an earlier sample.
    pub frac_redundant: f64,
    /// Std-dev of per-token cross-entropy gap noise (nats).
    pub ce_noise: f64,
    /// Dirichlet perturbation level of attention rows; 0 emits the template.
    pub attn_noise: f64,
    /// Std-dev of background FFN activations.
    pub activation_noise: f64,
    pub n_visual_tokens: usize,
    pub max_answer_tokens: usize,
    pub d_ff: usize,
    /// Neurons per planted skill block.
    pub block_size: usize,
    pub layers: Vec<LayerId>,
    /// Emit full activation vectors instead of ranked top-64 lists.
    pub ffn_full: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            n_planted_skills: 50,
            zipf_exponent: 1.2,
            frac_text_only: 0.05,
            frac_weak_grounding: 0.15,
            frac_redundant: 0.1,
            ce_noise: 0.15,
            attn_noise: 0.2,
            activation_noise: 0.03,
            n_visual_tokens: 16,
            max_answer_tokens: 4,
            d_ff: 512,
            block_size: 8,
            layers: vec![8, 12, 16, 20],
            ffn_full: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl Tier {
    fn from_index(i: usize) -> Self {
        match i % 3 {
            0 => Tier::High,
            1 => Tier::Mid,
            _ => Tier::Low,
        }
    }

    fn ce_gap(self) -> f64 {
        match self {
            Tier::High => 1.2,
            Tier::Mid => 0.6,
            Tier::Low => 0.1,
        }
    }

    fn attn_mass(self) -> f64 {
        match self {
            Tier::High => 0.7,
            Tier::Mid => 0.45,
            Tier::Low => 0.2,
        }
    }

    /// Decay rate of the attention template around its focus token.
    fn sharpness(self) -> f64 {
        match self {
            Tier::High => 3.0,
            Tier::Mid => 1.5,
            Tier::Low => 0.5,
        }
    }
}

/// Planted truth for one sample, as written to `truth.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRow {
    pub sample_id: String,
    pub skill: usize,
    pub tier: Tier,
    pub redundant_of: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("truth serialization") + "\n")
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| crate::record::from_json::<TruthRow>(l.as_bytes()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn n_skills(&self) -> usize {
        self.rows.iter().map(|r| r.skill + 1).max().unwrap_or(0)
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let fracs = [self.frac_text_only, self.frac_weak_grounding, self.frac_redundant];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("fractions must lie in [0, 1]");
        }
        if fracs.iter().sum::<f64>() > 1.0 + 1e-12 {
            return bad("fractions must sum to at most 1");
        }
        if self.n_samples == 0 || self.n_planted_skills == 0 {
            return bad("n_samples and n_planted_skills must be positive");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and >= 0");
        }
        for noise in [self.ce_noise, self.attn_noise, self.activation_noise] {
            if !(noise >= 0.0 && noise.is_finite()) {
                return bad("noise levels must be finite and >= 0");
            }
        }
        if self.n_visual_tokens < 2 || self.max_answer_tokens == 0 {
            return bad("need n_visual_tokens >= 2 and max_answer_tokens >= 1");
        }
        if self.block_size == 0 || self.n_planted_skills * self.block_size > self.d_ff {
            return bad("d_ff must hold one neuron block per planted skill");
        }
        if self.layers.is_empty() {
            return bad("layers must be nonempty");
        }
        Ok(())
    }

    pub fn sample_id(&self, i: usize) -> String {
        format!("s{i:07}")
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Role {
    redundant_of: Option<usize>,
}

/// Redundancy decision for sample `i`, resolved to a non-redundant root.
fn role(spec: &SynthSpec, i: usize) -> Role {
    let mut rng = stream(spec.seed, 2 * i as u64);
    if i == 0 || rng.random::<f64>() >= spec.frac_redundant {
        return Role { redundant_of: None };
    }
    let j = rng.random_range(0..i);
    let root = role(spec, j).redundant_of.unwrap_or(j);
    Role {
        redundant_of: Some(root),
    }
}

struct Original {
    record: SignalRecord,
    skill: usize,
    tier: Tier,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

fn original(spec: &SynthSpec, i: usize) -> Original {
    let mut rng = stream(spec.seed, 2 * i as u64 + 1);
    let zipf = Zipf::new(spec.n_planted_skills as f64, spec.zipf_exponent).expect("validated spec");
    let skill = zipf.sample(&mut rng) as usize - 1;
    let tier = Tier::from_index(i);
    let u: f64 = rng.random();
    let text_only = u < spec.frac_text_only;
    let weak = !text_only && u < spec.frac_text_only + spec.frac_weak_grounding;
    let n_tokens = 1 + rng.random_range(0..spec.max_answer_tokens);

    let (ce_with_image, ce_without_image, attn) = if text_only {
        (Vec::new(), Vec::new(), BTreeMap::new())
    } else {
        let ce_noise = normal(spec.ce_noise);
        let mut with = Vec::with_capacity(n_tokens);
        let mut without = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let base = 0.5 + 1.5 * rng.random::<f64>();
            let gap = tier.ce_gap() + ce_noise.sample(&mut rng);
            with.push(base);
            without.push((base + gap).max(0.0));
        }
        let template = attention_template(spec, tier, weak, rng.random_range(0..spec.n_visual_tokens));
        let mass_noise = normal(0.1 * spec.attn_noise);
        let mut attn = BTreeMap::new();
        for &layer in &spec.layers {
            let rows = (0..n_tokens)
                .map(|_| {
                    let mass = (tier.attn_mass() * (1.0 + mass_noise.sample(&mut rng))).clamp(0.0, 0.999);
                    let dist = perturb(&template, spec.attn_noise, &mut rng);
                    dist.into_iter().map(|p| mass * p).collect()
                })
                .collect();
            attn.insert(layer, rows);
        }
        (with, without, attn)
    };

    let bg = normal(spec.activation_noise);
    let ffn = spec
        .layers
        .iter()
        .map(|&layer| {
            let mut h: Vec<f64> = (0..spec.d_ff).map(|_| bg.sample(&mut rng).abs()).collect();
            let start = skill * spec.block_size;
            for r in 0..spec.block_size {
                h[start + r] += 1.0 - 0.1 * r as f64 / (spec.block_size as f64 / 8.0);
            }
            (layer, ffn_summary(spec, h))
        })
        .collect();

    Original {
        record: SignalRecord {
            v: SCHEMA_VERSION,
            sample_id: spec.sample_id(i),
            image_present: !text_only,
            ce_with_image,
            ce_without_image,
            attn,
            ffn,
            n_visual_tokens: if text_only { 0 } else { spec.n_visual_tokens },
        },
        skill,
        tier,
    }
}

fn ffn_summary(spec: &SynthSpec, h: Vec<f64>) -> FfnSummary {
    if spec.ffn_full {
        FfnSummary::Full(h)
    } else {
        FfnSummary::Ranked(ranked_top(&h, RAW_TOP_NEURONS))
    }
}

/// Attention distribution over visual tokens: exponential decay around a
/// focus token, or uniform for weakly grounded samples.
fn attention_template(spec: &SynthSpec, tier: Tier, weak: bool, focus: usize) -> Vec<f64> {
    let n = spec.n_visual_tokens;
    let w: Vec<f64> = if weak {
        vec![1.0; n]
    } else {
        (0..n)
            .map(|v| (-tier.sharpness() * (v as f64 - focus as f64).abs()).exp())
            .collect()
    };
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Dirichlet draw centred on `template` with concentration `1 / noise^2`.
fn perturb(template: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if noise == 0.0 {
        return template.to_vec();
    }
    let concentration = 1.0 / (noise * noise);
    let draws: Vec<f64> = template
        .iter()
        .map(|&p| {
            let shape = (p * concentration).max(1e-3);
            Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
        })
        .collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return template.to_vec();
    }
    draws.into_iter().map(|x| x / total).collect()
}

/// Small multiplicative jitter of a root sample, keeping every schema
/// invariant.
fn near_duplicate(spec: &SynthSpec, i: usize, root: &SignalRecord) -> SignalRecord {
    let mut rng = stream(spec.seed, 2 * i as u64);
    let jitter = normal(0.01);
    let mut rec = root.clone();
    rec.sample_id = spec.sample_id(i);
    for x in rec.ce_with_image.iter_mut().chain(rec.ce_without_image.iter_mut()) {
        *x = (*x * (1.0 + jitter.sample(&mut rng))).max(0.0);
    }
    for rows in rec.attn.values_mut() {
        for row in rows.iter_mut() {
            let scale = 1.0 + jitter.sample(&mut rng);
            let mass: f64 = row.iter().sum();
            let target = (mass * scale).clamp(0.0, 0.999);
            if mass > 0.0 {
                row.iter_mut().for_each(|x| *x *= target / mass);
            }
        }
    }
    for summary in rec.ffn.values_mut() {
        match summary {
            FfnSummary::Full(h) => h.iter_mut().for_each(|x| *x += 1e-3 * jitter.sample(&mut rng)),
            FfnSummary::Ranked(list) => {
                // Uniform shift keeps the ranking canonical.
                let shift = 1e-3 * jitter.sample(&mut rng);
                list.iter_mut().for_each(|p| p.1 += shift);
            }
        }
    }
    rec
}

/// One generated sample with its truth row.
pub fn generate_one(spec: &SynthSpec, i: usize) -> (SignalRecord, TruthRow) {
    match role(spec, i).redundant_of {
        None => {
            let o = original(spec, i);
            let truth = TruthRow {
                sample_id: o.record.sample_id.clone(),
                skill: o.skill,
                tier: o.tier,
                redundant_of: None,
            };
            (o.record, truth)
        }
        Some(root) => {
            let o = original(spec, root);
            let rec = near_duplicate(spec, i, &o.record);
            let truth = TruthRow {
                sample_id: rec.sample_id.clone(),
                skill: o.skill,
                tier: o.tier,
                redundant_of: Some(spec.sample_id(root)),
            };
            (rec, truth)
        }
    }
}

/// Generates the whole corpus in sample-index order.
pub fn generate(spec: &SynthSpec, exec: Exec) -> Result<(Vec<SignalRecord>, GroundTruth)> {
    spec.validate()?;
    let pairs = par::map_range(exec, spec.n_samples, |i| generate_one(spec, i));
    let (records, rows) = pairs.into_iter().unzip();
    Ok((records, GroundTruth { rows }))
}

/// Planted skill encoded by a signature: the block of its first pair.
pub fn skill_of_signature(sig: &SkillSignature, block_size: usize) -> Option<usize> {
    sig.pairs().first().map(|&(_, n)| n as usize / block_size)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub n_selected: usize,
    pub n_skills: usize,
    pub skills_covered: usize,
    pub coverage: f64,
    pub per_skill: Vec<usize>,
    /// Gini coefficient of per-skill selection counts.
    pub gini: f64,
    /// Fraction of selected samples that duplicate another selected sample.
    pub redundancy_rate: f64,
    pub mean_q: Option<f64>,
}

impl CoverageReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out += &format!("n_selected,{}\n", self.n_selected);
        out += &format!("n_skills,{}\n", self.n_skills);
        out += &format!("skills_covered,{}\n", self.skills_covered);
        out += &format!("coverage,{}\n", self.coverage);
        out += &format!("gini,{}\n", self.gini);
        out += &format!("redundancy_rate,{}\n", self.redundancy_rate);
        match self.mean_q {
            Some(q) => out += &format!("mean_q,{q}\n"),
            None => out += "mean_q,\n",
        }
        for (skill, count) in self.per_skill.iter().enumerate() {
            out += &format!("skill_{skill}_count,{count}\n");
        }
        out
    }
}

pub fn gini(counts: &[usize]) -> f64 {
    let n = counts.len();
    let total: usize = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n as f64 - 1.0) * x as f64)
        .sum();
    weighted / (n as f64 * total as f64)
}

/// Coverage of planted skills by a selection. `selected` are sample ids;
/// `q` carries their quality when known.
pub fn coverage_report<'a>(
    selected: impl IntoIterator<Item = (&'a str, Option<f64>)>,
    truth: &GroundTruth,
    n_skills: usize,
) -> Result<CoverageReport> {
    let by_id: HashMap<&str, &TruthRow> = truth.rows.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    let mut per_skill = vec![0usize; n_skills];
    let mut ids = HashSet::new();
    let mut rows = Vec::new();
    let mut q_sum = 0.0;
    let mut q_known = true;
    for (id, q) in selected {
        let row = by_id.get(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if row.skill >= n_skills {
            return Err(Error::Domain(format!("skill {} outside [0, {n_skills})", row.skill)));
        }
        if !ids.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        per_skill[row.skill] += 1;
        rows.push(*row);
        match q {
            Some(q) => q_sum += q,
            None => q_known = false,
        }
    }
    let n_selected = rows.len();
    let redundant = rows
        .iter()
        .filter(|r| r.redundant_of.as_deref().is_some_and(|root| ids.contains(root)))
        .count();
    let skills_covered = per_skill.iter().filter(|&&c| c > 0).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CoverageReport {
        n_selected,
        n_skills,
        skills_covered,
        coverage: ratio(skills_covered, n_skills),
        gini: gini(&per_skill),
        redundancy_rate: ratio(redundant, n_selected),
        mean_q: (q_known && n_selected > 0).then(|| q_sum / n_selected as f64),
        per_skill,
    })
}

/// Coverage report for manifest entries.
pub fn manifest_coverage(entries: &[ManifestEntry], truth: &GroundTruth, n_skills: usize) -> Result<CoverageReport> {
    coverage_report(
        entries.iter().map(|e| (e.sample_id.as_str(), Some(e.q))),
        truth,
        n_skills,
    )
}
