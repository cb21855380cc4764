use coreset_core::record::{parse_record, Format, Record};
use coreset_core::scoring::{score_record, SkillSignature};
use coreset_core::synth::{coverage_report, generate, generate_one, skill_of_signature, GroundTruth, SynthSpec, Tier};
use coreset_core::{Exec, SelectionConfig};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        n_samples: 1500,
        seed,
        ..Default::default()
    }
}

#[test]
fn deterministic_per_sample_and_across_exec() {
    let spec = small(4);
    let (a, ta) = generate(&spec, Exec::Serial).unwrap();
    let (b, tb) = generate(&spec, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    for i in [0, 1, 17, 999, 1499] {
        let (rec, truth) = generate_one(&spec, i);
        assert_eq!(rec, a[i]);
        assert_eq!(truth, ta.rows[i]);
    }
    let (c, _) = generate(&small(5), Exec::Parallel).unwrap();
    assert_ne!(a, c);
}

#[test]
fn every_record_validates() {
    for ffn_full in [false, true] {
        let spec = SynthSpec { ffn_full, ..small(6) };
        let (records, truth) = generate(&spec, Exec::Parallel).unwrap();
        for r in &records {
            parse_record(r.to_line().as_bytes(), Format::Raw).unwrap();
        }
        assert_eq!(GroundTruth::parse(&truth.to_jsonl()).unwrap(), truth);
    }
}

#[test]
fn tiers_order_gain_and_bridging_without_noise() {
    let spec = SynthSpec {
        ce_noise: 0.0,
        attn_noise: 0.0,
        activation_noise: 0.0,
        frac_weak_grounding: 0.0,
        ..small(8)
    };
    let cfg = SelectionConfig::default();
    let (records, truth) = generate(&spec, Exec::Parallel).unwrap();
    let mut sums = [(0.0, 0.0, 0usize); 3];
    for (rec, t) in records.into_iter().zip(&truth.rows) {
        if !rec.image_present {
            continue;
        }
        let row = score_record(&Record::Raw(rec), &cfg).unwrap();
        let slot = &mut sums[t.tier as usize];
        slot.0 += row.g;
        slot.1 += row.b;
        slot.2 += 1;
    }
    let means: Vec<(f64, f64)> = sums.iter().map(|s| (s.0 / s.2 as f64, s.1 / s.2 as f64)).collect();
    assert_eq!([Tier::High as usize, Tier::Mid as usize, Tier::Low as usize], [0, 1, 2]);
    assert!(means[0].0 > means[1].0 && means[1].0 > means[2].0, "{means:?}");
    assert!(means[0].1 > means[1].1 && means[1].1 > means[2].1, "{means:?}");
}

#[test]
fn signatures_recover_planted_skills() {
    let cfg = SelectionConfig::default();
    for activation_noise in [0.0, SynthSpec::default().activation_noise] {
        let spec = SynthSpec { activation_noise, ..small(10) };
        let (records, truth) = generate(&spec, Exec::Parallel).unwrap();
        let hits = records
            .into_iter()
            .zip(&truth.rows)
            .filter(|(rec, t)| {
                let row = score_record(&Record::Raw(rec.clone()), &cfg).unwrap();
                let sig = SkillSignature::from_key(&row.signature).unwrap();
                skill_of_signature(&sig, spec.block_size) == Some(t.skill)
            })
            .count();
        assert!(hits as f64 >= 0.99 * spec.n_samples as f64, "{hits}/{}", spec.n_samples);
    }
}

#[test]
fn skill_frequencies_follow_zipf() {
    let spec = SynthSpec { seed: 12, ..Default::default() };
    let (_, truth) = generate(&spec, Exec::Parallel).unwrap();
    let k = spec.n_planted_skills;
    let mut counts = vec![0usize; k];
    for r in truth.rows.iter().filter(|r| r.redundant_of.is_none()) {
        counts[r.skill] += 1;
    }
    let n: usize = counts.iter().sum();
    let weights: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-spec.zipf_exponent)).collect();
    let z: f64 = weights.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(&weights)
        .map(|(&o, &w)| {
            let e = n as f64 * w / z;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 {stat} >= {critical}");
}

#[test]
fn coverage_is_permutation_invariant_and_full_on_everything() {
    let spec = small(14);
    let (_, truth) = generate(&spec, Exec::Parallel).unwrap();
    let ids: Vec<&str> = truth.rows.iter().map(|r| r.sample_id.as_str()).step_by(3).collect();
    let a = coverage_report(ids.iter().map(|&id| (id, None)), &truth, spec.n_planted_skills).unwrap();
    let b = coverage_report(ids.iter().rev().map(|&id| (id, None)), &truth, spec.n_planted_skills).unwrap();
    assert_eq!(a, b);

    let present = truth.n_skills();
    let all = coverage_report(truth.rows.iter().map(|r| (r.sample_id.as_str(), Some(0.0))), &truth, present).unwrap();
    let distinct: std::collections::HashSet<usize> = truth.rows.iter().map(|r| r.skill).collect();
    assert_eq!(all.skills_covered, distinct.len());
    let full = SynthSpec { seed: 14, ..Default::default() };
    let (_, truth) = generate(&full, Exec::Parallel).unwrap();
    let all = coverage_report(truth.rows.iter().map(|r| (r.sample_id.as_str(), None)), &truth, full.n_planted_skills).unwrap();
    assert_eq!(all.coverage, 1.0);
    assert_eq!(all.n_selected, full.n_samples);
}
