use std::collections::BTreeMap;

use coreset_core::record::{parse_record, reduce_to_compact, FfnSummary, Format, Record, SignalRecord};
use coreset_core::scoring::{
    bridging_relevance, mean_answer_activation, multimodal_gain, score_batch, score_record,
    skill_signature, token_attention_stats, topk_neurons,
};
use coreset_core::synth::{generate, SynthSpec};
use coreset_core::{Exec, SelectionConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_row(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], 1..max_len)
}

proptest! {
    #[test]
    fn gain_is_antisymmetric(pairs in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 1..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let fwd = multimodal_gain(&a, &b).unwrap();
        let rev = multimodal_gain(&b, &a).unwrap();
        prop_assert!((fwd + rev).abs() <= 1e-12);
        prop_assert_eq!(multimodal_gain(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn attention_stats_scale_covariant(row in finite_row(24), c in 0.01..50.0f64) {
        let (m, e) = token_attention_stats(&row).unwrap();
        let scaled: Vec<f64> = row.iter().map(|x| x * c).collect();
        let (ms, es) = token_attention_stats(&scaled).unwrap();
        prop_assert!((ms - c * m).abs() <= 1e-12 * (1.0 + c * m));
        prop_assert!((es - e).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn bridging_in_unit_interval(
        layers in (1..5usize, 1..6usize).prop_flat_map(|(l, t)| {
            prop::collection::vec(prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), t), l)
        })
    ) {
        let b = bridging_relevance(layers.iter().map(Vec::as_slice)).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn signature_prefix_subset(
        lists in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4..30), 4),
        k in prop::collection::vec(1..4usize, 4),
        k_small in prop::collection::vec(1..4usize, 4),
    ) {
        let layers = [8u32, 12, 16, 20];
        let ffn: BTreeMap<u32, _> = layers
            .iter()
            .zip(&lists)
            .map(|(&l, h)| (l, coreset_core::scoring::ranked_top(h, 64)))
            .collect();
        let big = skill_signature(&ffn, layers.iter().copied().zip(k.iter().copied())).unwrap();
        let small_k: Vec<usize> = k.iter().zip(&k_small).map(|(&a, &b)| a.min(b)).collect();
        let small = skill_signature(&ffn, layers.iter().copied().zip(small_k.iter().copied())).unwrap();
        prop_assert!(small.pairs().iter().all(|p| big.pairs().contains(p)));
        prop_assert_eq!(big.pairs().len(), k.iter().sum::<usize>());
    }
}

/// Full-sort oracle for top-k under (value desc, index asc).
fn sort_oracle(h: &[f64], k: usize) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[b].partial_cmp(&h[a]).unwrap().then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| i as u32).collect()
}

#[test]
fn topk_matches_full_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let levels = rng.random_range(2..50u32);
        let h: Vec<f64> = (0..100).map(|_| rng.random_range(0..levels) as f64).collect();
        let k = rng.random_range(1..=100);
        assert_eq!(topk_neurons(&h, k).unwrap(), sort_oracle(&h, k));
    }
    let h: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    assert_eq!(topk_neurons(&h, 10).unwrap(), sort_oracle(&h, 10));
}

#[test]
fn mean_activation_matches_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mean = mean_answer_activation(&rows).unwrap();
    for c in 0..8 {
        let mut s = 0.0;
        for r in &rows {
            s += r[c];
        }
        assert!((mean[c] - s / 5.0).abs() < 1e-14);
    }
}

fn varied_spec(seed: u64, ffn_full: bool) -> SynthSpec {
    SynthSpec {
        n_samples: 600,
        n_planted_skills: 10,
        d_ff: 96,
        ffn_full,
        seed,
        ..Default::default()
    }
}

/// Raw path and compact path agree on every record.
#[test]
fn raw_and_compact_paths_agree() {
    let cfg = SelectionConfig::default();
    let mut checked = 0;
    for (seed, full) in [(1, true), (2, false)] {
        let (records, _) = generate(&varied_spec(seed, full), Exec::Parallel).unwrap();
        for raw in records {
            let raw = Record::Raw(raw);
            let compact = Record::Compact(reduce_to_compact(&raw, &cfg).unwrap());
            let a = score_record(&raw, &cfg).unwrap();
            let b = score_record(&compact, &cfg).unwrap();
            assert!((a.g - b.g).abs() <= 1e-5 && (a.b - b.b).abs() <= 1e-5);
            assert_eq!(a.signature, b.signature);
            // Compacting is idempotent, including after a serialization round trip.
            let line = compact.to_line();
            let reparsed = parse_record(line.as_bytes(), Format::Compact).unwrap();
            assert_eq!(Record::Compact(reduce_to_compact(&reparsed, &cfg).unwrap()), compact);
            checked += 1;
        }
    }
    assert!(checked >= 1000);
}

#[test]
fn text_only_scores_zero() {
    let line = r#"{"v":1,"sample_id":"t","image_present":false,"ffn":{"8":[[1,0.9]],"12":[[2,0.9]],"16":[[3,0.9],[4,0.5]],"20":[[5,0.9],[6,0.5],[7,0.1]]}}"#;
    let rec = parse_record(line.as_bytes(), Format::Raw).unwrap();
    let row = score_record(&rec, &SelectionConfig::default()).unwrap();
    assert_eq!((row.g, row.b), (0.0, 0.0));
    assert_eq!(row.signature, "8:1|12:2|16:3|16:4|20:5|20:6|20:7");
}

#[test]
fn hand_built_single_token_record() {
    // g = 2.0 - 1.5; row [0.3, 0.1]: mass 0.4, H = 0.811278..., b = 0.4 * (1 - H).
    let rec = Record::Raw(SignalRecord {
        v: 1,
        sample_id: "h".into(),
        image_present: true,
        ce_with_image: vec![1.5],
        ce_without_image: vec![2.0],
        attn: [(8, vec![vec![0.3, 0.1]])].into_iter().collect(),
        ffn: [(8, FfnSummary::Full(vec![0.2, 0.7, 0.7]))].into_iter().collect(),
        n_visual_tokens: 2,
    });
    let cfg = SelectionConfig {
        layers: vec![8],
        k_per_layer: vec![2],
        ..Default::default()
    };
    let row = score_record(&rec, &cfg).unwrap();
    let h = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln()) / 2f64.ln();
    assert_eq!(row.g, 0.5);
    assert!((row.b - 0.4 * (1.0 - h)).abs() < 1e-15);
    assert_eq!(row.signature, "8:1|8:2");
}

#[test]
fn batch_scoring_is_order_independent_and_exec_independent() {
    let cfg = SelectionConfig::default();
    let (records, _) = generate(&varied_spec(3, false), Exec::Serial).unwrap();
    let records: Vec<Record> = records.into_iter().map(Record::Raw).collect();
    let serial: Vec<_> = score_batch(Exec::Serial, &records, &cfg).into_iter().map(Result::unwrap).collect();
    let parallel: Vec<_> = score_batch(Exec::Parallel, &records, &cfg).into_iter().map(Result::unwrap).collect();
    assert_eq!(serial, parallel);

    let mut shuffled = records.clone();
    shuffled.reverse();
    shuffled.rotate_left(17);
    let mut a: Vec<_> = score_batch(Exec::Parallel, &shuffled, &cfg).into_iter().map(Result::unwrap).collect();
    let mut b = serial;
    a.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    b.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    assert_eq!(a, b);
}
