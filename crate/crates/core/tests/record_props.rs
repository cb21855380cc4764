use coreset_core::record::{parse_record, Format, Record};
use coreset_core::synth::{generate, SynthSpec};
use coreset_core::{reduce_to_compact, Error, Exec, SelectionConfig};
use proptest::prelude::*;

fn corpus() -> Vec<String> {
    let spec = SynthSpec {
        n_samples: 60,
        n_planted_skills: 5,
        d_ff: 48,
        ffn_full: true,
        seed: 9,
        ..Default::default()
    };
    let (records, _) = generate(&spec, Exec::Serial).unwrap();
    records.iter().map(|r| r.to_line()).collect()
}

#[test]
fn canonical_lines_round_trip() {
    let cfg = SelectionConfig::default();
    for line in corpus() {
        let rec = parse_record(line.as_bytes(), Format::Raw).unwrap();
        assert_eq!(rec.to_line(), line);
        let compact = Record::Compact(reduce_to_compact(&rec, &cfg).unwrap());
        let c_line = compact.to_line();
        assert_eq!(parse_record(c_line.as_bytes(), Format::Compact).unwrap().to_line(), c_line);
    }
}

/// Field-level mutations that each break one schema invariant.
const MUTATIONS: &[(&str, &str)] = &[
    ("\"v\":1", "\"v\":3"),
    ("\"n_visual_tokens\":16", "\"n_visual_tokens\":15"),
    ("\"image_present\":true", "\"image_present\":false"),
    ("\"ce_with_image\":[", "\"ce_with_image\":[-1.0,"),
    ("\"ce_without_image\":[", "\"ce_without_image\":[0.5,"),
    ("\"ffn\":{\"8\":[", "\"ffn\":{\"8\":[1e999,"),
    ("\"attn\":{\"8\":[[", "\"attn\":{\"8\":[[-0.5,"),
    ("\"attn\":{\"8\":[[", "\"attn\":{\"8\":[[2.0,"),
    ("\"sample_id\":\"", "\"bogus\":1,\"sample_id\":\""),
    ("\"attn\":{\"8\"", "\"attn\":{\"9\""),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn parse_rejects_mutated_records(rec_idx in 0usize..60, mutation in 0..MUTATIONS.len()) {
        let lines = corpus();
        let line = &lines[rec_idx];
        let (from, to) = MUTATIONS[mutation];
        prop_assume!(line.contains(from));
        let mutated = line.replacen(from, to, 1);
        let result = parse_record(mutated.as_bytes(), Format::Raw);
        prop_assert!(
            matches!(result, Err(Error::Schema { .. }) | Err(Error::Parse { .. })),
            "accepted mutation {:?}", MUTATIONS[mutation]
        );
    }

    #[test]
    fn truncated_lines_are_parse_errors(rec_idx in 0usize..60, cut in 1usize..200) {
        let lines = corpus();
        let line = &lines[rec_idx];
        let cut = cut.min(line.len() - 1);
        let result = parse_record(&line.as_bytes()[..cut], Format::Raw);
        prop_assert!(
            matches!(result, Err(Error::Parse { .. })),
            "unexpected {:?}", result.err()
        );
    }
}
