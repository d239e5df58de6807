use plugnet::analysis::entropy::{required_entropy, DEFAULT_MIN_LEN, DEFAULT_THRESHOLD};
use plugnet::analysis::{classify_trace_fields, shannon_entropy, EntropyError};
use plugnet::scenario::{self, ScenarioName, ScenarioOptions};
use proptest::prelude::*;

// Reference values from a byte-histogram computation done outside this crate.
const GOLDEN: &[(&[u8], f64)] = &[
    (b"hello world", 2.8453509366224368),
    (b"221EC1A59C88CD2", 3.0062389286533895),
    (b"abababab", 1.0),
    (b"aab", 0.9182958340544896),
    (
        b"the quick brown fox jumps over the lazy dog",
        4.385453417442482,
    ),
    (b"\x00\x00\x00\x00\x00\x00\x00\x01", 0.5435644431995964),
];

#[test]
fn golden_values() {
    for (bytes, want) in GOLDEN {
        let got = shannon_entropy(bytes).unwrap();
        assert!(
            (got - want).abs() < 1e-12,
            "{:?}: {got} vs {want}",
            String::from_utf8_lossy(bytes)
        );
    }
    let ramp: Vec<u8> = (0..1000).map(|i| (i % 256) as u8).collect();
    assert!((shannon_entropy(&ramp).unwrap() - 7.995666984610172).abs() < 1e-12);
}

#[test]
fn constant_and_uniform_extremes() {
    assert_eq!(shannon_entropy(&[0x41; 1024]).unwrap(), 0.0);
    let all: Vec<u8> = (0..=255).collect();
    assert!((shannon_entropy(&all).unwrap() - 8.0).abs() < 1e-9);
    assert_eq!(shannon_entropy(&[]), Err(EntropyError::EmptyInput));
}

#[test]
fn short_field_requirement() {
    let golden = [
        (8, 2.7),
        (15, 3.516201536047667),
        (16, 3.6),
        (20, 3.8897352853986265),
        (31, 4.458776679348188),
    ];
    for (n, want) in golden {
        let got = required_entropy(n, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN).unwrap();
        assert!((got - want).abs() < 1e-12, "{n}");
    }
    assert_eq!(
        required_entropy(7, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN),
        None
    );
    assert_eq!(
        required_entropy(32, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN),
        Some(DEFAULT_THRESHOLD)
    );
    assert_eq!(
        required_entropy(4096, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN),
        Some(DEFAULT_THRESHOLD)
    );
}

fn benign_trace(seed: u64) -> String {
    let run = scenario::run(ScenarioName::Benign, &ScenarioOptions::new(seed)).unwrap();
    String::from_utf8(run.trace_jsonl()).unwrap()
}

fn is_digest(name: &str) -> bool {
    name.ends_with("digest")
        || name.ends_with("chap.response")
        || name == "integrity"
        || name == "mac"
}

fn is_serial_or_enum(name: &str) -> bool {
    name.ends_with("serial")
        || ["action", "status", "code", "in_reply_to", "re_register"]
            .iter()
            .any(|s| name == *s || name.ends_with(&format!(".{s}")))
}

#[test]
fn benign_trace_digests_flagged_serials_and_enums_not() {
    let report =
        classify_trace_fields(&benign_trace(7), DEFAULT_THRESHOLD, DEFAULT_MIN_LEN).unwrap();
    let digests: Vec<_> = report
        .fields
        .iter()
        .filter(|f| is_digest(&f.name) && f.byte_count == 20)
        .collect();
    assert!(digests.len() >= 5);
    assert!(digests.iter().all(|f| f.flagged), "{digests:?}");
    let plain: Vec<_> = report
        .fields
        .iter()
        .filter(|f| is_serial_or_enum(&f.name))
        .collect();
    assert!(!plain.is_empty());
    assert!(
        plain.iter().all(|f| !f.flagged),
        "{:?}",
        plain.iter().filter(|f| f.flagged).collect::<Vec<_>>()
    );
}

#[test]
fn threshold_above_eight_flags_nothing() {
    let report = classify_trace_fields(&benign_trace(3), 8.01, DEFAULT_MIN_LEN).unwrap();
    assert_eq!(report.flagged().count(), 0);
}

#[test]
fn malformed_trace_line_is_located() {
    let mut trace = benign_trace(1);
    let good_lines = trace.lines().count();
    trace.push_str("{not json}\n");
    match classify_trace_fields(&trace, DEFAULT_THRESHOLD, DEFAULT_MIN_LEN) {
        Err(EntropyError::Parse { line, .. }) => assert_eq!(line, good_lines + 1),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn bounded_by_zero_and_log2_len(bytes in proptest::collection::vec(any::<u8>(), 1..600)) {
        let h = shannon_entropy(&bytes).unwrap();
        let cap = (bytes.len() as f64).log2().min(8.0);
        prop_assert!(h >= 0.0);
        prop_assert!(h <= cap + 1e-9);
    }

    #[test]
    fn permutation_invariant(mut bytes in proptest::collection::vec(any::<u8>(), 1..300), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let before = shannon_entropy(&bytes).unwrap();
        bytes.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((shannon_entropy(&bytes).unwrap() - before).abs() < 1e-9);
    }

    #[test]
    fn k_equiprobable_symbols_give_log2_k(k in 1usize..=256, reps in 1usize..5) {
        let bytes: Vec<u8> = (0..k).flat_map(|s| std::iter::repeat_n(s as u8, reps)).collect();
        prop_assert!((shannon_entropy(&bytes).unwrap() - (k as f64).log2()).abs() < 1e-9);
    }
}
