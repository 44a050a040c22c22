use std::collections::HashMap;

use binlift_core::metrics::{normalize_whitespace, SimilarityPair};
use binlift_core::{edit_distance, edit_similarity, pass_at_k, MetricError, PassAtKInput};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::index::sample;
use rand::SeedableRng;

/// The recursive definition over suffixes, memoized on suffix lengths.
fn naive(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len().max(b.len());
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let d = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo).min(go(a, &b[1..], memo)).min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut HashMap::new())
}

fn short_word() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..3, 0..=12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_naive_recursion(a in short_word(), b in short_word()) {
        prop_assert_eq!(edit_distance(&a, &b), naive(&a, &b));
    }

    #[test]
    fn symmetric_and_bounded(a in short_word(), b in short_word()) {
        let d = edit_distance(&a, &b);
        prop_assert_eq!(d, edit_distance(&b, &a));
        prop_assert!(d >= a.len().abs_diff(b.len()));
        prop_assert!(d <= a.len().max(b.len()));
        prop_assert_eq!(d == 0, a == b);
    }

    #[test]
    fn triangle_inequality(a in short_word(), b in short_word(), c in short_word()) {
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
    }

    #[test]
    fn self_similarity_is_one(src in "[a-z{}();=+ \n\t]{1,80}") {
        prop_assume!(!normalize_whitespace(&src).is_empty());
        prop_assert_eq!(edit_similarity(&src, &src).unwrap(), 1.0);
    }

    #[test]
    fn similarity_at_most_one(p in "[a-c ]{0,30}", t in "[a-c]{1,30}") {
        let pair = SimilarityPair::new(&p, &t);
        let es = pair.similarity().unwrap();
        prop_assert!(es <= 1.0);
        prop_assert!(es >= 1.0 - pair.prediction_len().max(pair.truth_len()) as f64 / pair.truth_len() as f64);
    }

    #[test]
    fn pass_at_k_monotone(n in 1u64..60, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..1.0) {
        let c = ((n as f64) * c_frac) as u64;
        let k = 1 + ((n - 1) as f64 * k_frac) as u64;
        let p = pass_at_k(PassAtKInput::new(n, c, k).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if k < n {
            prop_assert!(pass_at_k(PassAtKInput::new(n, c, k + 1).unwrap()).unwrap() >= p - 1e-12);
        }
        if c < n {
            prop_assert!(pass_at_k(PassAtKInput::new(n, c + 1, k).unwrap()).unwrap() >= p - 1e-12);
        }
    }
}

#[test]
fn kitten_sitting() {
    let (a, b) = (b"kitten", b"sitting");
    assert_eq!(naive(a, b), 3);
    assert_eq!(edit_distance(a, b), 3);
    assert!((edit_similarity("kitten", "sitting").unwrap() - 4.0 / 7.0).abs() < 1e-9);
}

#[test]
fn whitespace_is_normalized_before_scoring() {
    assert_eq!(edit_similarity("int  f()\n{ return 1; }", "int f() { return 1; }").unwrap(), 1.0);
    assert_eq!(edit_similarity("x", "  \n"), Err(MetricError::EmptyGroundTruth));
}

#[test]
fn pass_at_1_is_exactly_c_over_n() {
    for n in 1..=50u64 {
        for c in 0..=n {
            let p = pass_at_k(PassAtKInput::new(n, c, 1).unwrap()).unwrap();
            assert_eq!(p, c as f64 / n as f64, "n={n} c={c}");
        }
    }
    assert_eq!(pass_at_k(PassAtKInput::new(20, 1, 1).unwrap()).unwrap(), 0.05);
}

#[test]
fn rejects_invalid_counts() {
    for (n, c, k) in [(5, 6, 1), (5, 2, 0), (5, 2, 6), (0, 0, 1)] {
        assert_eq!(PassAtKInput::new(n, c, k), Err(MetricError::InvalidInput { n, c, k }));
    }
}

#[test]
fn large_inputs_use_the_product_form() {
    let p = pass_at_k(PassAtKInput::new(200, 37, 100).unwrap()).unwrap();
    let direct = 1.0 - (164..=200).map(|i| 1.0 - 100.0 / i as f64).product::<f64>();
    assert!((p - direct).abs() < 1e-12);
}

#[test]
fn agrees_with_sampling() {
    let mut rng = StdRng::seed_from_u64(7);
    for (n, c, k) in [(10, 3, 2), (20, 5, 10), (8, 1, 4), (30, 12, 5)] {
        let trials = 100_000;
        let hits = (0..trials).filter(|_| sample(&mut rng, n, k).iter().any(|i| i < c)).count();
        let p = pass_at_k(PassAtKInput::new(n as u64, c as u64, k as u64).unwrap()).unwrap();
        assert!((hits as f64 / trials as f64 - p).abs() < 0.01, "n={n} c={c} k={k}");
    }
}
