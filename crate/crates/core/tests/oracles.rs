//! Brute-force oracles for the score, retrieval and recall computations.

mod common;

use loopchat_core::traffic::{compute_tps, compute_tps_raw, TpsInput};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn hand_tps(terms: &[(f64, f64, f64)], free_flow: f64) -> f64 {
    let weight: f64 = terms.iter().map(|(_, q, l)| q * l).sum();
    let mean_speed: f64 = terms.iter().map(|(v, q, l)| v * (q * l / weight)).sum();
    (mean_speed / free_flow * 100.0).min(100.0)
}

fn inputs(terms: &[(f64, f64, f64)]) -> Vec<TpsInput> {
    terms.iter().map(|&(v, q, l)| TpsInput::new(v, q, l)).collect()
}

#[test]
fn tps_fixed_case() {
    let terms = [(30.0, 100.0, 1.0), (60.0, 50.0, 2.0)];
    assert_eq!(compute_tps(&inputs(&terms), 60.0).unwrap(), 75.0);
}

#[test]
fn tps_matches_hand_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..500 {
        let n = rng.random_range(1..=5);
        let terms: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| (rng.random_range(0.0..80.0), rng.random_range(1.0..40.0), rng.random_range(0.05..3.0)))
            .collect();
        let free_flow = rng.random_range(40.0..75.0);
        let got = compute_tps(&inputs(&terms), free_flow).unwrap();
        let want = hand_tps(&terms, free_flow);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "case {case}: {got} vs {want}");
    }
}

fn terms_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.0..60.0f64, 0.5..50.0f64, 0.05..3.0f64), 1..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tps_stays_in_range(terms in terms_strategy()) {
        let tps = compute_tps(&inputs(&terms), 60.0).unwrap();
        prop_assert!((0.0..=100.0).contains(&tps));
    }

    #[test]
    fn tps_ignores_volume_scale(terms in terms_strategy(), c in 0.01..100.0f64) {
        let scaled: Vec<_> = terms.iter().map(|&(v, q, l)| (v, q * c, l)).collect();
        let a = compute_tps(&inputs(&terms), 60.0).unwrap();
        let b = compute_tps(&inputs(&scaled), 60.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn tps_increases_with_any_speed(terms in terms_strategy(), pick in any::<prop::sample::Index>(), bump in 0.5..20.0f64) {
        let i = pick.index(terms.len());
        let mut faster = terms.clone();
        faster[i].0 += bump;
        let before = compute_tps_raw(&inputs(&terms), 60.0).unwrap();
        let after = compute_tps_raw(&inputs(&faster), 60.0).unwrap();
        prop_assert!(after > before, "{} !> {}", after, before);
    }
}

#[test]
fn retrieve_matches_brute_force() {
    assert_eq!(common::retrieval_mismatches(3, 240), 0);
}

#[test]
fn recall_matches_brute_force() {
    assert_eq!(common::recall_mismatches(5, 200), 0);
}
