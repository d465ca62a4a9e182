use proptest::prelude::*;
use smartline_core::isoforest::{c_factor, fit, threshold_from_contamination, IsoParams};
use smartline_core::rng::SplitMix64;

/// `2 H(n-1) - 2(n-1)/n` with `H(i) = ln i + 0.5772156649`, written out again.
fn c_oracle(n: usize) -> f64 {
    let n = n as f64;
    2.0 * ((n - 1.0).ln() + 0.5772156649) - 2.0 * (n - 1.0) / n
}

/// Same, with the harmonic number summed term by term.
fn c_exact(n: usize) -> f64 {
    let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
    2.0 * harmonic - 2.0 * (n as f64 - 1.0) / n as f64
}

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

#[test]
fn normaliser_values() {
    assert_eq!(c_factor(1), 0.0);
    assert_eq!(c_factor(2), 1.0);
    assert!(
        (c_factor(256) - c_oracle(256)).abs() < 1e-4,
        "{} vs {}",
        c_factor(256),
        c_oracle(256)
    );
    for n in [3, 10, 64, 1000, 5000] {
        assert!((c_factor(n) - c_oracle(n)).abs() < 1e-12, "n = {n}");
        // The approximated harmonic number drifts from the exact sum by under 1/(n-1).
        assert!((c_factor(n) - c_exact(n)).abs() < 1.0 / (n - 1) as f64, "n = {n}");
    }
}

#[test]
fn identical_rows_score_one_half() {
    let rows = vec![vec![3.0, -1.0]; 300];
    let model = fit(&rows, names(2), IsoParams::default(), 9).unwrap();
    for s in model.score_batch(&rows).unwrap() {
        assert!((s - 0.5).abs() <= 1e-9, "{s}");
    }
}

fn flag_rate_bounds(scores: &[f64], q: f64) -> (f64, f64, f64) {
    let threshold = threshold_from_contamination(scores, q).unwrap();
    let n = scores.len() as f64;
    let flagged = scores.iter().filter(|s| **s >= threshold).count() as f64 / n;
    let tie_mass = scores.iter().filter(|s| **s == threshold).count() as f64 / n;
    (flagged, q, q + tie_mass)
}

#[test]
fn calibration_on_fitted_scores() {
    let mut rng = SplitMix64::new(3);
    let rows: Vec<Vec<f64>> = (0..2000)
        .map(|_| vec![rng.next_gaussian(), rng.next_gaussian()])
        .collect();
    let model = fit(&rows, names(2), IsoParams::default(), 3).unwrap();
    let scores = model.score_batch(&rows).unwrap();
    for q in [0.005, 0.01, 0.05, 0.2] {
        let (rate, lo, hi) = flag_rate_bounds(&scores, q);
        assert!(
            rate >= lo - 1e-9 && rate <= hi + 1e-12,
            "q {q}: {rate} not in [{lo}, {hi}]"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn calibration_holds_with_ties(
        scores in prop::collection::vec(prop::sample::select(vec![0.3, 0.4, 0.5, 0.55, 0.7]), 1..300),
        q in 0.001f64..0.5,
    ) {
        let (rate, lo, hi) = flag_rate_bounds(&scores, q);
        prop_assert!(rate >= lo - 1e-9 && rate <= hi + 1e-12, "{} not in [{}, {}]", rate, lo, hi);
    }

    #[test]
    fn scores_are_probabilities(seed in 0u64..200, n in 2usize..120) {
        let mut rng = SplitMix64::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.next_f64(), rng.next_f64() * 10.0]).collect();
        let params = IsoParams { n_trees: 20, ..IsoParams::default() };
        let model = fit(&rows, names(2), params, seed).unwrap();
        for s in model.score_batch(&rows).unwrap() {
            prop_assert!(s > 0.0 && s <= 1.0);
        }
    }
}
