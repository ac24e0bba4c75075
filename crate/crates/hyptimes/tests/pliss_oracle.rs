//! Discrete Pliss selection against quadratic brute-force oracles.

use hyptimes::pliss::{pliss_times, reverse_pliss_times};
use proptest::prelude::*;

/// 1-based n with Σ_{j=n'+1}^{n} a_j ≥ c1(n − n') for all 0 ≤ n' < n.
fn brute_forward(a: &[f64], c1: f64) -> Vec<usize> {
    (1..=a.len())
        .filter(|&n| (0..n).all(|m| a[m..n].iter().sum::<f64>() >= c1 * (n - m) as f64))
        .collect()
}

/// 0-based h with Σ_{i=h}^{h+L−1} a_i ≥ c1·L for all 1 ≤ L ≤ N − h.
fn brute_reverse(a: &[f64], c1: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&h| (1..=a.len() - h).all(|l| a[h..h + l].iter().sum::<f64>() >= c1 * l as f64))
        .collect()
}

/// Sequences on a 1/64 grid so every partial sum is exact.
fn dyadic_sequence(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-128i32..=128, 1..=max_len).prop_map(|v| v.into_iter().map(|k| k as f64 / 64.0).collect())
}

#[test]
fn exhaustive_two_valued_sequences() {
    let (hi, lo, c1, c2, h) = (2.0, -0.5, 0.5, 1.0, 2.0);
    for n in 1..=12usize {
        for mask in 0u32..(1 << n) {
            let a: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { hi } else { lo }).collect();
            let r = pliss_times(&a, c1, c2, h).unwrap();
            assert_eq!(r.indices, brute_forward(&a, c1), "{a:?}");
            assert_eq!(reverse_pliss_times(&a, c1, c2, h).unwrap().indices, brute_reverse(&a, c1), "{a:?}");
            if r.guarantee_active {
                assert!(r.count_or_measure >= r.theta * n as f64, "{a:?}");
            }
        }
    }
}

#[test]
fn alternating_example() {
    let r = pliss_times(&[2.0, 0.0, 2.0, 0.0], 0.5, 1.0, 2.0).unwrap();
    assert_eq!(r.indices, vec![1, 3]);
    assert!((r.theta - 1.0 / 3.0).abs() < 1e-15);
    assert!(r.guarantee_active && r.count_or_measure > r.theta * 4.0);
    assert_eq!(reverse_pliss_times(&[0.0, 2.0, 0.0, 2.0], 0.5, 1.0, 2.0).unwrap().indices, vec![1, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_matches_oracle(a in dyadic_sequence(200), c1k in 1i32..64) {
        let c1 = c1k as f64 / 64.0;
        let h = a.iter().copied().fold(c1 + 1.0, f64::max);
        let r = pliss_times(&a, c1, c1 + 0.5, h).unwrap();
        prop_assert_eq!(&r.indices, &brute_forward(&a, c1));
    }

    #[test]
    fn reverse_matches_oracle(a in dyadic_sequence(200), c1k in -32i32..64) {
        let c1 = c1k as f64 / 64.0;
        let r = reverse_pliss_times(&a, c1, c1 + 0.5, 4.0).unwrap();
        prop_assert_eq!(&r.indices, &brute_reverse(&a, c1));
    }

    /// Entries ≤ H with mean ≥ c2 force at least θN Pliss times.
    #[test]
    fn density_bound_under_hypotheses(raw in dyadic_sequence(200), c1k in 1i32..32, gap in 1i32..32) {
        let c1 = c1k as f64 / 64.0;
        let c2 = c1 + gap as f64 / 64.0;
        let h = 2.0;
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        // Affine pull toward H keeps entries ≤ H and lifts the mean to c2.
        let a: Vec<f64> = if mean >= c2 {
            raw.clone()
        } else {
            let s = (h - c2) / (h - mean);
            raw.iter().map(|v| h - (h - v) * s).collect()
        };
        let r = pliss_times(&a, c1, c2, h).unwrap();
        if r.guarantee_active {
            prop_assert!(r.count_or_measure >= r.theta * n);
        }
    }

    #[test]
    fn selected_indices_are_sorted_and_in_range(a in dyadic_sequence(60)) {
        let r = pliss_times(&a, 0.25, 0.5, 4.0).unwrap();
        prop_assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.indices.iter().all(|&i| (1..=a.len()).contains(&i)));
        let rr = reverse_pliss_times(&a, 0.25, 0.5, 4.0).unwrap();
        prop_assert!(rr.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(rr.indices.iter().all(|&i| i < a.len()));
    }
}
