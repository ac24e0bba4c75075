//! Pliss sets of sampled functions H(t) on [0, T].

use hyptimes::pliss::{default_lower_slope, flow_pliss_set, OPEN_SET_TOL};
use proptest::prelude::*;

fn grid(t_end: f64, step: f64) -> Vec<f64> {
    let n = (t_end / step).round() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

fn h1(t: f64) -> f64 {
    (1.0 + t).ln()
}

fn h2(t: f64) -> f64 {
    (1.0 + (2.0 * t).sin() / 7.0) * (1.0 + t).ln()
}

/// Grid indices k with G(t_j) < G(t_k) for every later sample, G = H − (c+ε)t.
fn brute_suffix(times: &[f64], h: &[f64], slope: f64) -> Vec<usize> {
    let g: Vec<f64> = times.iter().zip(h).map(|(t, v)| v - slope * t).collect();
    (0..g.len())
        .filter(|&k| g[k + 1..].iter().all(|&gj| gj < g[k] + OPEN_SET_TOL))
        .collect()
}

#[test]
fn log_function_set_is_two_thirds_to_ten() {
    let step = 1e-3;
    let t = grid(10.0, step);
    let h: Vec<f64> = t.iter().map(|&s| h1(s)).collect();
    let r = flow_pliss_set(&t, &h, 0.5, 0.1, None).unwrap();
    assert_eq!(r.intervals.len(), 1);
    let (a, b) = r.intervals[0];
    // H′(t) = 1/(1+t) equals c + ε = 0.6 at t = 2/3.
    assert!((a - 2.0 / 3.0).abs() <= step, "{a}");
    assert_eq!(b, 10.0);
    let slope = r.lower_slope.unwrap();
    assert!(slope <= 1.0 / 11.0 && slope > 1.0 / 11.0 - 1e-3);
    assert!((r.theta - 0.1 / (0.6 - slope)).abs() < 1e-12);
    assert!(r.count_or_measure >= r.theta * 10.0);
    assert!((r.count_or_measure - 28.0 / 3.0).abs() <= 2.0 * step);
}

#[test]
fn oscillating_function_matches_suffix_scan() {
    let t = grid(10.0, 1e-3);
    let h: Vec<f64> = t.iter().map(|&s| h2(s)).collect();
    let r = flow_pliss_set(&t, &h, 0.5, 0.1, None).unwrap();
    assert_eq!(r.indices, brute_suffix(&t, &h, 0.6));
    assert!(r.intervals.len() > 1);
}

#[test]
fn lower_slope_bounds_difference_quotients() {
    let t = grid(10.0, 1e-2);
    let h: Vec<f64> = t.iter().map(|&s| h2(s)).collect();
    let a = default_lower_slope(&h, 1e-2);
    for i in 0..h.len() {
        for j in (i + 1..h.len()).step_by(37) {
            assert!(h[j] - h[i] >= a * (t[j] - t[i]) - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Random trigonometric H with H(0) = 0 against the quadratic scan.
    #[test]
    fn random_functions_match_suffix_scan(
        amp in prop::collection::vec(-1.0f64..1.0, 3),
        freq in prop::collection::vec(0.2f64..4.0, 3),
        drift in 0.0f64..1.0,
        c in 0.0f64..0.8,
        eps in 0.01f64..0.3,
    ) {
        let t = grid(5.0, 1e-2);
        let h: Vec<f64> = t
            .iter()
            .map(|&s| drift * s + (0..3).map(|i| amp[i] * (freq[i] * s).sin()).sum::<f64>())
            .collect();
        let r = flow_pliss_set(&t, &h, c, eps, None).unwrap();
        prop_assert_eq!(&r.indices, &brute_suffix(&t, &h, c + eps));
        // The last sample always qualifies; intervals cover exactly the indices.
        prop_assert_eq!(r.indices.last().copied(), Some(t.len() - 1));
        let covered: f64 = r.intervals.iter().map(|(a, b)| ((b - a) / 1e-2).round() + 1.0).sum();
        prop_assert_eq!(covered as usize, r.indices.len());
    }
}
