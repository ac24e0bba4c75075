//! Local analysis near singularities, hyperbolic times and sink/source duality.

use std::f64::consts::PI;

use hyptimes::classify::{
    classify_source, classify_trajectory, cusp_crossings, cusp_section_hit, gronwall_check, grid_points,
    ClassifyConfig, CuspFrame, Verdict,
};
use hyptimes::flow::{integrate, iterate, SmoothSystem};
use hyptimes::hyptimes::{contracting_ball_radius, detect_lpf_reverse_hyperbolic_times, detect_reverse_hyperbolic_times_map, step_logs};
use hyptimes::lpf::lpf_cocycle;
use hyptimes::systems::{bowen_type, builtin_linear, north_south_map, product_sinus_ns, sinus_roots, sinus_t_of_s, BowenParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn saddle(lambda: f64, xi: f64) -> SmoothSystem {
    builtin_linear(DMatrix::from_diagonal(&v(&[-lambda, xi]))).unwrap()
}

#[test]
fn gronwall_near_bowen_saddles() {
    let sys = bowen_type(BowenParams::default()).unwrap();
    for sigma in [v(&[PI, 0.0]), v(&[3.0 * PI, 0.0])] {
        for r in [1e-2, 1e-3, 1e-4] {
            for a in [0.3, 1.9, 3.5, 5.2] {
                let q = &sigma + v(&[r * f64::cos(a), r * f64::sin(a)]);
                for k in 1..=10 {
                    let t = 0.1 * k as f64;
                    let g = gronwall_check(&sys, &sigma, &q, t, None).unwrap();
                    let bound = g.delta_bar * t * (g.lipschitz * t).exp();
                    assert!((g.rhs - bound).abs() <= 1e-12 * bound.max(1.0));
                    assert!(g.lhs <= g.rhs + 1e-9 && g.holds, "{sigma:?} r={r} t={t}: {g:?}");
                }
            }
        }
    }
}

#[test]
fn cusp_hit_time_closed_form() {
    let sys = saddle(1.0, 1.0);
    let o = v(&[0.0, 0.0]);
    let h = cusp_section_hit(&sys, &o, &v(&[1.0, (-3.0f64).exp()]), 10.0).unwrap().unwrap();
    assert!((h.time - 1.0).abs() <= 1e-8, "{}", h.time);
    assert!((h.u_norm.powi(2) - h.v).abs() <= 1e-10);
    assert!(cusp_section_hit(&sys, &o, &v(&[0.5, 0.0]), 50.0).unwrap().is_none());
}

#[test]
fn stable_axis_has_no_lpf_reverse_times() {
    // Along W^s the normal direction is the unstable one: ln‖P^t‖ = 2t.
    let sys = saddle(1.0, 2.0);
    let seg = integrate(&sys, &v(&[1.0, 0.0]), 5.0, 1e-3, true).unwrap();
    let c = lpf_cocycle(&seg, &sys).unwrap();
    let n = c.len() - 1;
    assert!((c.log_norms[n] - 2.0 * c.times[n]).abs() < 1e-6);
    for zeta in [0.1, 1.0, 3.0] {
        let r = detect_lpf_reverse_hyperbolic_times(&c, zeta, 2.0).unwrap();
        assert!(!r.certified && r.times.is_empty(), "{r:?}");
    }
}

#[test]
fn stable_axis_orbit_reports_both_readings() {
    let sys = saddle(1.0, 2.0);
    let r = classify_trajectory(&sys, &v(&[1.0, 0.0]), &ClassifyConfig::default()).unwrap();
    assert!(matches!(r.verdict, Verdict::AccumulatesSaddle { dim_stable: 1, dim_unstable: 1, .. }), "{:?}", r.verdict);
    assert!(r.caveats.iter().any(|c| c.contains("stable manifold")));
}

#[test]
fn north_south_duality() {
    let f = north_south_map(20).unwrap();
    let cfg = ClassifyConfig {
        horizon: Some(200.0),
        ..Default::default()
    };
    for x0 in [0.4, 1.0, 2.8, 6.0] {
        let fwd = classify_trajectory(&f, &v(&[x0]), &cfg).unwrap();
        assert_eq!(fwd.verdict, Verdict::MapSinkBasin);
        assert!((fwd.evidence.point.as_ref().unwrap()[0] - 0.5 * PI).abs() < 1e-9);
        assert!((fwd.evidence.exponent.unwrap() + 1.0).abs() < 1e-3);
        let src = classify_source(&f, &v(&[x0]), &cfg).unwrap();
        assert_eq!(src.verdict, Verdict::MapSourceOrbit);
        assert!((src.evidence.point.as_ref().unwrap()[0] - 1.5 * PI).abs() < 1e-9);
        // Evidence of a source refers to the inverse map.
        assert!((src.evidence.exponent.unwrap() + 1.0).abs() < 1e-3);
        // The inverse map classified forward finds the same point as a sink.
        let inv = classify_trajectory(f.inverse().unwrap(), &v(&[x0]), &cfg).unwrap();
        assert_eq!(inv.verdict, Verdict::MapSinkBasin);
        assert_eq!(inv.evidence.point, src.evidence.point);
    }
}

#[test]
fn reversed_field_agrees_with_source_branch() {
    let sys = builtin_linear(DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -1.0, 0.5])).unwrap();
    let cfg = ClassifyConfig::default();
    let x0 = v(&[0.8, -0.3]);
    let src = classify_source(&sys, &x0, &cfg).unwrap();
    assert_eq!(src.verdict, Verdict::FlowSource);
    let rev = classify_trajectory(&sys.reversed().unwrap(), &x0, &cfg).unwrap();
    assert_eq!(rev.verdict, Verdict::FlowEquilibriumSink);
    assert_eq!(src.evidence.point, rev.evidence.point);
    assert!(src.evidence.point.unwrap().iter().all(|c| c.abs() < 1e-9));
}

#[test]
fn sinks_of_product_map_are_attracting_roots() {
    let f = product_sinus_ns(20).unwrap();
    let roots = sinus_roots(1e-3);
    let pts = grid_points(f.sample_box.as_ref().unwrap(), &[8, 8]).unwrap();
    for x0 in pts {
        let r = classify_trajectory(&f, &x0, &ClassifyConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::MapSinkBasin, "{x0:?}");
        let p = r.evidence.point.unwrap();
        let t = sinus_t_of_s(p[0]);
        let nearest = roots.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())).unwrap();
        assert!(nearest.attracting && (nearest.t - t).abs() <= 1e-6, "{t} vs {nearest:?}");
        assert!((p[1] - 0.5 * PI).abs() <= 1e-6);
    }
}

#[test]
fn contracting_balls_shadow_reverse_hyperbolic_times() {
    let f = north_south_map(20).unwrap();
    let orbit = iterate(&f, &v(&[0.3]), 40, true).unwrap();
    let logs = step_logs(&orbit).unwrap();
    let zeta = 1.5;
    let m = logs.len();
    let rec = detect_reverse_hyperbolic_times_map(&logs, zeta, m, None).unwrap();
    assert!(rec.certified);
    let probes: Vec<DVector<f64>> = (0..2000).map(|k| v(&[2.0 * PI * k as f64 / 2000.0])).collect();
    let ball = contracting_ball_radius(&f, (-0.5 * zeta).exp(), &probes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(tau, horizon) in &rec.indices {
        let x = &orbit.states[tau];
        for _ in 0..100 {
            let d0 = rng.gen_range(0.0..ball.delta1);
            let mut y = x + v(&[if rng.gen_bool(0.5) { d0 } else { -d0 }]);
            let mut xj = x.clone();
            for j in 1..=horizon - tau {
                y = f.eval(&y);
                xj = f.eval(&xj);
                let d = f.topo.distance(&y, &xj);
                assert!(d <= ball.lambda1.powi(j as i32) * d0 + 1e-15, "tau={tau} j={j}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// u = u₀e^{−λt}, v = v₀e^{ξt} meets v = u² at t = ln(u₀²/v₀)/(ξ + 2λ).
    #[test]
    fn cusp_hit_time_general_rates(lambda in 0.5f64..2.0, xi in 0.5f64..2.0, u0 in 0.2f64..1.0, k in 0.5f64..4.0) {
        let sys = saddle(lambda, xi);
        let v0 = u0 * u0 * (-k).exp();
        let h = cusp_section_hit(&sys, &v(&[0.0, 0.0]), &v(&[u0, v0]), 20.0).unwrap().unwrap();
        prop_assert!((h.time - k / (xi + 2.0 * lambda)).abs() <= 1e-8);
    }

    /// Orbits off both axes starting in the unit box meet the cusp section exactly once before leaving.
    #[test]
    fn cusp_section_met_exactly_once(u0 in -1.0f64..1.0, v0 in -1.0f64..1.0) {
        prop_assume!(u0.abs() > 1e-3 && v0.abs() > 1e-3);
        let sys = saddle(1.0, 1.0);
        let o = v(&[0.0, 0.0]);
        let frame = CuspFrame::new(&sys, &o).unwrap();
        let x0 = v(&[u0, v0]);
        let crossings = cusp_crossings(&sys, &frame, &x0, 50.0, 1.0);
        let hit = cusp_section_hit(&sys, &o, &x0, 50.0).unwrap().unwrap();
        if u0 * u0 > v0.abs() {
            prop_assert_eq!(crossings, 1);
            prop_assert!(hit.time > 0.0);
        } else {
            prop_assert_eq!(crossings, 0);
            prop_assert_eq!(hit.time, 0.0);
        }
    }

    /// A located map sink is a fixed point with spectral radius below one when re-checked from scratch.
    #[test]
    fn map_sinks_recertify(x in 0.0f64..(2.0 * PI), angle in -1.0f64..1.0, factor in 0.1f64..0.9) {
        let cfg = ClassifyConfig { horizon: Some(200.0), ..Default::default() };
        for (f, x0) in [
            (north_south_map(20).unwrap(), v(&[x])),
            (hyptimes::systems::rotation_contraction(angle, factor).unwrap(), v(&[x.cos(), x.sin()])),
        ] {
            let r = classify_trajectory(&f, &x0, &cfg).unwrap();
            prop_assume!(r.verdict == Verdict::MapSinkBasin);
            let p = v(r.evidence.point.as_ref().unwrap());
            prop_assert!(f.topo.distance(&f.eval(&p), &p) <= 1e-9);
            prop_assert!(hyptimes::linalg::spectral_radius(&f.jacobian(&p)) < 1.0 - 1e-6);
        }
    }

    /// For linear fields Dφ_t = e^{tA}, so the Gronwall left side vanishes.
    #[test]
    fn gronwall_linear_exact(entries in prop::collection::vec(-1.0f64..1.0, 4), q in prop::collection::vec(-1.0f64..1.0, 2), t in 0.05f64..1.0) {
        let sys = builtin_linear(DMatrix::from_row_slice(2, 2, &entries)).unwrap();
        let g = gronwall_check(&sys, &v(&[0.0, 0.0]), &v(&q), t, None).unwrap();
        prop_assert!(g.lhs <= 1e-9, "{:e}", g.lhs);
    }
}
