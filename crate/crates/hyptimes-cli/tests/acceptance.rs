//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use hyptimes::classify::{
    classify_source, classify_trajectory, cusp_section_hit, gronwall_check, return_map_contraction, ClassifyConfig,
    ReturnSettings, SectionDisk, SingularityKind, Verdict,
};
use hyptimes::flow::{cocycle_residual, integrate, integrate_with, IntegrateOptions, SmoothSystem};
use hyptimes::geometry::normal_frame;
use hyptimes::linalg::{eigenvalues, op_norm};
use hyptimes::lpf::{additivity_residual, generator_d, lpf_cocycle, sectional_exponents, LpfCocycle};
use hyptimes::pliss::{flow_pliss_set, pliss_times, OPEN_SET_TOL};
use hyptimes::systems::{bowen_type, builtin, builtin_linear, limit_cycle, north_south_map, sinus_roots, sinus_t_of_s, BowenParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

const PLISS_RUNTIME: Duration = Duration::from_secs(5);
const LIMIT_CYCLE_RUNTIME: Duration = Duration::from_secs(10);
const BOWEN_RUNTIME: Duration = Duration::from_secs(60);
const INTEGRATOR_TOL: f64 = 1e-7;
const ORDER_RATIO: (f64, f64) = (12.0, 20.0);
const LPF_COCYCLE_TOL: f64 = 1e-6;
const ADDITIVITY_TOL: f64 = 1e-6;
const GENERATOR_SLACK: f64 = 1e-9;
const GENERATOR_SAMPLES: usize = 10_000;
const SECTIONAL_TOL: f64 = 0.05;
const RETURN_REL_TOL: f64 = 1e-4;
const NS_EXPONENT_TOL: f64 = 1e-3;
const GRONWALL_SLACK: f64 = 1e-9;
const LINEAR_GRONWALL_TOL: f64 = 1e-9;
const CUSP_TIME_TOL: f64 = 1e-8;
const STRADDLE: f64 = 0.01;
const MIN_SINKS: usize = 5;
const ROOT_TOL: f64 = 1e-6;
const BASIN_FRACTION: f64 = 0.95;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn bin(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hyptimes"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("HYPTIMES_THREADS", t),
        None => cmd.env_remove("HYPTIMES_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn bin_json(args: &[&str]) -> Result<Value, String> {
    let out = bin(args, None);
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

// 1 -------------------------------------------------------------------------

fn brute_forward(a: &[f64], c1: f64) -> Vec<usize> {
    (1..=a.len())
        .filter(|&n| (0..n).all(|m| a[m..n].iter().sum::<f64>() >= c1 * (n - m) as f64))
        .collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut sequences = 0;
    let mut guaranteed = 0;
    let mut check = |a: &[f64], c1: f64, c2: f64, h: f64| -> Result<(), String> {
        let r = pliss_times(a, c1, c2, h).map_err(|e| e.to_string())?;
        ensure(r.indices == brute_forward(a, c1), format!("oracle mismatch on {a:?}"))?;
        if r.guarantee_active {
            guaranteed += 1;
            ensure(r.count_or_measure >= r.theta * a.len() as f64, format!("density bound fails on {a:?}"))?;
        }
        sequences += 1;
        Ok(())
    };
    for n in 1..=12usize {
        for mask in 0u32..(1 << n) {
            let a: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 2.0 } else { -0.5 }).collect();
            check(&a, 0.5, 1.0, 2.0)?;
        }
    }
    // Entries on a 1/64 grid keep every partial sum exact.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=200);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-64i32..=128) as f64 / 64.0).collect();
        let c1 = rng.gen_range(1..32) as f64 / 64.0;
        check(&a, c1, c1 + rng.gen_range(1..32) as f64 / 64.0, 2.0)?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < PLISS_RUNTIME, format!("runtime {elapsed:?}"))?;
    Ok(format!("{sequences} sequences match the oracle, {guaranteed} with active guarantee, {elapsed:.2?}"))
}

// 2 -------------------------------------------------------------------------

fn criterion_2() -> Check {
    let step = 1e-3;
    let t: Vec<f64> = (0..=10_000).map(|k| k as f64 * step).collect();
    let h1: Vec<f64> = t.iter().map(|s| (1.0 + s).ln()).collect();
    let r = flow_pliss_set(&t, &h1, 0.5, 0.1, None).map_err(|e| e.to_string())?;
    ensure(r.intervals.len() == 1, format!("intervals {:?}", r.intervals))?;
    let (a, b) = r.intervals[0];
    ensure((a - 2.0 / 3.0).abs() <= step && b == 10.0, format!("set [{a}, {b}]"))?;
    let slope = r.lower_slope.ok_or("no lower slope")?;
    let theta = 0.1 / (0.6 - slope);
    ensure(r.count_or_measure >= theta * 10.0, format!("measure {} < θ·10 = {}", r.count_or_measure, theta * 10.0))?;

    let h2: Vec<f64> = t.iter().map(|s| (1.0 + (2.0 * s).sin() / 7.0) * (1.0 + s).ln()).collect();
    let r2 = flow_pliss_set(&t, &h2, 0.5, 0.1, None).map_err(|e| e.to_string())?;
    let g: Vec<f64> = t.iter().zip(&h2).map(|(s, h)| h - 0.6 * s).collect();
    let brute: Vec<usize> = (0..g.len())
        .filter(|&k| g[k + 1..].iter().all(|&x| x < g[k] + OPEN_SET_TOL))
        .collect();
    ensure(r2.indices == brute, "oscillating variant differs from the suffix scan")?;

    let cli = bin_json(&["pliss", "--function", "log(1+t)", "--c", "0.5", "--eps", "0.1"])?;
    let m = cli["pliss"]["measure"].as_f64().ok_or("no measure field")?;
    ensure((m - 28.0 / 3.0).abs() <= 2.0 * step, format!("cli measure {m}"))?;
    Ok(format!(
        "set [{a:.3}, {b}], measure {m} ≥ θ·10 = {:.4}, oscillating variant {} points match",
        theta * 10.0,
        brute.len()
    ))
}

// 3 -------------------------------------------------------------------------

fn linear_errors(a: &DMatrix<f64>, exact: &DMatrix<f64>, dt: f64) -> Result<(f64, f64), String> {
    let sys = builtin_linear(a.clone()).map_err(|e| e.to_string())?;
    let x0 = v(&[0.7, -0.4]);
    let seg = integrate(&sys, &x0, 1.0, dt, true).map_err(|e| e.to_string())?;
    let z = seg.fundamental(seg.len() - 1).map_err(|e| e.to_string())?;
    Ok(((seg.last_state() - exact * &x0).norm(), op_norm(&(z - exact))))
}

fn ambient(c: &LpfCocycle, k: usize) -> DMatrix<f64> {
    &c.frames[k].basis * c.matrix(k) * c.frames[0].basis.transpose()
}

fn lpf_cocycle_residual(sys: &SmoothSystem, x0: &DVector<f64>, k: usize) -> Result<f64, String> {
    let e = |e: hyptimes::Error| e.to_string();
    let seg = integrate(sys, x0, 2.0 * PI, 1e-3, true).map_err(e)?;
    let c = lpf_cocycle(&seg, sys).map_err(e)?;
    let n = c.len() - 1;
    let tail = integrate(sys, &seg.states[k], c.times[n] - c.times[k], 1e-3, true).map_err(e)?;
    let ct = lpf_cocycle(&tail, sys).map_err(e)?;
    let whole = ambient(&c, n);
    Ok(op_norm(&(&whole - ambient(&ct, ct.len() - 1) * ambient(&c, k))) / op_norm(&whole))
}

fn criterion_3() -> Check {
    let (s, c) = 1f64.sin_cos();
    let cases = [
        (DMatrix::from_diagonal(&v(&[-1.0, 2.0])), DMatrix::from_diagonal(&v(&[(-1f64).exp(), 2f64.exp()]))),
        (
            DMatrix::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.5]),
            DMatrix::from_row_slice(2, 2, &[c, s, -s, c]) * (-0.5f64).exp(),
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut ratios = Vec::new();
    for (a, exact) in &cases {
        let (ex, ez) = linear_errors(a, exact, 1e-3)?;
        ensure(ex <= INTEGRATOR_TOL && ez <= INTEGRATOR_TOL, format!("errors {ex:e}, {ez:e}"))?;
        worst = worst.max(ex).max(ez);
        // Order check at coarse steps, where truncation dominates rounding.
        let (e1, z1) = linear_errors(a, exact, 0.1)?;
        let (e2, z2) = linear_errors(a, exact, 0.05)?;
        for r in [e1 / e2, z1 / z2] {
            ensure((ORDER_RATIO.0..=ORDER_RATIO.1).contains(&r), format!("halving ratio {r}"))?;
            ratios.push(r);
        }
    }
    let sys = limit_cycle();
    let mut lpf_worst: f64 = 0.0;
    for x0 in [v(&[1.0, 0.0]), v(&[0.5, 0.0])] {
        for k in [1000, 3141, 5000] {
            lpf_worst = lpf_worst.max(lpf_cocycle_residual(&sys, &x0, k)?);
        }
    }
    ensure(lpf_worst <= LPF_COCYCLE_TOL, format!("LPF cocycle residual {lpf_worst:e}"))?;
    let seg = integrate(&sys, &v(&[0.5, 0.0]), 2.0 * PI, 1e-3, true).map_err(|e| e.to_string())?;
    let fr = cocycle_residual(&seg, &sys, 1000, 4000).map_err(|e| e.to_string())?;
    ensure(fr <= LPF_COCYCLE_TOL, format!("fundamental cocycle residual {fr:e}"))?;
    let (rmin, rmax) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    Ok(format!(
        "max error {worst:.1e} at dt=1e-3, halving ratios {rmin:.2}..{rmax:.2} (dt 0.1→0.05), LPF cocycle residual {lpf_worst:.1e}"
    ))
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Check {
    let dt = 1e-3;
    let t_end = (2.0 * PI / dt).floor() * dt;
    let saddle = builtin_linear(DMatrix::from_diagonal(&v(&[-1.0, 2.0]))).map_err(|e| e.to_string())?;
    let lc = limit_cycle();
    let mut worst: f64 = 0.0;
    for (sys, x0) in [(&saddle, v(&[1.0, 0.2])), (&lc, v(&[0.5, 0.0])), (&lc, v(&[1.0, 0.0]))] {
        let seg = integrate(sys, &x0, t_end, dt, true).map_err(|e| e.to_string())?;
        let c = lpf_cocycle(&seg, sys).map_err(|e| e.to_string())?;
        for k in (0..c.len()).step_by(50).chain([c.len() - 1]) {
            worst = worst.max(additivity_residual(&c, sys, &v(&[1.0]), k).map_err(|e| e.to_string())?);
        }
    }
    ensure(worst <= ADDITIVITY_TOL, format!("additivity residual {worst:e}"))?;

    let empty = Default::default();
    let mut three = std::collections::BTreeMap::new();
    three.insert("dim".to_string(), 3.0);
    let mut systems = Vec::new();
    for name in ["constant_torus", "linear", "limit_cycle", "bowen_type"] {
        systems.push(builtin(name, &empty).map_err(|e| e.to_string())?);
    }
    systems.push(builtin("linear", &three).map_err(|e| e.to_string())?);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    let mut max_ratio: f64 = 0.0;
    while checked < GENERATOR_SAMPLES {
        let sys = &systems[checked % systems.len()];
        let bx = sys.sample_box.as_ref().ok_or("no sample box")?;
        let x = DVector::from_iterator(bx.len(), bx.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)));
        let g = sys.eval(&x);
        if g.norm() < 1e-6 {
            continue;
        }
        let q = normal_frame(&g).map_err(|e| e.to_string())?.basis;
        let w = DVector::from_iterator(q.ncols(), (0..q.ncols()).map(|_| rng.gen_range(-1.0..1.0)));
        if w.norm() < 1e-3 {
            continue;
        }
        let u: DVector<f64> = &q * (&w / w.norm());
        let u = &u / u.norm();
        let d = generator_d(sys, &x, &u).map_err(|e| e.to_string())?;
        let l = sys.jacobian_bound.ok_or("no jacobian bound")?;
        ensure(d.abs() <= l + GENERATOR_SLACK, format!("{}: |D| = {} > L = {l}", sys.name, d.abs()))?;
        if l > 0.0 {
            max_ratio = max_ratio.max(d.abs() / l);
        }
        checked += 1;
    }
    Ok(format!("additivity residual {worst:.1e}, {checked} generator samples with max |D|/L = {max_ratio:.3}"))
}

// 5 -------------------------------------------------------------------------

fn criterion_5() -> Check {
    let start = Instant::now();
    let sys = limit_cycle();
    let seg = integrate_with(
        &sys,
        &v(&[1.0, 0.0]),
        20.0 * PI,
        &IntegrateOptions {
            dt: 1e-3,
            variational: true,
            record_every: 10,
        },
    )
    .map_err(|e| e.to_string())?;
    let c = lpf_cocycle(&seg, &sys).map_err(|e| e.to_string())?;
    let e = sectional_exponents(&c, (PI, 20.0 * PI)).map_err(|e| e.to_string())?;
    for x in [e.liminf_estimate, e.limsup_estimate] {
        ensure((x + 2.0).abs() <= SECTIONAL_TOL, format!("sectional exponent {x}"))?;
    }
    let disk = SectionDisk::new(&sys, &v(&[1.0, 0.0]), 0.2).map_err(|e| e.to_string())?;
    let rm = return_map_contraction(&sys, &disk, &[v(&[0.05]), v(&[-0.05])], &ReturnSettings::default())
        .map_err(|e| e.to_string())?;
    let expect = (-4.0 * PI).exp();
    let rel = (rm.derivative[0][0] - expect).abs() / expect;
    ensure(rel <= RETURN_REL_TOL, format!("return derivative {} vs {expect}", rm.derivative[0][0]))?;
    let report = bin_json(&["classify", "--system", "limit_cycle", "--x0", "0.5,0"])?;
    let verdict = report["verdict"]["verdict"].as_str().unwrap_or_default().to_string();
    ensure(verdict == "flow_periodic_sink_basin", format!("verdict {verdict}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < LIMIT_CYCLE_RUNTIME, format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "sectional exponent in [{:.4}, {:.4}], return derivative rel. error {rel:.1e}, verdict {verdict}, {elapsed:.2?}",
        e.liminf_estimate, e.limsup_estimate
    ))
}

// 6 -------------------------------------------------------------------------

fn criterion_6() -> Check {
    let f = north_south_map(20).map_err(|e| e.to_string())?;
    let cfg = ClassifyConfig {
        horizon: Some(200.0),
        ..Default::default()
    };
    let x0 = v(&[1.0]);
    let fwd = classify_trajectory(&f, &x0, &cfg).map_err(|e| e.to_string())?;
    ensure(fwd.verdict == Verdict::MapSinkBasin, format!("forward verdict {}", fwd.verdict.name()))?;
    let sink = fwd.evidence.point.as_ref().ok_or("no sink point")?[0];
    let exp = fwd.evidence.exponent.ok_or("no exponent")?;
    ensure((exp + 1.0).abs() <= NS_EXPONENT_TOL, format!("sink exponent {exp}"))?;
    let src = classify_source(&f, &x0, &cfg).map_err(|e| e.to_string())?;
    ensure(src.verdict == Verdict::MapSourceOrbit, format!("source verdict {}", src.verdict.name()))?;
    let source = src.evidence.point.as_ref().ok_or("no source point")?[0];
    // Mirror image of the sink under θ ↦ 2π − θ.
    ensure((source - (2.0 * PI - sink)).abs() <= 1e-9, format!("source {source} vs sink {sink}"))?;
    let inv = classify_trajectory(f.inverse().ok_or("no inverse")?, &x0, &cfg).map_err(|e| e.to_string())?;
    ensure(inv.verdict == Verdict::MapSinkBasin && inv.evidence.point == src.evidence.point, "inverse map disagrees")?;
    let cli = bin_json(&["classify", "--system", "north_south_map", "--x0", "1", "--horizon", "200", "--source"])?;
    ensure(cli["verdict"]["verdict"] == "map_source_orbit", format!("cli verdict {}", cli["verdict"]["verdict"]))?;
    Ok(format!("sink {sink:.9} (exponent {exp:.6}), source {source:.9}"))
}

// 7 -------------------------------------------------------------------------

fn criterion_7() -> Check {
    let sys = bowen_type(BowenParams::default()).map_err(|e| e.to_string())?;
    let mut worst_margin = f64::INFINITY;
    let mut count = 0;
    for sigma in [v(&[PI, 0.0]), v(&[3.0 * PI, 0.0])] {
        for r in [1e-2, 1e-3, 1e-4] {
            for a in [0.3, 1.9, 3.5, 5.2] {
                let q = &sigma + v(&[r * f64::cos(a), r * f64::sin(a)]);
                for k in 1..=10 {
                    let t = 0.1 * k as f64;
                    let g = gronwall_check(&sys, &sigma, &q, t, None).map_err(|e| e.to_string())?;
                    ensure(g.lhs <= g.rhs + GRONWALL_SLACK, format!("σ={sigma:?} r={r} t={t}: {} > {}", g.lhs, g.rhs))?;
                    worst_margin = worst_margin.min(g.rhs - g.lhs);
                    count += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lin_worst: f64 = 0.0;
    for _ in 0..20 {
        let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let lin = builtin_linear(a).map_err(|e| e.to_string())?;
        let q = v(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        let g = gronwall_check(&lin, &v(&[0.0, 0.0]), &q, 1.0, None).map_err(|e| e.to_string())?;
        lin_worst = lin_worst.max(g.lhs);
    }
    ensure(lin_worst <= LINEAR_GRONWALL_TOL, format!("linear lhs {lin_worst:e}"))?;
    Ok(format!("{count} saddle checks, min margin {worst_margin:.2e}; linear lhs ≤ {lin_worst:.1e}"))
}

// 8 -------------------------------------------------------------------------

fn criterion_8() -> Check {
    let sys = builtin_linear(DMatrix::from_diagonal(&v(&[-1.0, 1.0]))).map_err(|e| e.to_string())?;
    let o = v(&[0.0, 0.0]);
    let hit = cusp_section_hit(&sys, &o, &v(&[1.0, (-3.0f64).exp()]), 10.0)
        .map_err(|e| e.to_string())?
        .ok_or("no hit")?;
    ensure((hit.time - 1.0).abs() <= CUSP_TIME_TOL, format!("hit time {}", hit.time))?;
    let none = cusp_section_hit(&sys, &o, &v(&[1.0, 0.0]), 50.0).map_err(|e| e.to_string())?;
    ensure(none.is_none(), "stable-axis start hit the section")?;
    Ok(format!("hit time {:.12}, stable axis: no hit within 50", hit.time))
}

// 9 -------------------------------------------------------------------------

/// (λ⁻ product, λ⁺ product) of the two saddles.
fn eigen_products(sys: &SmoothSystem) -> (f64, f64) {
    let mut stable = 1.0;
    let mut unstable = 1.0;
    for sigma in [v(&[PI, 0.0]), v(&[3.0 * PI, 0.0])] {
        for e in eigenvalues(&sys.jacobian(&sigma)) {
            if e.re < 0.0 {
                stable *= -e.re;
            } else {
                unstable *= e.re;
            }
        }
    }
    (stable, unstable)
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let sys = bowen_type(BowenParams::default()).map_err(|e| e.to_string())?;
    let dt = 1e-2;
    let x0 = v(&[0.1, 0.0]);
    let seg = integrate_with(
        &sys,
        &x0,
        2000.0,
        &IntegrateOptions {
            dt,
            variational: true,
            record_every: 10,
        },
    )
    .map_err(|e| e.to_string())?;
    let c = lpf_cocycle(&seg, &sys).map_err(|e| e.to_string())?;
    let e = sectional_exponents(&c, (50.0, 2000.0)).map_err(|e| e.to_string())?;
    let (lo, hi) = (e.liminf_estimate, e.limsup_estimate);
    ensure(lo < -STRADDLE && hi > STRADDLE, format!("series range [{lo}, {hi}] does not straddle ±{STRADDLE}"))?;

    let cfg = ClassifyConfig {
        horizon: Some(2000.0),
        dt,
        ..Default::default()
    };
    let r = classify_trajectory(&sys, &x0, &cfg).map_err(|e| e.to_string())?;
    ensure(r.verdict.name() == "accumulates_saddle", format!("verdict {}", r.verdict.name()))?;
    let acc = &r.evidence.accumulated;
    let saddles: Vec<_> = acc
        .iter()
        .filter(|a| a.analysis.kind == SingularityKind::Saddle && a.analysis.dim_unstable == 1)
        .collect();
    ensure(saddles.len() == 2, format!("{} saddles with dim E^u = 1", saddles.len()))?;

    let (s_on, u_on) = eigen_products(&sys);
    ensure(s_on > u_on, format!("condition on: {s_on} vs {u_on}"))?;
    let sym = bowen_type(BowenParams::symmetric(BowenParams::default().epsilon)).map_err(|e| e.to_string())?;
    let (s_off, u_off) = eigen_products(&sym);
    ensure((s_off - u_off).abs() <= 1e-12, format!("condition off: {s_off} vs {u_off}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < BOWEN_RUNTIME, format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "series over [50, 2000] spans [{lo:.4}, {hi:.4}], verdict accumulates_saddle with entries {:?}, λ⁻ product {s_on:.2} > λ⁺ product {u_on:.2} (symmetric: {s_off:.2} = {u_off:.2}), {elapsed:.2?}",
        saddles.iter().map(|a| a.entries).collect::<Vec<_>>()
    ))
}

// 10 and 11 -----------------------------------------------------------------

fn criterion_10(dir: &Path) -> Check {
    let out = dir.join("grid");
    let o = bin(
        &["classify", "--system", "product_sinus_ns", "--grid", "20x20", "--out", out.to_str().unwrap()],
        Some("8"),
    );
    ensure(o.status.success(), format!("classify exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    let mut rdr = csv::Reader::from_path(out.join("cells.csv")).map_err(|e| e.to_string())?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("no column {name}"));
    let (vc, pc) = (col("verdict")?, col("point_1")?);
    let roots = sinus_roots(1e-3);
    let mut cells = 0;
    let mut basin = 0;
    let mut sinks = BTreeSet::new();
    let mut worst: f64 = 0.0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        cells += 1;
        if &rec[vc] != "map_sink_basin" {
            continue;
        }
        basin += 1;
        let s: f64 = rec[pc].parse().map_err(|_| "bad point")?;
        let t = sinus_t_of_s(s);
        let nearest = roots
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .ok_or("no roots")?;
        ensure(nearest.attracting, format!("sink at t = {t} next to a repelling root"))?;
        worst = worst.max((nearest.t - t).abs());
        sinks.insert(nearest.t.to_bits());
    }
    ensure(worst <= ROOT_TOL, format!("root mismatch {worst:e}"))?;
    ensure(sinks.len() >= MIN_SINKS, format!("{} distinct sinks", sinks.len()))?;
    let fraction = basin as f64 / cells as f64;
    ensure(cells == 400 && fraction >= BASIN_FRACTION, format!("basin fraction {fraction} of {cells}"))?;
    Ok(format!(
        "{} distinct sinks, max root distance {worst:.1e}, {basin}/{cells} cells in a basin",
        sinks.len()
    ))
}

fn replay_identical(run_dir: &Path, scratch: &Path, label: &str) -> Result<usize, String> {
    let manifest = run_dir.join("manifest.json");
    let names: Vec<String> = std::fs::read_dir(run_dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    for threads in ["1", "8"] {
        let out = scratch.join(format!("{label}-replay-{threads}"));
        let o = bin(
            &["replay", manifest.to_str().unwrap(), "--out", out.to_str().unwrap(), "--verify"],
            Some(threads),
        );
        ensure(o.status.success(), format!("{label} replay with {threads} threads exited {:?}", o.status.code()))?;
        for n in &names {
            ensure(read(&run_dir.join(n)) == read(&out.join(n)), format!("{label}: {n} differs with {threads} threads"))?;
        }
    }
    Ok(names.len())
}

fn criterion_11(dir: &Path) -> Check {
    let runs: [(&str, Vec<&str>); 4] = [
        ("lc", vec!["classify", "--system", "limit_cycle", "--x0", "0.5,0"]),
        ("sim", vec!["simulate", "--system", "bowen_type", "--x0", "0.1,0", "--T", "20", "--variational"]),
        ("pliss", vec!["pliss", "--function", "(1+sin(2*t)/7)*log(1+t)", "--c", "0.5", "--eps", "0.1"]),
        ("lpf", vec!["lpf", "--system", "limit_cycle", "--x0", "0.5,0", "--T", "30", "--zeta", "1.8"]),
    ];
    let mut files = 0;
    for (label, args) in &runs {
        let out = dir.join(label);
        let mut a = args.clone();
        a.extend(["--out", out.to_str().unwrap()]);
        let o = bin(&a, None);
        ensure(o.status.success(), format!("{label} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
        files += replay_identical(&out, dir, label)?;
    }
    files += replay_identical(&dir.join("grid"), dir, "grid")?;
    Ok(format!("{} manifests, {files} files bit-identical under HYPTIMES_THREADS=1 and 8", runs.len() + 1))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(u32, Box<dyn Fn() -> Check>)> = vec![
        (1, Box::new(criterion_1)),
        (2, Box::new(criterion_2)),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(criterion_6)),
        (7, Box::new(criterion_7)),
        (8, Box::new(criterion_8)),
        (9, Box::new(criterion_9)),
        (10, Box::new(|| criterion_10(dir.path()))),
        (11, Box::new(|| criterion_11(dir.path()))),
    ];
    let mut failed = 0;
    for (n, check) in &criteria {
        match check() {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
