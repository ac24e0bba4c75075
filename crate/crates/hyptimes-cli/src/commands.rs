//! One function per subcommand; each returns report fields and a CSV table.

use std::collections::BTreeMap;

use hyptimes::classify::{
    classify_grid, classify_source, classify_trajectory, grid_points, return_map_contraction, section_crossings,
    ClassificationReport, ClassifyConfig, ReturnSettings, SectionDisk, Verdict,
};
use hyptimes::expr::{parse, Scope};
use hyptimes::flow::{integrate_with, iterate, IntegrateOptions, SmoothSystem, SystemKind, TrajectorySegment};
use hyptimes::hyptimes::{block_exponent_series, block_exponent_series_window, detect_lpf_reverse_hyperbolic_times, Direction};
use hyptimes::linalg::op_norm;
use hyptimes::lpf::{full_derivative_exponents, inverse_sectional_exponents, lpf_cocycle, sectional_exponents};
use hyptimes::pliss::{flow_pliss_set, pliss_times, reverse_pliss_times};
use nalgebra::DVector;
use serde_json::{json, Value};

use crate::args::{
    ClassifyArgs, ExponentsArgs, Floats, Invocation, LpfArgs, PlissArgs, SectionArgs, SimulateArgs,
};
use crate::output::{fmt_f64, CsvTable, Outputs, SystemSpec};
use crate::CliError;

pub fn run(inv: &Invocation, spec: Option<&SystemSpec>, threads: Option<usize>) -> Result<Outputs, CliError> {
    let system = || -> Result<SmoothSystem, CliError> {
        spec.ok_or_else(|| CliError::Input("no system given".into()))?.build()
    };
    match inv {
        Invocation::Simulate(a) => simulate(&system()?, a),
        Invocation::Exponents(a) => exponents(&system()?, a),
        Invocation::Lpf(a) => lpf(&system()?, a),
        Invocation::Pliss(a) => pliss(a),
        Invocation::Classify(a) => classify(&system()?, a, threads),
        Invocation::Section(a) => section(&system()?, a),
    }
}

fn state(sys: &SmoothSystem, x: &Floats) -> Result<DVector<f64>, CliError> {
    if x.0.len() != sys.dim() {
        return Err(CliError::Input(format!(
            "x0 has {} coordinates, system {} has dimension {}",
            x.0.len(),
            sys.name,
            sys.dim()
        )));
    }
    Ok(DVector::from_column_slice(&x.0))
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Input(format!("--{name} must be positive, got {v}")))
    }
}

fn iterations(t: f64) -> Result<usize, CliError> {
    let n = positive("T", t)?.round();
    if n < 1.0 {
        return Err(CliError::Input("--T must be at least one iteration for maps".into()));
    }
    Ok(n as usize)
}

fn auto_stride(t_end: f64, dt: f64, every: usize) -> usize {
    if every > 0 {
        every
    } else {
        ((t_end / dt) / 20000.0).ceil().max(1.0) as usize
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(CliError::io)
}

fn trajectory(sys: &SmoothSystem, x0: &DVector<f64>, t: f64, dt: f64, var: bool, every: usize) -> Result<TrajectorySegment, CliError> {
    Ok(match sys.kind {
        SystemKind::Map => iterate(sys, x0, iterations(t)?, var)?,
        SystemKind::VectorField => integrate_with(
            sys,
            x0,
            positive("T", t)?,
            &IntegrateOptions {
                dt: positive("dt", dt)?,
                variational: var,
                record_every: every.max(1),
            },
        )?,
    })
}

fn simulate(sys: &SmoothSystem, a: &SimulateArgs) -> Result<Outputs, CliError> {
    let x0 = state(sys, &a.x0)?;
    if a.record_every == 0 {
        return Err(CliError::Input("--record-every must be at least 1".into()));
    }
    let seg = trajectory(sys, &x0, a.t_end, a.dt, a.variational, a.record_every)?;
    let d = sys.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    if a.variational {
        for i in 1..=d {
            header.extend((1..=d).map(|j| format!("z_{i}{j}")));
        }
    }
    let mut table = CsvTable::new("trajectory.csv", header);
    for k in 0..seg.len() {
        let mut row = vec![fmt_f64(seg.times[k])];
        row.extend(seg.states[k].iter().map(|v| fmt_f64(*v)));
        if a.variational {
            let z = seg.fundamental(k)?;
            for i in 0..d {
                row.extend((0..d).map(|j| fmt_f64(z[(i, j)])));
            }
        }
        table.rows.push(row);
    }
    Ok(Outputs {
        body: BTreeMap::new(),
        csv: Some(table),
        inconclusive: false,
    })
}

fn window_of(w: &Option<Floats>, default: (f64, f64)) -> Result<(f64, f64), CliError> {
    match w {
        None => Ok(default),
        Some(Floats(v)) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(CliError::Input("--window takes two values: start,end".into())),
    }
}

fn exponents(sys: &SmoothSystem, a: &ExponentsArgs) -> Result<Outputs, CliError> {
    let x0 = state(sys, &a.x0)?;
    match sys.kind {
        SystemKind::Map => {
            let orbit = iterate(sys, &x0, iterations(a.t_end)?, true)?;
            let dir = if a.inverse { Direction::Inverse } else { Direction::Forward };
            let series = match &a.window {
                None => block_exponent_series(&orbit, a.k, dir)?,
                Some(_) => {
                    let (n0, n1) = window_of(&a.window, (0.0, 0.0))?;
                    block_exponent_series_window(&orbit, a.k, dir, n0 as usize, n1 as usize)?
                }
            };
            let mut table = CsvTable::new("series.csv", vec!["n".into(), "average".into()]);
            for (i, v) in series.partial_averages.iter().enumerate() {
                table.rows.push(vec![(i + 1).to_string(), fmt_f64(*v)]);
            }
            let mut body = BTreeMap::new();
            body.insert(
                "evidence".into(),
                json!({
                    "liminf_estimate": series.liminf_estimate,
                    "limsup_estimate": series.limsup_estimate,
                    "window": series.window,
                    "k": series.k,
                    "direction": series.direction,
                    "caveat": "finite-horizon block averages; not asymptotic limits",
                }),
            );
            Ok(Outputs {
                body,
                csv: Some(table),
                inconclusive: false,
            })
        }
        SystemKind::VectorField => {
            let t = positive("T", a.t_end)?;
            let every = auto_stride(t, a.dt, a.record_every);
            let seg = trajectory(sys, &x0, t, a.dt, true, every)?;
            let win = window_of(&a.window, ((t / 4.0).max(1.0), t))?;
            let e = full_derivative_exponents(&seg, win)?;
            let mut table = CsvTable::new("series.csv", vec!["t".into(), "log_norm_over_t".into()]);
            for (t, v) in &e.series {
                table.rows.push(vec![fmt_f64(*t), fmt_f64(*v)]);
            }
            let mut body = BTreeMap::new();
            body.insert(
                "evidence".into(),
                json!({
                    "liminf_estimate": e.liminf_estimate,
                    "limsup_estimate": e.limsup_estimate,
                    "window": e.window,
                    "caveat": e.caveat,
                }),
            );
            Ok(Outputs {
                body,
                csv: Some(table),
                inconclusive: false,
            })
        }
    }
}

fn lpf(sys: &SmoothSystem, a: &LpfArgs) -> Result<Outputs, CliError> {
    if sys.kind != SystemKind::VectorField {
        return Err(CliError::Input("lpf needs a vector field".into()));
    }
    let x0 = state(sys, &a.x0)?;
    let t = positive("T", a.t_end)?;
    let every = auto_stride(t, a.dt, a.record_every);
    let seg = trajectory(sys, &x0, t, a.dt, true, every)?;
    let c = lpf_cocycle(&seg, sys)?;
    let win = window_of(&a.window, ((t / 4.0).max(1.0), t))?;
    let e = sectional_exponents(&c, win)?;
    let ie = inverse_sectional_exponents(&c, win)?;
    let mut table = CsvTable::new(
        "series.csv",
        vec!["t".into(), "log_norm_over_t".into(), "log_inverse_norm_over_t".into()],
    );
    for (p, q) in e.series.iter().zip(&ie.series) {
        table.rows.push(vec![fmt_f64(p.0), fmt_f64(p.1), fmt_f64(q.1)]);
    }
    let mut evidence = json!({
        "sectional": { "liminf_estimate": e.liminf_estimate, "limsup_estimate": e.limsup_estimate },
        "inverse_sectional": { "liminf_estimate": ie.liminf_estimate, "limsup_estimate": ie.limsup_estimate },
        "window": e.window,
        "caveat": e.caveat,
        "resets": c.resets,
    });
    if let Some(z) = a.zeta {
        let l = sys.jacobian_bound.unwrap_or_else(|| {
            1.1 * seg.states.iter().map(|x| op_norm(&sys.jacobian(x))).fold(0.0, f64::max)
        });
        let rec = detect_lpf_reverse_hyperbolic_times(&c, positive("zeta", z)?, l)?;
        evidence["reverse_hyperbolic_times"] = to_value(&rec)?;
    }
    let mut body = BTreeMap::new();
    body.insert("evidence".into(), evidence);
    body.insert(
        "series".into(),
        json!({ "file": "series.csv", "columns": ["t", "log_norm_over_t", "log_inverse_norm_over_t"] }),
    );
    Ok(Outputs {
        body,
        csv: Some(table),
        inconclusive: false,
    })
}

fn need(name: &str, v: Option<f64>) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Input(format!("--{name} is required in this mode")))
}

fn pliss(a: &PlissArgs) -> Result<Outputs, CliError> {
    let mut body = BTreeMap::new();
    if let Some(Floats(seq)) = &a.sequence {
        let (c1, c2) = (need("c1", a.c1)?, need("c2", a.c2)?);
        let h = a.h.unwrap_or_else(|| seq.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let r = if a.reverse {
            reverse_pliss_times(seq, c1, c2, h)?
        } else {
            pliss_times(seq, c1, c2, h)?
        };
        let mut table = CsvTable::new("pliss.csv", vec!["n".into(), "a".into(), "selected".into()]);
        for (i, v) in seq.iter().enumerate() {
            let sel = r.indices.binary_search(&(i + 1)).is_ok();
            table.rows.push(vec![(i + 1).to_string(), fmt_f64(*v), u8::from(sel).to_string()]);
        }
        body.insert("pliss".into(), to_value(&r)?);
        return Ok(Outputs {
            body,
            csv: Some(table),
            inconclusive: false,
        });
    }
    let src = a
        .function
        .as_ref()
        .ok_or_else(|| CliError::Input("give --sequence or --function".into()))?;
    let (c, eps) = (need("c", a.c)?, need("eps", a.eps)?);
    let t_end = positive("T", a.t_end)?;
    let step = positive("step", a.step)?;
    let params = BTreeMap::new();
    let expr = parse(src, &Scope { dimension: 1, params: &params, aliases: &[("t", 0)] })?;
    let n = (t_end / step).round() as usize;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    let h: Vec<f64> = times.iter().map(|t| expr.eval(&[*t])).collect();
    let r = flow_pliss_set(&times, &h, c, eps, a.lower_slope)?;
    let mut table = CsvTable::new("pliss.csv", vec!["t".into(), "h".into(), "selected".into()]);
    let mut sel = vec![false; times.len()];
    for &k in &r.indices {
        sel[k] = true;
    }
    for k in 0..times.len() {
        table.rows.push(vec![fmt_f64(times[k]), fmt_f64(h[k]), u8::from(sel[k]).to_string()]);
    }
    let theta = r.lower_slope.map(|al| eps / (c + eps - al));
    let mut v = to_value(&r)?;
    v["measure"] = json!(r.count_or_measure);
    v["theta_bound"] = json!(theta);
    v["indices"] = json!(r.indices.len());
    body.insert("pliss".into(), v);
    Ok(Outputs {
        body,
        csv: Some(table),
        inconclusive: false,
    })
}

fn parse_grid(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(['x', 'X'])
        .map(|p| match p.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Input(format!("bad --grid '{s}', expected e.g. 20x20"))),
        })
        .collect()
}

fn parse_box(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Input(format!("bad --box '{s}', expected a:b,c:d")))?;
            let lo = a.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad bound '{a}'")))?;
            let hi = b.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad bound '{b}'")))?;
            if !(lo < hi) {
                return Err(CliError::Input(format!("empty interval {lo}:{hi}")));
            }
            Ok((lo, hi))
        })
        .collect()
}

fn classify_config(a: &ClassifyArgs) -> Result<ClassifyConfig, CliError> {
    Ok(ClassifyConfig {
        horizon: a.horizon.map(|h| positive("horizon", h)).transpose()?,
        dt: positive("dt", a.dt)?,
        zeta: a.zeta.map(|z| positive("zeta", z)).transpose()?,
        exponent_threshold: a.threshold,
        accumulation_radius: positive("accumulation-radius", a.accumulation_radius)?,
        max_return_time: positive("max-return-time", a.max_return_time)?,
        record_every: a.record_every,
    })
}

fn verdict_row(idx: usize, r: &ClassificationReport, d: usize) -> Vec<String> {
    let mut row = vec![idx.to_string()];
    row.extend(r.x0.iter().map(|v| fmt_f64(*v)));
    row.push(r.verdict.name().into());
    match &r.evidence.point {
        Some(p) => row.extend(p.iter().map(|v| fmt_f64(*v))),
        None => row.extend(std::iter::repeat(String::new()).take(d)),
    }
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    row.push(opt(r.evidence.period));
    row.push(opt(r.evidence.exponent));
    row
}

fn classify(sys: &SmoothSystem, a: &ClassifyArgs, threads: Option<usize>) -> Result<Outputs, CliError> {
    let cfg = classify_config(a)?;
    let d = sys.dim();
    let mut header = vec!["cell".to_string()];
    header.extend((1..=d).map(|i| format!("x0_{i}")));
    header.push("verdict".into());
    header.extend((1..=d).map(|i| format!("point_{i}")));
    header.push("period".into());
    header.push("exponent".into());
    let mut table = CsvTable::new("cells.csv", header);
    let mut body = BTreeMap::new();
    let one = |x: &DVector<f64>| -> Result<ClassificationReport, CliError> {
        Ok(if a.source {
            classify_source(sys, x, &cfg)?
        } else {
            classify_trajectory(sys, x, &cfg)?
        })
    };
    let inconclusive;
    if let Some(g) = &a.grid {
        let counts = parse_grid(g)?;
        let bx = match &a.bounds {
            Some(s) => parse_box(s)?,
            None => sys
                .sample_box
                .clone()
                .ok_or_else(|| CliError::Input(format!("{} has no default box; pass --box", sys.name)))?,
        };
        if counts.len() != d || bx.len() != d {
            return Err(CliError::Input(format!("--grid and --box need {d} entries")));
        }
        let pts = grid_points(&bx, &counts)?;
        let reports = if a.source {
            pts.iter()
                .map(|x| one(x))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            classify_grid(sys, &pts, &cfg, threads)?
        };
        let mut counts_by: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in reports.iter().enumerate() {
            *counts_by.entry(r.verdict.name()).or_default() += 1;
            table.rows.push(verdict_row(i, r, d));
        }
        let basin = reports.iter().filter(|r| r.verdict.is_basin()).count();
        inconclusive = reports.iter().any(|r| r.verdict == Verdict::Inconclusive);
        body.insert(
            "evidence".into(),
            json!({
                "cells": reports.len(),
                "counts": counts_by,
                "basin_fraction": basin as f64 / reports.len() as f64,
                "box": bx,
                "grid": counts,
            }),
        );
        body.insert("verdict".into(), to_value(&reports)?);
    } else {
        let x0 = state(sys, a.x0.as_ref().expect("clap requires x0 without --grid"))?;
        let r = one(&x0)?;
        table.rows.push(verdict_row(0, &r, d));
        inconclusive = r.verdict == Verdict::Inconclusive;
        body.insert("verdict".into(), to_value(&r)?);
    }
    Ok(Outputs {
        body,
        csv: Some(table),
        inconclusive,
    })
}

fn section(sys: &SmoothSystem, a: &SectionArgs) -> Result<Outputs, CliError> {
    if sys.kind != SystemKind::VectorField {
        return Err(CliError::Input("section needs a vector field".into()));
    }
    let x0 = state(sys, &a.x0)?;
    let center = match &a.center {
        Some(c) => state(sys, c)?,
        None => x0.clone(),
    };
    let radius = positive("radius", a.radius)?;
    let disk = SectionDisk::new(sys, &center, radius)?;
    let seg = trajectory(sys, &x0, a.t_end, a.dt, false, 1)?;
    let crossings = section_crossings(sys, &seg, &disk);
    let m = sys.dim() - 1;
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=m).map(|i| format!("u_{i}")));
    let mut table = CsvTable::new("crossings.csv", header);
    for (k, c) in crossings.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt_f64(c.time)];
        row.extend(c.coords.iter().map(|v| fmt_f64(*v)));
        table.rows.push(row);
    }
    let off = a.probe.unwrap_or(0.5 * radius);
    let probes: Vec<DVector<f64>> = (0..m)
        .flat_map(|j| {
            [off, -off].map(|s| {
                let mut e = DVector::zeros(m);
                e[j] = s;
                e
            })
        })
        .collect();
    let rs = ReturnSettings {
        dt: positive("dt", a.dt)?,
        max_return_time: positive("max-return-time", a.max_return_time)?,
    };
    let mut evidence = json!({
        "crossings": crossings.len(),
        "center": center.as_slice(),
        "radius": radius,
        "normal": disk.normal().as_slice(),
    });
    match return_map_contraction(sys, &disk, &probes, &rs) {
        Ok(rm) => evidence["return_map"] = to_value(&rm)?,
        Err(e) if !e.is_input() => evidence["return_map_error"] = json!(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    let mut body = BTreeMap::new();
    body.insert("evidence".into(), evidence);
    Ok(Outputs {
        body,
        csv: Some(table),
        inconclusive: false,
    })
}
