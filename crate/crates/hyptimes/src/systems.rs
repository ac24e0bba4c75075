//! Built-in example systems with known ground truth and user systems from
//! TOML/JSON configuration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{parse, Expr, Scope};
use crate::flow::{product_map, time_map_with_inverse, SmoothSystem, SystemKind};
use crate::geometry::ChartTopology;
use crate::linalg::op_norm;

/// Names accepted by [`builtin`].
pub const CATALOG: [&str; 8] = [
    "constant_torus",
    "linear",
    "limit_cycle",
    "north_south_circle",
    "north_south_map",
    "sinus_sinks_map",
    "product_sinus_ns",
    "bowen_type",
];

pub const DEFAULT_SUBSTEPS: usize = 20;
/// Roots of φ′ are declared down to |t| = this value.
pub const SINUS_ROOT_CUTOFF: f64 = 1e-3;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// Maximum of ‖DG‖ over an n-per-axis grid of the box, times 1.1.
pub fn grid_jacobian_bound(sys: &SmoothSystem, bx: &[(f64, f64)], n: usize) -> f64 {
    let d = bx.len();
    let total = n.pow(d as u32);
    let mut best: f64 = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        let mut x = DVector::zeros(d);
        for (i, (lo, hi)) in bx.iter().enumerate() {
            let k = rem % n;
            rem /= n;
            x[i] = lo + (hi - lo) * k as f64 / (n - 1) as f64;
        }
        best = best.max(op_norm(&sys.jacobian(&x)));
    }
    1.1 * best
}

/// One-dimensional map on ℝ from a scalar function and its derivative.
pub fn scalar_map(name: &str, f: fn(f64) -> f64, df: fn(f64) -> f64) -> SmoothSystem {
    SmoothSystem::new(
        name,
        SystemKind::Map,
        ChartTopology::euclidean(1),
        Arc::new(move |x: &DVector<f64>| DVector::from_element(1, f(x[0]))),
    )
    .with_jacobian(Arc::new(move |x: &DVector<f64>| DMatrix::from_element(1, 1, df(x[0]))))
}

/// G = e₁ on the d-torus of the given period.
pub fn constant_torus(d: usize, period: f64) -> Result<SmoothSystem> {
    if d < 1 {
        return Err(Error::Input("dimension must be at least 1".into()));
    }
    let topo = ChartTopology::torus(d, period)?;
    let sys = SmoothSystem::new(
        "constant_torus",
        SystemKind::VectorField,
        topo,
        Arc::new(move |_x: &DVector<f64>| {
            let mut g = DVector::zeros(d);
            g[0] = 1.0;
            g
        }),
    )
    .with_jacobian(Arc::new(move |_x: &DVector<f64>| DMatrix::zeros(d, d)))
    .with_jacobian_bound(0.0)
    .with_sample_box(vec![(0.0, period); d]);
    Ok(sys)
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Input(format!("matrix must be square and non-empty, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// G(x) = A·x on ℝ^d.
pub fn builtin_linear(a: DMatrix<f64>) -> Result<SmoothSystem> {
    check_square(&a)?;
    let d = a.nrows();
    let a1 = a.clone();
    let a2 = a.clone();
    Ok(SmoothSystem::new(
        "linear",
        SystemKind::VectorField,
        ChartTopology::euclidean(d),
        Arc::new(move |x: &DVector<f64>| &a1 * x),
    )
    .with_jacobian(Arc::new(move |_x: &DVector<f64>| a2.clone()))
    .with_equilibria(vec![DVector::zeros(d)])
    .with_jacobian_bound(op_norm(&a))
    .with_sample_box(vec![(-1.0, 1.0); d]))
}

/// x ↦ A·x on ℝ^d, with the inverse map attached when A is invertible.
pub fn linear_map(a: DMatrix<f64>) -> Result<SmoothSystem> {
    check_square(&a)?;
    let d = a.nrows();
    let build = |m: DMatrix<f64>, name: &str| {
        let m1 = m.clone();
        SmoothSystem::new(
            name,
            SystemKind::Map,
            ChartTopology::euclidean(d),
            Arc::new(move |x: &DVector<f64>| &m1 * x),
        )
        .with_jacobian(Arc::new(move |_x: &DVector<f64>| m.clone()))
        .with_equilibria(vec![DVector::zeros(d)])
    };
    let mut sys = build(a.clone(), "linear_map");
    if let Some(inv) = a.try_inverse() {
        sys = sys.with_inverse(build(inv, "linear_map_inverse"));
    }
    Ok(sys)
}

/// Planar rotation by `angle` composed with r ↦ factor·r.
pub fn rotation_contraction(angle: f64, factor: f64) -> Result<SmoothSystem> {
    let (s, c) = angle.sin_cos();
    let mut m = linear_map(DMatrix::from_row_slice(2, 2, &[factor * c, -factor * s, factor * s, factor * c]))?;
    m.name = "rotation_contraction".into();
    Ok(m)
}

/// ṙ = r(1 − r²), θ̇ = 1 written in Cartesian coordinates.
pub fn limit_cycle() -> SmoothSystem {
    let sys = SmoothSystem::new(
        "limit_cycle",
        SystemKind::VectorField,
        ChartTopology::euclidean(2),
        Arc::new(|p: &DVector<f64>| {
            let (x, y) = (p[0], p[1]);
            let r2 = x * x + y * y;
            v(&[x - y - x * r2, x + y - y * r2])
        }),
    )
    .with_jacobian(Arc::new(|p: &DVector<f64>| {
        let (x, y) = (p[0], p[1]);
        DMatrix::from_row_slice(
            2,
            2,
            &[1.0 - 3.0 * x * x - y * y, -1.0 - 2.0 * x * y, 1.0 - 2.0 * x * y, 1.0 - x * x - 3.0 * y * y],
        )
    }))
    .with_equilibria(vec![DVector::zeros(2)]);
    let bx = vec![(-2.0, 2.0), (-2.0, 2.0)];
    let l = grid_jacobian_bound(&sys, &bx, 201);
    sys.with_jacobian_bound(l).with_sample_box(bx)
}

/// θ̇ = cos θ on the circle of length 2π: sink at π/2, source at 3π/2.
pub fn north_south_circle() -> SmoothSystem {
    SmoothSystem::new(
        "north_south_circle",
        SystemKind::VectorField,
        ChartTopology::torus(1, 2.0 * PI).expect("valid period"),
        Arc::new(|x: &DVector<f64>| DVector::from_element(1, x[0].cos())),
    )
    .with_jacobian(Arc::new(|x: &DVector<f64>| DMatrix::from_element(1, 1, -x[0].sin())))
    .with_equilibria(vec![v(&[0.5 * PI]), v(&[1.5 * PI])])
    .with_jacobian_bound(1.0)
    .with_sample_box(vec![(0.0, 2.0 * PI)])
}

/// Time-1 map of [`north_south_circle`] with its inverse.
pub fn north_south_map(substeps: usize) -> Result<SmoothSystem> {
    let mut m = time_map_with_inverse(&north_south_circle(), 1.0, substeps)?;
    m.name = "north_south_map".into();
    Ok(m)
}

/// φ′(t) for φ(t) = t⁴ sin(1/t), with φ′(0) = 0.
pub fn sinus_phi_prime(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let (s, c) = (1.0 / t).sin_cos();
    4.0 * t * t * t * s - t * t * c
}

/// φ″(t) away from 0 (set to 0 at t = 0, where φ″ has no limit).
pub fn sinus_phi_second(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let (s, c) = (1.0 / t).sin_cos();
    12.0 * t * t * s - 6.0 * t * c - s
}

/// Chart coordinate s ∈ [0, 2/π) ↔ t = s − 1/π ∈ [−1/π, 1/π).
pub fn sinus_t_of_s(s: f64) -> f64 {
    s.rem_euclid(2.0 / PI) - 1.0 / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusRoot {
    pub t: f64,
    pub attracting: bool,
}

/// Nonzero roots of φ′ with |t| ≥ cutoff, sorted by t. Roots are located on
/// u = 1/|t| as zeros of 4 sin(u)/u − cos(u), bracketed on a π/16 grid and
/// bisected to machine precision.
pub fn sinus_roots(cutoff: f64) -> Vec<SinusRoot> {
    let g = |u: f64| 4.0 * u.sin() / u - u.cos();
    let u_max = 1.0 / cutoff;
    let h = PI / 16.0;
    let mut roots = Vec::new();
    let mut a = PI;
    let mut ga = g(a);
    while a < u_max {
        let b = (a + h).min(u_max);
        let gb = g(b);
        if ga == 0.0 || ga * gb < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g(lo) * g(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t = 1.0 / (0.5 * (lo + hi));
            for t in [t, -t] {
                roots.push(SinusRoot {
                    t,
                    attracting: sinus_phi_second(t) < 0.0,
                });
            }
        }
        a = b;
        ga = gb;
    }
    roots.sort_by(|x, y| x.t.total_cmp(&y.t));
    roots
}

fn sinus_field() -> SmoothSystem {
    let roots = sinus_roots(SINUS_ROOT_CUTOFF);
    let mut eq: Vec<DVector<f64>> = roots.iter().map(|r| v(&[r.t + 1.0 / PI])).collect();
    eq.push(v(&[1.0 / PI]));
    SmoothSystem::new(
        "sinus_gradient",
        SystemKind::VectorField,
        ChartTopology::torus(1, 2.0 / PI).expect("valid period"),
        Arc::new(|x: &DVector<f64>| DVector::from_element(1, sinus_phi_prime(sinus_t_of_s(x[0])))),
    )
    .with_jacobian(Arc::new(|x: &DVector<f64>| {
        DMatrix::from_element(1, 1, sinus_phi_second(sinus_t_of_s(x[0])))
    }))
    .with_equilibria(eq)
    .with_sample_box(vec![(0.0, 2.0 / PI)])
}

/// Time-1 map of the gradient ascent ẋ = φ′ on the circle [−1/π, 1/π] with
/// endpoints identified; sinks are roots of φ′ with φ″ < 0.
pub fn sinus_sinks_map(substeps: usize) -> Result<SmoothSystem> {
    let mut m = time_map_with_inverse(&sinus_field(), 1.0, substeps)?;
    m.name = "sinus_sinks_map".into();
    Ok(m)
}

/// sinus_sinks_map × north_south_map on the 2-torus chart.
pub fn product_sinus_ns(substeps: usize) -> Result<SmoothSystem> {
    let mut m = product_map(&sinus_sinks_map(substeps)?, &north_south_map(substeps)?)?;
    m.name = "product_sinus_ns".into();
    Ok(m)
}

/// Parameters of the Bowen-type flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowenParams {
    pub epsilon: f64,
    /// Stable eigenvalue of the saddle (π, 0) is −(1 + 2·kappa_stable).
    pub kappa_stable: f64,
    /// Unstable eigenvalue of the saddle (3π, 0) is 1 + 2·kappa_unstable.
    pub kappa_unstable: f64,
    pub bump_radius: f64,
}

impl Default for BowenParams {
    fn default() -> Self {
        BowenParams {
            epsilon: 0.02,
            kappa_stable: 0.3,
            kappa_unstable: 0.25,
            bump_radius: 1.0,
        }
    }
}

impl BowenParams {
    /// The symmetric pendulum-plus-dissipation field.
    pub fn symmetric(epsilon: f64) -> Self {
        BowenParams {
            epsilon,
            kappa_stable: 0.0,
            kappa_unstable: 0.0,
            ..Default::default()
        }
    }
}

/// Pendulum Hamiltonian field on the cylinder x ∈ [0, 4π), plus
/// ε(1 − H)∇H, plus (κ_s χ_π + κ_u χ_3π)·B·J∇A, where
/// H = y²/2 − cos x, A = y − 2cos(x/2), B = y + 2cos(x/2) and
/// χ_c = (1 − ρ²/r₀²)² is a bump around (c, 0). The separatrix branches A = 0
/// and B = 0 stay invariant. Near (π, 0) the term rescales the stable
/// direction and near (3π, 0) the unstable one, so the saddles have
/// eigenvalues {−(1 + 2κ_s), 1} and {−1, 1 + 2κ_u}; the cycle through them
/// attracts when κ_s > κ_u.
pub fn bowen_type(p: BowenParams) -> Result<SmoothSystem> {
    if !(p.epsilon >= 0.0
        && p.kappa_stable >= 0.0
        && p.kappa_unstable >= 0.0
        && p.bump_radius > 0.0
        && p.bump_radius < PI)
    {
        return Err(Error::Input(format!(
            "need epsilon, kappa_stable, kappa_unstable >= 0 and 0 < bump_radius < pi, got {p:?}"
        )));
    }
    let period = 4.0 * PI;
    let r0 = p.bump_radius;
    let bump = move |x: f64, y: f64, c: f64| -> (f64, f64, f64) {
        let mut dx = x - c;
        dx -= period * (dx / period).round();
        let rho2 = dx * dx + y * y;
        if rho2 >= r0 * r0 {
            return (0.0, 0.0, 0.0);
        }
        let w = 1.0 - rho2 / (r0 * r0);
        let k = -4.0 * w / (r0 * r0);
        (w * w, k * dx, k * y)
    };
    // κ(x, y) = κ_s χ_π + κ_u χ_3π and its gradient.
    let weight = move |x: f64, y: f64| -> (f64, f64, f64) {
        let (a, ax, ay) = bump(x, y, PI);
        let (b, bx, by) = bump(x, y, 3.0 * PI);
        let (ks, ku) = (p.kappa_stable, p.kappa_unstable);
        (ks * a + ku * b, ks * ax + ku * bx, ks * ay + ku * by)
    };
    let eval = move |q: &DVector<f64>| -> DVector<f64> {
        let (x, y) = (q[0], q[1]);
        let (sx, cx) = x.sin_cos();
        let (sh, ch) = (0.5 * x).sin_cos();
        let h = 0.5 * y * y - cx;
        let diss = p.epsilon * (1.0 - h);
        let (k, _, _) = weight(x, y);
        let kb = k * (y + 2.0 * ch);
        v(&[y + diss * sx + kb, -sx + diss * y - kb * sh])
    };
    let jac = move |q: &DVector<f64>| -> DMatrix<f64> {
        let (x, y) = (q[0], q[1]);
        let (sx, cx) = x.sin_cos();
        let (sh, ch) = (0.5 * x).sin_cos();
        let h = 0.5 * y * y - cx;
        let e = p.epsilon;
        let mut m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -cx, 0.0]);
        // ε[(1 − H)·Hess H − ∇H ∇Hᵀ]
        m[(0, 0)] += e * ((1.0 - h) * cx - sx * sx);
        m[(0, 1)] += e * (-sx * y);
        m[(1, 0)] += e * (-y * sx);
        m[(1, 1)] += e * ((1.0 - h) - y * y);
        let (k, kx, ky) = weight(x, y);
        if k > 0.0 {
            let b = y + 2.0 * ch;
            let (bx, by) = (-sh, 1.0);
            let gx = b * kx + k * bx;
            let gy = b * ky + k * by;
            m[(0, 0)] += gx;
            m[(0, 1)] += gy;
            m[(1, 0)] += -sh * gx - k * b * 0.5 * ch;
            m[(1, 1)] += -sh * gy;
        }
        m
    };
    let topo = ChartTopology::new(&[Some(period), None])?;
    let sys = SmoothSystem::new("bowen_type", SystemKind::VectorField, topo, Arc::new(eval))
        .with_jacobian(Arc::new(jac))
        .with_equilibria(vec![v(&[PI, 0.0]), v(&[3.0 * PI, 0.0]), v(&[0.0, 0.0]), v(&[2.0 * PI, 0.0])]);
    let bx = vec![(0.0, period), (-3.0, 3.0)];
    let l = grid_jacobian_bound(&sys, &bx, 201);
    Ok(sys.with_jacobian_bound(l).with_sample_box(bx))
}

fn take(params: &BTreeMap<String, f64>, used: &mut Vec<String>, key: &str, default: f64) -> f64 {
    used.push(key.to_string());
    params.get(key).copied().unwrap_or(default)
}

fn take_count(params: &BTreeMap<String, f64>, used: &mut Vec<String>, key: &str, default: usize) -> Result<usize> {
    let v = take(params, used, key, default as f64);
    if !(v >= 1.0 && v.fract() == 0.0 && v <= 1e6) {
        return Err(Error::Input(format!("parameter {key} must be a positive integer, got {v}")));
    }
    Ok(v as usize)
}

/// Instantiates a catalog system. Unknown parameter names are rejected.
pub fn builtin(name: &str, params: &BTreeMap<String, f64>) -> Result<SmoothSystem> {
    let mut used = Vec::new();
    let sys = match name {
        "constant_torus" => {
            let d = take_count(params, &mut used, "dim", 2)?;
            let period = take(params, &mut used, "period", 1.0);
            constant_torus(d, period)?
        }
        "linear" => {
            let d = take_count(params, &mut used, "dim", 2)?;
            let mut a = if d == 2 {
                DMatrix::from_diagonal(&v(&[-1.0, 2.0]))
            } else {
                -DMatrix::<f64>::identity(d, d)
            };
            for i in 0..d {
                for j in 0..d {
                    let key = format!("a{}_{}", i + 1, j + 1);
                    if let Some(x) = params.get(&key) {
                        a[(i, j)] = *x;
                    }
                    used.push(key);
                }
            }
            builtin_linear(a)?
        }
        "limit_cycle" => limit_cycle(),
        "north_south_circle" => north_south_circle(),
        "north_south_map" => north_south_map(take_count(params, &mut used, "substeps", DEFAULT_SUBSTEPS)?)?,
        "sinus_sinks_map" => sinus_sinks_map(take_count(params, &mut used, "substeps", DEFAULT_SUBSTEPS)?)?,
        "product_sinus_ns" => product_sinus_ns(take_count(params, &mut used, "substeps", DEFAULT_SUBSTEPS)?)?,
        "bowen_type" => {
            let d = BowenParams::default();
            bowen_type(BowenParams {
                epsilon: take(params, &mut used, "epsilon", d.epsilon),
                kappa_stable: take(params, &mut used, "kappa_stable", d.kappa_stable),
                kappa_unstable: take(params, &mut used, "kappa_unstable", d.kappa_unstable),
                bump_radius: take(params, &mut used, "bump_radius", d.bump_radius),
            })?
        }
        "rotation_contraction" => rotation_contraction(
            take(params, &mut used, "angle", 0.3),
            take(params, &mut used, "factor", 0.5),
        )?,
        other => return Err(Error::UnknownSystem(other.to_string())),
    };
    if let Some(k) = params.keys().find(|k| !used.contains(k)) {
        return Err(Error::Input(format!("system {name} has no parameter {k}")));
    }
    Ok(sys)
}

/// Chart topology section of a configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub periodic: Vec<bool>,
    #[serde(default)]
    pub periods: Vec<f64>,
}

/// User system configuration (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub kind: Option<SystemKind>,
    pub dimension: usize,
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    pub field: Vec<String>,
    #[serde(default)]
    pub jacobian: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub equilibria: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub jacobian_bound: Option<f64>,
}

/// Parses a TOML or JSON document (JSON when it starts with '{').
pub fn parse_config(doc: &str) -> Result<SystemConfig> {
    if doc.trim_start().starts_with('{') {
        serde_json::from_str(doc).map_err(|e| Error::Input(format!("invalid JSON system config: {e}")))
    } else {
        toml::from_str(doc).map_err(|e| Error::Input(format!("invalid TOML system config: {e}")))
    }
}

/// Builds a system from a configuration document.
pub fn from_config(doc: &str) -> Result<SmoothSystem> {
    system_from_config(&parse_config(doc)?)
}

fn parse_field(src: &str, scope: &Scope<'_>, what: &str) -> Result<Expr> {
    parse(src, scope).map_err(|e| match e {
        Error::Parse { pos, token, message } => Error::Parse {
            pos,
            token,
            message: format!("{what}: {message}"),
        },
        other => other,
    })
}

pub fn system_from_config(cfg: &SystemConfig) -> Result<SmoothSystem> {
    let d = cfg.dimension;
    if d == 0 {
        return Err(Error::Input("dimension must be at least 1".into()));
    }
    if cfg.field.len() != d {
        return Err(Error::Dimension { expected: d, got: cfg.field.len() });
    }
    let topo = match &cfg.topology {
        None => ChartTopology::euclidean(d),
        Some(t) => {
            if t.periodic.len() != d {
                return Err(Error::Dimension { expected: d, got: t.periodic.len() });
            }
            let mut periods = Vec::with_capacity(d);
            for (i, &flag) in t.periodic.iter().enumerate() {
                if flag {
                    let p = t.periods.get(i).copied().ok_or_else(|| {
                        Error::Input(format!("coordinate {} is periodic but has no period", i + 1))
                    })?;
                    periods.push(Some(p));
                } else {
                    periods.push(None);
                }
            }
            ChartTopology::new(&periods)?
        }
    };
    let scope = Scope { dimension: d, params: &cfg.params, aliases: &[] };
    let field: Vec<Expr> = cfg
        .field
        .iter()
        .enumerate()
        .map(|(i, s)| parse_field(s, &scope, &format!("field[{}]", i + 1)))
        .collect::<Result<_>>()?;
    let f = Arc::new(field);
    let eval_f = f.clone();
    let mut sys = SmoothSystem::new(
        cfg.name.clone().unwrap_or_else(|| "config".into()),
        cfg.kind.unwrap_or(SystemKind::VectorField),
        topo,
        Arc::new(move |x: &DVector<f64>| DVector::from_iterator(x.len(), eval_f.iter().map(|e| e.eval(x.as_slice())))),
    );
    if let Some(jac) = &cfg.jacobian {
        if jac.len() != d || jac.iter().any(|r| r.len() != d) {
            return Err(Error::Input(format!("jacobian must be {d}x{d}")));
        }
        let mut entries = Vec::with_capacity(d * d);
        for (i, row) in jac.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                entries.push(parse_field(s, &scope, &format!("jacobian[{}][{}]", i + 1, j + 1))?);
            }
        }
        let entries = Arc::new(entries);
        sys = sys.with_jacobian(Arc::new(move |x: &DVector<f64>| {
            DMatrix::from_row_iterator(d, d, entries.iter().map(|e| e.eval(x.as_slice())))
        }));
    }
    if let Some(eq) = &cfg.equilibria {
        let mut pts = Vec::with_capacity(eq.len());
        for p in eq {
            if p.len() != d {
                return Err(Error::Dimension { expected: d, got: p.len() });
            }
            pts.push(DVector::from_column_slice(p));
        }
        sys = sys.with_equilibria(pts);
    }
    if let Some(l) = cfg.jacobian_bound {
        sys = sys.with_jacobian_bound(l);
    }
    Ok(sys)
}
