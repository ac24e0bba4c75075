//! Trajectory classification: nested-contraction sink search for maps,
//! section return maps for flows, singularity analysis near equilibria,
//! cusp sections, and the verdict pipeline.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    integrate, integrate_with, iterate, rk4_step, time_map, IntegrateOptions, SmoothSystem, SystemKind,
    TrajectorySegment,
};
use crate::geometry::{normal_frame, wrap_unchecked, ChartTopology, NormalFrame};
use crate::hyptimes::{
    block_exponent_series, contracting_ball_radius, detect_lpf_reverse_hyperbolic_times,
    detect_reverse_hyperbolic_times_map, step_logs, Direction, HyperbolicTimeRecord,
};
use crate::linalg::{eigenvalues, expm, null_vector, op_norm, singular_values, spectral_radius};
use crate::lpf::{inverse_sectional_exponents, lpf_cocycle, sectional_exponents, REGULAR_THRESHOLD};

/// Cluster scale ξ of the nested-contraction argument (4ξ < 1 − ξ − ξ²).
pub const XI: f64 = 0.15;
/// Section crossings are refined until |s| ≤ this value.
pub const CROSSING_TOL: f64 = 1e-10;
/// Residual bound for located periodic points.
pub const FIXED_POINT_TOL: f64 = 1e-9;
/// Spectral margin required of located sinks.
pub const SPECTRAL_MARGIN: f64 = 1e-6;
/// Relative agreement needed between the LPF and finite-difference return derivatives.
pub const RETURN_AGREEMENT: f64 = 1e-4;
/// Largest condition number accepted for the cusp eigenframe.
pub const MAX_FRAME_CONDITION: f64 = 1e6;
/// Hyperbolic-time lists in reports are thinned to this many entries.
pub const REPORT_TIMES: usize = 64;

fn flow_for(sys: &SmoothSystem, x: &DVector<f64>, h: f64, step: f64) -> DVector<f64> {
    if h <= 0.0 {
        return x.clone();
    }
    let n = ((h / step) - 1e-9).ceil().max(1.0) as usize;
    let sub = h / n as f64;
    let mut y = x.clone();
    for _ in 0..n {
        y = rk4_step(sys, &y, sub);
    }
    y
}

fn finite(x: &DVector<f64>) -> bool {
    x.iter().all(|v| v.is_finite()) && x.norm() < 1e12
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn eig_pairs(m: &DMatrix<f64>) -> Vec<[f64; 2]> {
    eigenvalues(m).iter().map(|z| [z.re, z.im]).collect()
}

/// Affine disk center + {basis·u : ‖u‖ ≤ radius} transverse to G(center).
#[derive(Debug, Clone)]
pub struct SectionDisk {
    pub center: DVector<f64>,
    pub frame: NormalFrame,
    pub radius: f64,
}

impl SectionDisk {
    pub fn new(sys: &SmoothSystem, center: &DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Input("section radius must be positive".into()));
        }
        let g = sys.eval(center);
        if !(g.norm() >= REGULAR_THRESHOLD) {
            return Err(Error::Input(format!("‖G‖ = {:e} at the section center", g.norm())));
        }
        Ok(SectionDisk {
            center: center.clone(),
            frame: normal_frame(&g)?,
            radius,
        })
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.frame.base_direction
    }

    /// s(x) = ⟨x − y, n⟩ using the minimal-image displacement.
    pub fn signed_distance(&self, topo: &ChartTopology, x: &DVector<f64>) -> f64 {
        topo.displacement(x, &self.center).dot(self.normal())
    }

    pub fn coords(&self, topo: &ChartTopology, x: &DVector<f64>) -> DVector<f64> {
        self.frame.basis.transpose() * topo.displacement(x, &self.center)
    }

    pub fn point(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.frame.basis * u
    }
}

/// A positively oriented crossing of a section disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub point: DVector<f64>,
    pub coords: DVector<f64>,
}

/// Refines a sign change of s on [0, span] starting from x (s(x) < 0 ≤ s(φ_span x)).
fn refine_crossing(
    sys: &SmoothSystem,
    disk: &SectionDisk,
    x: &DVector<f64>,
    span: f64,
    s0: f64,
    s1: f64,
    step: f64,
) -> Option<(f64, DVector<f64>)> {
    let topo = &sys.topo;
    let n = disk.normal();
    let mut h = span * s0 / (s0 - s1);
    let mut y = flow_for(sys, x, h, step);
    let mut s = disk.signed_distance(topo, &y);
    for _ in 0..40 {
        if s.abs() <= 1e-15 {
            break;
        }
        let ds = sys.eval(&y).dot(n);
        if !(ds.abs() > 0.0) {
            break;
        }
        let hn = h - s / ds;
        if !(0.0..=span).contains(&hn) {
            break;
        }
        let done = (hn - h).abs() <= 1e-16 * span.max(1.0);
        h = hn;
        y = flow_for(sys, x, h, step);
        s = disk.signed_distance(topo, &y);
        if done {
            break;
        }
    }
    if s.abs() > CROSSING_TOL {
        let (mut lo, mut hi) = (0.0, span);
        for _ in 0..200 {
            h = 0.5 * (lo + hi);
            y = flow_for(sys, x, h, step);
            s = disk.signed_distance(topo, &y);
            if s.abs() <= 1e-13 || hi - lo <= 1e-16 {
                break;
            }
            if s < 0.0 {
                lo = h;
            } else {
                hi = h;
            }
        }
    }
    (s.abs() <= CROSSING_TOL).then_some((h, y))
}

fn accept_hit(sys: &SmoothSystem, disk: &SectionDisk, y: &DVector<f64>) -> Option<DVector<f64>> {
    let u = disk.coords(&sys.topo, y);
    (u.norm() <= disk.radius && sys.eval(y).dot(disk.normal()) > 0.0).then_some(u)
}

/// Positively oriented crossings of the disk by a sampled trajectory, each
/// refined by re-integration from the preceding sample.
pub fn section_crossings(sys: &SmoothSystem, traj: &TrajectorySegment, disk: &SectionDisk) -> Vec<Crossing> {
    let topo = &sys.topo;
    let mut out = Vec::new();
    let s: Vec<f64> = traj.states.iter().map(|x| disk.signed_distance(topo, x)).collect();
    for k in 0..traj.len().saturating_sub(1) {
        if !(s[k] < 0.0 && s[k + 1] >= 0.0) {
            continue;
        }
        let span = traj.times[k + 1] - traj.times[k];
        if let Some((h, y)) = refine_crossing(sys, disk, &traj.states[k], span, s[k], s[k + 1], traj.step) {
            if let Some(u) = accept_hit(sys, disk, &y) {
                out.push(Crossing {
                    time: traj.times[k] + h,
                    point: y,
                    coords: u,
                });
            }
        }
    }
    out
}

/// First positive crossing of the disk at time ≥ t_min, integrating from x at step dt.
pub fn first_return(
    sys: &SmoothSystem,
    disk: &SectionDisk,
    x: &DVector<f64>,
    t_min: f64,
    cap: f64,
    dt: f64,
) -> Option<Crossing> {
    let topo = &sys.topo;
    let mut t = 0.0;
    let mut xk = x.clone();
    let mut sk = disk.signed_distance(topo, &xk);
    while t < cap {
        let h = dt.min(cap - t);
        let xn = rk4_step(sys, &xk, h);
        if !finite(&xn) {
            return None;
        }
        let sn = disk.signed_distance(topo, &xn);
        if t + h >= t_min && sk < 0.0 && sn >= 0.0 {
            if let Some((th, y)) = refine_crossing(sys, disk, &xk, h, sk, sn, h) {
                if let Some(u) = accept_hit(sys, disk, &y) {
                    return Some(Crossing {
                        time: t + th,
                        point: y,
                        coords: u,
                    });
                }
            }
        }
        t += h;
        xk = xn;
        sk = sn;
    }
    None
}

/// Return-map samples and derivative at the disk center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnMapResult {
    pub return_time: f64,
    /// (probe coordinates, returned coordinates or None when the probe escaped).
    pub samples: Vec<(Vec<f64>, Option<Vec<f64>>)>,
    /// Qᵀ(I − G(p_T)nᵀ/⟨n, G(p_T)⟩)·Dφ_T·Q at the center.
    pub derivative: Vec<Vec<f64>>,
    pub fd_derivative: Option<Vec<Vec<f64>>>,
    pub relative_agreement: Option<f64>,
    pub spectral_radius: f64,
    pub certified: bool,
    pub partial: bool,
}

/// Settings shared by the return-map routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSettings {
    pub dt: f64,
    pub max_return_time: f64,
}

impl Default for ReturnSettings {
    fn default() -> Self {
        ReturnSettings {
            dt: 1e-3,
            max_return_time: 50.0,
        }
    }
}

fn center_return(sys: &SmoothSystem, disk: &SectionDisk, rs: &ReturnSettings) -> Option<Crossing> {
    first_return(sys, disk, &disk.center, rs.dt, rs.max_return_time, rs.dt)
}

fn return_coords(sys: &SmoothSystem, disk: &SectionDisk, u: &DVector<f64>, t_min: f64, rs: &ReturnSettings) -> Option<DVector<f64>> {
    first_return(sys, disk, &disk.point(u), t_min, rs.max_return_time, rs.dt).map(|c| c.coords)
}

/// Return-map derivative from the variational equation and the section projection.
fn lpf_return_derivative(sys: &SmoothSystem, disk: &SectionDisk, ret: &Crossing, dt: f64) -> Result<DMatrix<f64>> {
    let seg = integrate(sys, &disk.center, ret.time, dt.min(ret.time), true)?;
    let z = seg.fundamental(seg.len() - 1)?;
    let g_t = sys.eval(&ret.point);
    let n = disk.normal();
    let d = sys.dim();
    let proj = DMatrix::identity(d, d) - (&g_t * n.transpose()) / n.dot(&g_t);
    let q = &disk.frame.basis;
    Ok(q.transpose() * proj * z * q)
}

/// Richardson-extrapolated central differences of the return map at the center.
fn fd_return_derivative(sys: &SmoothSystem, disk: &SectionDisk, t_min: f64, rs: &ReturnSettings) -> Option<DMatrix<f64>> {
    let m = disk.frame.basis.ncols();
    let h = (0.5 * disk.radius).min(1e-2);
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut cols = Vec::new();
        for hh in [h, 0.5 * h] {
            let mut e = DVector::zeros(m);
            e[j] = hh;
            let rp = return_coords(sys, disk, &e, t_min, rs)?;
            let rm = return_coords(sys, disk, &(-&e), t_min, rs)?;
            cols.push((rp - rm) / (2.0 * hh));
        }
        let col = (&cols[1] * 4.0 - &cols[0]) / 3.0;
        out.set_column(j, &col);
    }
    Some(out)
}

/// Numeric return map on `probes` (disk coordinates) and its derivative at
/// the center, cross-checked by finite differences.
pub fn return_map_contraction(
    sys: &SmoothSystem,
    disk: &SectionDisk,
    probes: &[DVector<f64>],
    rs: &ReturnSettings,
) -> Result<ReturnMapResult> {
    if sys.kind != SystemKind::VectorField {
        return Err(Error::Input("return maps need a vector field".into()));
    }
    let ret = center_return(sys, disk, rs)
        .ok_or_else(|| Error::Numeric(format!("no return to the section within {}", rs.max_return_time)))?;
    let t_min = 0.5 * ret.time;
    let mut partial = false;
    let samples = probes
        .iter()
        .map(|u| {
            let r = return_coords(sys, disk, u, t_min, rs);
            partial |= r.is_none();
            (u.iter().copied().collect(), r.map(|v| v.iter().copied().collect()))
        })
        .collect();
    let dr = lpf_return_derivative(sys, disk, &ret, rs.dt)?;
    let fd = fd_return_derivative(sys, disk, t_min, rs);
    let agreement = fd.as_ref().map(|f| op_norm(&(f - &dr)) / op_norm(&dr).max(1e-300));
    Ok(ReturnMapResult {
        return_time: ret.time,
        samples,
        derivative: to_rows(&dr),
        fd_derivative: fd.as_ref().map(to_rows),
        relative_agreement: agreement,
        spectral_radius: spectral_radius(&dr),
        certified: agreement.is_some_and(|a| a <= RETURN_AGREEMENT),
        partial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularityKind {
    Sink,
    Source,
    Saddle,
    NonHyperbolic,
}

/// Linearization of G at an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityAnalysis {
    pub point: Vec<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub kind: SingularityKind,
    pub hyperbolic: bool,
    pub dim_stable: usize,
    pub dim_unstable: usize,
    /// dim E^u = 1 for a hyperbolic saddle.
    pub codimension_one: bool,
}

/// Eigenvalues and type of DG(σ); requires ‖G(σ)‖ ≤ 1e−10.
pub fn analyze_singularity(sys: &SmoothSystem, sigma: &DVector<f64>) -> Result<SingularityAnalysis> {
    if sys.kind != SystemKind::VectorField {
        return Err(Error::Input("singularities are defined for vector fields".into()));
    }
    let g = sys.eval(sigma).norm();
    if !(g <= 1e-10) {
        return Err(Error::Input(format!("‖G(σ)‖ = {g:e} exceeds 1e-10")));
    }
    let ev = eigenvalues(&sys.jacobian(sigma));
    let hyperbolic = ev.iter().all(|z| z.re.abs() > 1e-8);
    let dim_unstable = ev.iter().filter(|z| z.re > 1e-8).count();
    let dim_stable = ev.iter().filter(|z| z.re < -1e-8).count();
    let kind = if !hyperbolic {
        SingularityKind::NonHyperbolic
    } else if dim_unstable == 0 {
        SingularityKind::Sink
    } else if dim_stable == 0 {
        SingularityKind::Source
    } else {
        SingularityKind::Saddle
    };
    Ok(SingularityAnalysis {
        point: sigma.iter().copied().collect(),
        eigenvalues: ev.iter().map(|z| [z.re, z.im]).collect(),
        kind,
        hyperbolic,
        dim_stable,
        dim_unstable,
        codimension_one: kind == SingularityKind::Saddle && dim_unstable == 1,
    })
}

/// Newton iteration for G(x) = 0; returns the root when ‖G‖ ≤ 1e−10.
pub fn newton_equilibrium(sys: &SmoothSystem, x0: &DVector<f64>) -> Option<DVector<f64>> {
    let mut x = x0.clone();
    for _ in 0..60 {
        let g = sys.eval(&x);
        if g.norm() <= 1e-14 {
            break;
        }
        let step = sys.jacobian(&x).lu().solve(&g)?;
        x -= &step;
        if !finite(&x) {
            return None;
        }
        if step.norm() <= 1e-16 * (1.0 + x.norm()) {
            break;
        }
    }
    let x = wrap_unchecked(&x, &sys.topo);
    (sys.eval(&x).norm() <= 1e-10).then_some(x)
}

/// Comparison of Dφ_t(q) with e^{t·DG(σ)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallResult {
    pub lhs: f64,
    pub rhs: f64,
    pub delta_bar: f64,
    pub lipschitz: f64,
    pub holds: bool,
}

/// ‖Dφ_t(q) − e^{t DG_σ}‖ ≤ δ̄·t·e^{Lt}, δ̄ = max over samples of ‖DG(φ_s q) − DG_σ‖.
/// L defaults to the largest ‖DG‖ met along the orbit or at σ.
pub fn gronwall_check(
    sys: &SmoothSystem,
    sigma: &DVector<f64>,
    q: &DVector<f64>,
    t: f64,
    l: Option<f64>,
) -> Result<GronwallResult> {
    if !(t > 0.0) {
        return Err(Error::Input("t must be positive".into()));
    }
    let seg = integrate(sys, q, t, 1e-3f64.min(t), true)?;
    let a = sys.jacobian(sigma);
    let lhs = op_norm(&(seg.fundamental(seg.len() - 1)? - expm(&(&a * t))));
    let mut delta_bar: f64 = 0.0;
    let mut l_orbit = op_norm(&a);
    for x in &seg.states {
        let j = sys.jacobian(x);
        delta_bar = delta_bar.max(op_norm(&(&j - &a)));
        l_orbit = l_orbit.max(op_norm(&j));
    }
    let lipschitz = l.unwrap_or(l_orbit);
    let rhs = delta_bar * t * (lipschitz * t).exp();
    Ok(GronwallResult {
        lhs,
        rhs,
        delta_bar,
        lipschitz,
        holds: lhs <= rhs + 1e-9,
    })
}

/// Affine eigenframe at a saddle with one unstable direction:
/// x − σ = E^s·u + e_u·v.
#[derive(Debug, Clone)]
pub struct CuspFrame {
    pub sigma: DVector<f64>,
    pub stable_basis: DMatrix<f64>,
    pub unstable: DVector<f64>,
    pub lambda_unstable: f64,
    pub condition: f64,
    b_inv: DMatrix<f64>,
}

impl CuspFrame {
    pub fn new(sys: &SmoothSystem, sigma: &DVector<f64>) -> Result<Self> {
        let an = analyze_singularity(sys, sigma)?;
        if !(an.kind == SingularityKind::Saddle && an.dim_unstable == 1) {
            return Err(Error::Frame(format!(
                "need a hyperbolic saddle with dim E^u = 1, got {:?} with dim E^u = {}",
                an.kind, an.dim_unstable
            )));
        }
        let lam = an
            .eigenvalues
            .iter()
            .find(|z| z[0] > 0.0)
            .map(|z| z[0])
            .expect("one unstable eigenvalue");
        let a = sys.jacobian(sigma);
        let d = sys.dim();
        let shift = DMatrix::identity(d, d) * lam;
        let e_u = null_vector(&(&a - &shift));
        let left = null_vector(&(a.transpose() - &shift));
        let es = normal_frame(&left)?.basis;
        let mut b = DMatrix::zeros(d, d);
        b.view_mut((0, 0), (d, d - 1)).copy_from(&es);
        b.set_column(d - 1, &e_u);
        let sv = singular_values(&b);
        let condition = sv[0] / sv[d - 1];
        if !(condition <= MAX_FRAME_CONDITION) {
            return Err(Error::Frame(format!("eigenframe condition number {condition:e} exceeds 1e6")));
        }
        let b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::Frame("eigenframe is singular".into()))?;
        Ok(CuspFrame {
            sigma: sigma.clone(),
            stable_basis: es,
            unstable: e_u,
            lambda_unstable: lam,
            condition,
            b_inv,
        })
    }

    /// (u, v) coordinates of x.
    pub fn coords(&self, topo: &ChartTopology, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let w = &self.b_inv * topo.displacement(x, &self.sigma);
        let d = w.len();
        (w.rows(0, d - 1).into_owned(), w[d - 1])
    }

    /// F = ‖u‖² − orientation·v; the cusp section is F = 0.
    pub fn cusp_value(&self, topo: &ChartTopology, x: &DVector<f64>, orientation: f64) -> f64 {
        let (u, v) = self.coords(topo, x);
        u.norm_squared() - orientation * v
    }

    /// +1 when v(x) ≥ 0, otherwise −1 (the cusp opens toward x's side of W^s).
    pub fn orientation(&self, topo: &ChartTopology, x: &DVector<f64>) -> f64 {
        if self.coords(topo, x).1 >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuspHit {
    pub time: f64,
    pub point: Vec<f64>,
    pub u_norm: f64,
    pub v: f64,
}

fn refine_cusp(
    sys: &SmoothSystem,
    frame: &CuspFrame,
    x: &DVector<f64>,
    span: f64,
    orientation: f64,
) -> (f64, DVector<f64>) {
    let topo = &sys.topo;
    let (mut lo, mut hi) = (0.0, span);
    let mut y = x.clone();
    let mut h = 0.0;
    for _ in 0..200 {
        h = 0.5 * (lo + hi);
        y = rk4_step(sys, x, h);
        let f = frame.cusp_value(topo, &y, orientation);
        if f == 0.0 || hi - lo <= 1e-16 {
            break;
        }
        if f > 0.0 {
            lo = h;
        } else {
            hi = h;
        }
    }
    (h, y)
}

/// First time the orbit of x0 reaches the cusp surface ‖u‖² = ±v (sign of
/// v(x0)) within `cap`; t = 0 when x0 already lies on or beyond it.
pub fn cusp_section_hit(sys: &SmoothSystem, sigma: &DVector<f64>, x0: &DVector<f64>, cap: f64) -> Result<Option<CuspHit>> {
    let frame = CuspFrame::new(sys, sigma)?;
    let topo = &sys.topo;
    let o = frame.orientation(topo, x0);
    let hit = |t: f64, y: &DVector<f64>| {
        let (u, v) = frame.coords(topo, y);
        CuspHit {
            time: t,
            point: y.iter().copied().collect(),
            u_norm: u.norm(),
            v,
        }
    };
    if frame.cusp_value(topo, x0, o) <= 0.0 {
        return Ok(Some(hit(0.0, x0)));
    }
    let dt: f64 = 1e-3;
    let mut t = 0.0;
    let mut x = x0.clone();
    while t < cap {
        let h = dt.min(cap - t);
        let xn = rk4_step(sys, &x, h);
        if !finite(&xn) {
            return Err(Error::BlowUp { t: t + h, norm: xn.norm() });
        }
        if frame.cusp_value(topo, &xn, o) <= 0.0 {
            let (th, y) = refine_cusp(sys, &frame, &x, h, o);
            return Ok(Some(hit(t + th, &y)));
        }
        t += h;
        x = xn;
    }
    Ok(None)
}

/// Sign changes of F along the orbit of x0 while |u_i|, |v| ≤ half_width.
pub fn cusp_crossings(sys: &SmoothSystem, frame: &CuspFrame, x0: &DVector<f64>, cap: f64, half_width: f64) -> usize {
    let topo = &sys.topo;
    let o = frame.orientation(topo, x0);
    let inside = |x: &DVector<f64>| {
        let (u, v) = frame.coords(topo, x);
        u.amax() <= half_width && v.abs() <= half_width
    };
    let dt: f64 = 1e-3;
    let mut count = 0;
    let mut x = x0.clone();
    let mut f = frame.cusp_value(topo, &x, o);
    let mut t = 0.0;
    while t < cap && inside(&x) {
        let xn = rk4_step(sys, &x, dt);
        let fnext = frame.cusp_value(topo, &xn, o);
        if (f > 0.0) != (fnext > 0.0) {
            count += 1;
        }
        x = xn;
        f = fnext;
        t += dt;
    }
    count
}

/// A located periodic point of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPoint {
    pub point: Vec<f64>,
    pub period: usize,
    pub residual: f64,
    pub spectral_radius: f64,
    pub multipliers: Vec<[f64; 2]>,
    pub cluster_size: usize,
    pub search_period: usize,
}

fn iterate_map(sys: &SmoothSystem, x: &DVector<f64>, q: usize) -> DVector<f64> {
    let mut y = x.clone();
    for _ in 0..q {
        y = wrap_unchecked(&sys.eval(&y), &sys.topo);
    }
    y
}

fn iterate_map_jac(sys: &SmoothSystem, x: &DVector<f64>, q: usize) -> (DVector<f64>, DMatrix<f64>) {
    let d = x.len();
    let mut y = x.clone();
    let mut j = DMatrix::identity(d, d);
    for _ in 0..q {
        let (fy, jy) = sys.value_and_jacobian(&y);
        j = jy * j;
        y = wrap_unchecked(&fy, &sys.topo);
    }
    (y, j)
}

/// Sink search of the nested-contraction argument: cluster the hyperbolic
/// iterates near the latest one, pick the shortest return q with λ₁^q < 1/2,
/// contract with f^q, polish by Newton and reduce to the minimal period.
pub fn nested_contraction_search(
    sys: &SmoothSystem,
    orbit: &TrajectorySegment,
    record: &HyperbolicTimeRecord,
    delta1: f64,
    lambda1: f64,
) -> Result<Option<PeriodicPoint>> {
    if sys.kind != SystemKind::Map {
        return Err(Error::Input("nested contraction search needs a map".into()));
    }
    if !record.certified {
        return Err(Error::Input("hyperbolic time record is not certified".into()));
    }
    if !(delta1 > 0.0 && lambda1 > 0.0 && lambda1 < 1.0) {
        return Err(Error::Input("need delta1 > 0 and lambda1 in (0,1)".into()));
    }
    let topo = &sys.topo;
    let taus: BTreeSet<usize> = record.indices.iter().map(|p| p.0).filter(|&t| t < orbit.len()).collect();
    if taus.len() < 3 {
        return Ok(None);
    }
    let tau_star = *taus.iter().next_back().expect("non-empty");
    let xbar = &orbit.states[tau_star];
    let cluster: BTreeSet<usize> = taus
        .iter()
        .copied()
        .filter(|&t| topo.distance(&orbit.states[t], xbar) <= XI * delta1)
        .collect();
    let q_min = ((0.5f64).ln() / lambda1.ln()).floor() as usize + 1;
    let mut q_found = None;
    for q in q_min.max(1)..orbit.len() {
        let hit = cluster.iter().any(|&n| {
            cluster.contains(&(n + q)) && topo.distance(&orbit.states[n], &orbit.states[n + q]) <= XI * XI * delta1
        });
        if hit {
            q_found = Some(q);
            break;
        }
    }
    let Some(q) = q_found else { return Ok(None) };
    let mut x = xbar.clone();
    for _ in 0..5000 {
        let y = iterate_map(sys, &x, q);
        let step = topo.distance(&y, &x);
        x = y;
        if step <= 1e-12 || !finite(&x) {
            break;
        }
    }
    if !finite(&x) {
        return Ok(None);
    }
    let d = sys.dim();
    for _ in 0..20 {
        let (y, j) = iterate_map_jac(sys, &x, q);
        let r = topo.displacement(&y, &x);
        if r.norm() <= 1e-15 {
            break;
        }
        let Some(delta) = (j - DMatrix::identity(d, d)).lu().solve(&(-r)) else { break };
        x = wrap_unchecked(&(&x + delta), topo);
    }
    let period = (1..=q)
        .filter(|p| q % p == 0)
        .find(|&p| topo.distance(&iterate_map(sys, &x, p), &x) <= FIXED_POINT_TOL)
        .unwrap_or(q);
    let (y, j) = iterate_map_jac(sys, &x, period);
    let residual = topo.distance(&y, &x);
    let rho = spectral_radius(&j);
    if residual <= FIXED_POINT_TOL && rho < 1.0 - SPECTRAL_MARGIN {
        Ok(Some(PeriodicPoint {
            point: x.iter().copied().collect(),
            period,
            residual,
            spectral_radius: rho,
            multipliers: eig_pairs(&j),
            cluster_size: cluster.len(),
            search_period: q,
        }))
    } else {
        Ok(None)
    }
}

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Flow time T (flows) or iteration count (maps); defaults 64 and 1000.
    pub horizon: Option<f64>,
    pub dt: f64,
    /// Rate ζ; defaults to 0.9·|window estimate|.
    pub zeta: Option<f64>,
    /// Exponent estimates must be below −threshold to count as contraction.
    pub exponent_threshold: f64,
    pub accumulation_radius: f64,
    pub max_return_time: f64,
    /// Sample stride for flows; 0 keeps at most 20000 samples.
    pub record_every: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            horizon: None,
            dt: 1e-3,
            zeta: None,
            exponent_threshold: 1e-3,
            accumulation_radius: 1e-2,
            max_return_time: 50.0,
            record_every: 0,
        }
    }
}

impl ClassifyConfig {
    pub fn horizon_for(&self, kind: SystemKind) -> f64 {
        self.horizon.unwrap_or(match kind {
            SystemKind::Map => 1000.0,
            SystemKind::VectorField => 64.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    MapSinkBasin,
    MapSourceOrbit,
    FlowEquilibriumSink,
    FlowPeriodicSinkBasin,
    FlowSource,
    AccumulatesSaddle {
        dim_stable: usize,
        dim_unstable: usize,
        codimension_one: bool,
    },
    Inconclusive,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::MapSinkBasin => "map_sink_basin",
            Verdict::MapSourceOrbit => "map_source_orbit",
            Verdict::FlowEquilibriumSink => "flow_equilibrium_sink",
            Verdict::FlowPeriodicSinkBasin => "flow_periodic_sink_basin",
            Verdict::FlowSource => "flow_source",
            Verdict::AccumulatesSaddle { .. } => "accumulates_saddle",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    pub fn is_basin(&self) -> bool {
        matches!(
            self,
            Verdict::MapSinkBasin | Verdict::FlowEquilibriumSink | Verdict::FlowPeriodicSinkBasin
        )
    }
}

/// An equilibrium the orbit accumulates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulatedEquilibrium {
    pub analysis: SingularityAnalysis,
    /// Separate entries into the accumulation ball.
    pub entries: usize,
    /// Orbit stays inside the ball over the last quarter of the run.
    pub converged: bool,
    pub min_distance: f64,
}

/// Numeric evidence attached to a verdict.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    /// Spectral radius of the linearization (map or return map).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction_rate: Option<f64>,
    /// Exponent estimate supporting the verdict.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_map: Option<ReturnMapResult>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub accumulated: Vec<AccumulatedEquilibrium>,
    /// (liminf, limsup) window estimates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_exponents: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_exponents: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sectional_exponents: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inverse_sectional_exponents: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_equilibrium_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub system: String,
    pub x0: Vec<f64>,
    pub evidence: Evidence,
    pub hyperbolic_times_used: Option<HyperbolicTimeRecord>,
    pub caveats: Vec<String>,
}

impl ClassificationReport {
    fn new(sys: &SmoothSystem, x0: &DVector<f64>) -> Self {
        ClassificationReport {
            verdict: Verdict::Inconclusive,
            system: sys.name.clone(),
            x0: x0.iter().copied().collect(),
            evidence: Evidence::default(),
            hyperbolic_times_used: None,
            caveats: Vec::new(),
        }
    }
}

fn thin(mut r: HyperbolicTimeRecord) -> HyperbolicTimeRecord {
    let n = r.times.len();
    if n > REPORT_TIMES {
        let keep: Vec<usize> = (0..REPORT_TIMES).map(|i| i * (n - 1) / (REPORT_TIMES - 1)).collect();
        r.times = keep.iter().map(|&i| r.times[i]).collect();
        r.indices = keep.iter().map(|&i| r.indices[i]).collect();
        let msg = format!("{REPORT_TIMES} of {n} certified times listed");
        r.note = if r.note.is_empty() { msg } else { format!("{}; {msg}", r.note) };
    }
    r
}

struct MapAttempt {
    found: Option<PeriodicPoint>,
    liminf: f64,
    limsup: f64,
    zeta: Option<f64>,
    delta1: Option<f64>,
    lambda1: Option<f64>,
    record: Option<HyperbolicTimeRecord>,
    notes: Vec<String>,
}

fn map_sink_attempt(sys: &SmoothSystem, x0: &DVector<f64>, n: usize, cfg: &ClassifyConfig) -> Result<MapAttempt> {
    let orbit = iterate(sys, x0, n, true)?;
    let series = block_exponent_series(&orbit, 1, Direction::Forward)?;
    let mut att = MapAttempt {
        found: None,
        liminf: series.liminf_estimate,
        limsup: series.limsup_estimate,
        zeta: None,
        delta1: None,
        lambda1: None,
        record: None,
        notes: vec![format!(
            "A1 window estimates over n in [{}, {}]: finite-horizon values",
            series.window.0, series.window.1
        )],
    };
    if !(series.liminf_estimate < -cfg.exponent_threshold) {
        att.notes.push("no forward contraction estimate".into());
        return Ok(att);
    }
    let zeta = cfg.zeta.unwrap_or(0.9 * series.liminf_estimate.abs());
    att.zeta = Some(zeta);
    let logs = step_logs(&orbit)?;
    let (from, to) = series.window;
    let good: Vec<usize> = (from..=to).filter(|&m| series.partial_averages[m - 1] <= -zeta).collect();
    if good.is_empty() {
        att.notes.push("no horizon with average below -zeta".into());
        return Ok(att);
    }
    let mut horizons = vec![good[0], good[good.len() / 2], good[good.len() - 1]];
    horizons.dedup();
    let mut merged: Option<HyperbolicTimeRecord> = None;
    for m in horizons {
        let r = detect_reverse_hyperbolic_times_map(&logs, zeta, m, None)?;
        merged = Some(match merged {
            None => r,
            Some(acc) => acc.merge(r),
        });
    }
    let record = merged.expect("at least one horizon");
    if !record.certified {
        att.record = Some(record);
        att.notes.push("no certified reverse hyperbolic times".into());
        return Ok(att);
    }
    let tau_star = record.indices.iter().map(|p| p.0).max().expect("certified record");
    let xbar = orbit.states[tau_star].clone();
    let mut probes: Vec<DVector<f64>> = orbit.states[orbit.len().saturating_sub(16)..].to_vec();
    for k in 0..=10 {
        let r = 0.1 * 2f64.powi(-k);
        for i in 0..sys.dim() {
            for s in [1.0, -1.0] {
                let mut p = xbar.clone();
                p[i] += s * r;
                probes.push(wrap_unchecked(&p, &sys.topo));
            }
        }
    }
    let lambda = (-0.5 * zeta).exp();
    match contracting_ball_radius(sys, lambda, &probes) {
        Ok(ball) => {
            att.delta1 = Some(ball.delta1);
            att.lambda1 = Some(ball.lambda1);
            att.found = nested_contraction_search(sys, &orbit, &record, ball.delta1, ball.lambda1)?;
            if att.found.is_none() {
                att.notes.push("nested contraction search found no qualifying cluster".into());
            }
        }
        Err(e) => att.notes.push(format!("contracting ball: {e}")),
    }
    att.record = Some(record);
    Ok(att)
}

fn fill_map_evidence(rep: &mut ClassificationReport, att: MapAttempt) {
    rep.evidence.block_exponents = Some((att.liminf, att.limsup));
    rep.evidence.zeta = att.zeta;
    rep.evidence.delta1 = att.delta1;
    rep.evidence.lambda1 = att.lambda1;
    if let Some(p) = &att.found {
        rep.evidence.point = Some(p.point.clone());
        rep.evidence.period = Some(p.period as f64);
        rep.evidence.residual = Some(p.residual);
        rep.evidence.contraction_rate = Some(p.spectral_radius);
        rep.evidence.exponent = Some(p.spectral_radius.ln() / p.period as f64);
        rep.evidence.eigenvalues = Some(p.multipliers.clone());
    }
    rep.hyperbolic_times_used = att.record.map(thin);
    rep.caveats.extend(att.notes);
}

fn classify_map(sys: &SmoothSystem, x0: &DVector<f64>, cfg: &ClassifyConfig, allow_source: bool) -> Result<ClassificationReport> {
    let n = cfg.horizon_for(SystemKind::Map).round().max(4.0) as usize;
    let mut rep = ClassificationReport::new(sys, x0);
    let att = map_sink_attempt(sys, x0, n, cfg)?;
    if att.found.is_some() {
        rep.verdict = Verdict::MapSinkBasin;
        fill_map_evidence(&mut rep, att);
        return Ok(rep);
    }
    if allow_source {
        if let Some(inv) = sys.inverse() {
            let orbit = iterate(sys, x0, n, true)?;
            if let Ok(s) = block_exponent_series(&orbit, 1, Direction::Inverse) {
                if s.liminf_estimate < -cfg.exponent_threshold {
                    let back = map_sink_attempt(inv, x0, n, cfg)?;
                    if back.found.is_some() {
                        rep.verdict = Verdict::MapSourceOrbit;
                        rep.caveats.push(format!(
                            "forward inverse-derivative estimate {} < 0; orbit located as a sink of the inverse map",
                            s.liminf_estimate
                        ));
                        fill_map_evidence(&mut rep, back);
                        rep.evidence.exponent = rep.evidence.exponent.map(|e| -e);
                        return Ok(rep);
                    }
                }
            }
        }
    }
    fill_map_evidence(&mut rep, att);
    Ok(rep)
}

fn segment_prefix(seg: &TrajectorySegment, n: usize) -> TrajectorySegment {
    TrajectorySegment {
        t0: seg.t0,
        dt: seg.dt,
        step: seg.step,
        times: seg.times[..n].to_vec(),
        states: seg.states[..n].to_vec(),
        fundamentals: seg.fundamentals.as_ref().map(|f| f[..n].to_vec()),
        log_scales: seg.log_scales[..n.min(seg.log_scales.len())].to_vec(),
        step_jacobians: None,
    }
}

fn same_point(topo: &ChartTopology, a: &DVector<f64>, b: &DVector<f64>) -> bool {
    topo.distance(a, b) <= 1e-8
}

fn accumulation(
    sys: &SmoothSystem,
    seg: &TrajectorySegment,
    radius: f64,
) -> (Vec<AccumulatedEquilibrium>, Option<f64>) {
    let topo = &sys.topo;
    let mut candidates: Vec<DVector<f64>> = sys.equilibria.clone();
    let last = seg.last_state();
    if sys.eval(last).norm() < 1e-4 {
        if let Some(p) = newton_equilibrium(sys, last) {
            if !candidates.iter().any(|c| same_point(topo, c, &p)) {
                candidates.push(p);
            }
        }
    }
    let mut out = Vec::new();
    let mut min_all: Option<f64> = None;
    let tail_start = seg.len() - seg.len() / 4;
    for sigma in &candidates {
        let dist: Vec<f64> = seg.states.iter().map(|x| topo.distance(x, sigma)).collect();
        let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
        min_all = Some(min_all.map_or(dmin, |m: f64| m.min(dmin)));
        let mut entries = 0;
        for k in 0..dist.len() {
            if dist[k] < radius && (k == 0 || dist[k - 1] >= radius) {
                entries += 1;
            }
        }
        let converged = dist[tail_start..].iter().all(|&d| d < radius);
        if entries >= 3 || converged {
            if let Ok(an) = analyze_singularity(sys, sigma) {
                out.push(AccumulatedEquilibrium {
                    analysis: an,
                    entries,
                    converged,
                    min_distance: dmin,
                });
            }
        }
    }
    (out, min_all)
}

fn relabel_source(mut rep: ClassificationReport, kind: SystemKind) -> ClassificationReport {
    rep.verdict = match (&rep.verdict, kind) {
        (Verdict::MapSinkBasin, _) => Verdict::MapSourceOrbit,
        (Verdict::FlowEquilibriumSink, _) | (Verdict::FlowPeriodicSinkBasin, _) => Verdict::FlowSource,
        (other, _) => other.clone(),
    };
    rep
}

/// Source analysis: classify under the inverse map (or −G) and report sinks
/// found there as sources of the original system. Evidence (exponents,
/// multipliers) refers to the inverse map or −G.
pub fn classify_source(sys: &SmoothSystem, x0: &DVector<f64>, cfg: &ClassifyConfig) -> Result<ClassificationReport> {
    let rev = match sys.kind {
        SystemKind::Map => sys
            .inverse()
            .cloned()
            .ok_or_else(|| Error::Input(format!("{} has no inverse map attached", sys.name)))?,
        SystemKind::VectorField => sys.reversed()?,
    };
    let rep = match sys.kind {
        SystemKind::Map => classify_map(&rev, x0, cfg, false)?,
        SystemKind::VectorField => classify_flow(&rev, x0, cfg, false)?,
    };
    let mut rep = relabel_source(rep, sys.kind);
    rep.system = sys.name.clone();
    rep.caveats.push(format!("classified under {}", rev.name));
    Ok(rep)
}

/// Locates an attracting periodic orbit through the section at x̄ and certifies it.
pub fn locate_periodic_sink(
    sys: &SmoothSystem,
    xbar: &DVector<f64>,
    radius: f64,
    rs: &ReturnSettings,
) -> Result<Option<(DVector<f64>, ReturnMapResult, f64)>> {
    let disk = SectionDisk::new(sys, xbar, radius)?;
    let Some(ret) = center_return(sys, &disk, rs) else { return Ok(None) };
    let t_min = 0.5 * ret.time;
    let m = disk.frame.basis.ncols();
    let mut u = ret.coords.clone();
    let mut converged = false;
    for _ in 0..200 {
        let Some(r) = return_coords(sys, &disk, &u, t_min, rs) else { return Ok(None) };
        let step = (&r - &u).norm();
        u = r;
        if step <= 1e-9 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Ok(None);
    }
    let h = 1e-6 * disk.radius.max(1e-3);
    for _ in 0..5 {
        let Some(r0) = return_coords(sys, &disk, &u, t_min, rs) else { return Ok(None) };
        let f0 = &r0 - &u;
        if f0.norm() <= 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut e = DVector::zeros(m);
            e[j] = h;
            let (Some(rp), Some(rm)) = (
                return_coords(sys, &disk, &(&u + &e), t_min, rs),
                return_coords(sys, &disk, &(&u - &e), t_min, rs),
            ) else {
                return Ok(None);
            };
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        let Some(delta) = (jac - DMatrix::identity(m, m)).lu().solve(&(-f0)) else { break };
        u += delta;
    }
    let p = disk.point(&u);
    let disk_p = SectionDisk::new(sys, &p, radius)?;
    let Some(ret_p) = center_return(sys, &disk_p, rs) else { return Ok(None) };
    let residual = ret_p.coords.norm();
    let probes: Vec<DVector<f64>> = (0..m)
        .flat_map(|j| {
            [1.0, -1.0].map(|s| {
                let mut e = DVector::zeros(m);
                e[j] = s * 0.5 * radius;
                e
            })
        })
        .collect();
    let rm = return_map_contraction(sys, &disk_p, &probes, rs)?;
    Ok(Some((p, rm, residual)))
}

fn classify_flow(sys: &SmoothSystem, x0: &DVector<f64>, cfg: &ClassifyConfig, allow_source: bool) -> Result<ClassificationReport> {
    let mut rep = ClassificationReport::new(sys, x0);
    let thr = cfg.exponent_threshold;
    if sys.eval(x0).norm() < REGULAR_THRESHOLD {
        let sigma = newton_equilibrium(sys, x0).unwrap_or_else(|| x0.clone());
        let an = analyze_singularity(sys, &sigma)?;
        rep.evidence.point = Some(an.point.clone());
        rep.evidence.eigenvalues = Some(an.eigenvalues.clone());
        rep.verdict = match an.kind {
            SingularityKind::Sink => Verdict::FlowEquilibriumSink,
            SingularityKind::Source => Verdict::FlowSource,
            SingularityKind::Saddle => Verdict::AccumulatesSaddle {
                dim_stable: an.dim_stable,
                dim_unstable: an.dim_unstable,
                codimension_one: an.codimension_one,
            },
            SingularityKind::NonHyperbolic => Verdict::Inconclusive,
        };
        rep.caveats.push("initial point is an equilibrium".into());
        return Ok(rep);
    }
    let t_end = cfg.horizon_for(SystemKind::VectorField);
    let every = if cfg.record_every > 0 {
        cfg.record_every
    } else {
        ((t_end / cfg.dt) / 20000.0).ceil().max(1.0) as usize
    };
    let seg = integrate_with(
        sys,
        x0,
        t_end,
        &IntegrateOptions {
            dt: cfg.dt,
            variational: true,
            record_every: every,
        },
    )?;
    let window = |t: f64| ((t / 4.0).max(1.0), t);
    if t_end >= 1.0 {
        let full = crate::lpf::full_derivative_exponents(&seg, window(t_end))?;
        rep.evidence.full_exponents = Some((full.liminf_estimate, full.limsup_estimate));
        // (i) contraction of the full derivative: equilibrium sink through the time-1 map.
        if full.liminf_estimate < -thr {
            let substeps = (1.0 / cfg.dt).round().max(1.0) as usize;
            let map = time_map(sys, 1.0, substeps)?;
            let mcfg = ClassifyConfig {
                horizon: Some(t_end.floor().max(4.0)),
                ..cfg.clone()
            };
            let att = map_sink_attempt(&map, x0, t_end.floor().max(4.0) as usize, &mcfg)?;
            if let Some(pp) = &att.found {
                let p = DVector::from_column_slice(&pp.point);
                if let Some(sigma) = newton_equilibrium(sys, &p) {
                    let an = analyze_singularity(sys, &sigma)?;
                    if an.kind == SingularityKind::Sink {
                        rep.verdict = Verdict::FlowEquilibriumSink;
                        rep.evidence.zeta = att.zeta;
                        rep.evidence.delta1 = att.delta1;
                        rep.evidence.lambda1 = att.lambda1;
                        rep.evidence.point = Some(an.point.clone());
                        rep.evidence.residual = Some(sys.eval(&sigma).norm());
                        rep.evidence.contraction_rate = Some(pp.spectral_radius);
                        rep.evidence.eigenvalues = Some(an.eigenvalues.clone());
                        rep.evidence.exponent = Some(full.liminf_estimate);
                        rep.hyperbolic_times_used = att.record.map(thin);
                        rep.caveats.push(full.caveat);
                        return Ok(rep);
                    }
                }
            }
        }
    }
    // Regular prefix of the trajectory for the linear Poincaré flow.
    let n_reg = seg
        .states
        .iter()
        .position(|x| sys.eval(x).norm() < REGULAR_THRESHOLD)
        .unwrap_or(seg.len());
    if n_reg < seg.len() {
        rep.caveats.push(format!(
            "orbit reaches ‖G‖ < {REGULAR_THRESHOLD:e} at t = {}; LPF truncated there",
            seg.times[n_reg]
        ));
    }
    let (acc, dmin) = accumulation(sys, &seg, cfg.accumulation_radius);
    rep.evidence.min_equilibrium_distance = dmin;
    let cocycle = if n_reg >= 2 && sys.dim() >= 2 {
        Some(lpf_cocycle(&segment_prefix(&seg, n_reg), sys)?)
    } else {
        None
    };
    let t_reg = seg.times[n_reg.max(1) - 1];
    let mut sect = None;
    if let Some(c) = &cocycle {
        if t_reg >= 1.0 {
            let e = sectional_exponents(c, window(t_reg))?;
            let ie = inverse_sectional_exponents(c, window(t_reg))?;
            rep.evidence.sectional_exponents = Some((e.liminf_estimate, e.limsup_estimate));
            rep.evidence.inverse_sectional_exponents = Some((ie.liminf_estimate, ie.limsup_estimate));
            rep.caveats.push(e.caveat.clone());
            sect = Some((e, ie));
        }
    }
    // (iii) accumulation on saddles.
    let saddles: Vec<&AccumulatedEquilibrium> = acc
        .iter()
        .filter(|a| a.analysis.kind == SingularityKind::Saddle)
        .collect();
    if let Some(first) = saddles.first() {
        rep.verdict = Verdict::AccumulatesSaddle {
            dim_stable: first.analysis.dim_stable,
            dim_unstable: first.analysis.dim_unstable,
            codimension_one: first.analysis.codimension_one,
        };
        rep.evidence.accumulated = acc.clone();
        if saddles.iter().any(|a| a.converged) {
            rep.caveats.push(
                "orbit settles at a saddle: consistent with x0 on its stable manifold or with a close pass unresolved at this precision"
                    .into(),
            );
        }
        if let (Some(c), Some((e, _))) = (&cocycle, &sect) {
            if e.liminf_estimate < -thr {
                let zeta = 0.9 * e.liminf_estimate.abs();
                let l = sys.jacobian_bound.unwrap_or_else(|| 1.1 * orbit_jacobian_max(sys, &seg));
                if let Ok(r) = detect_lpf_reverse_hyperbolic_times(c, zeta, l) {
                    rep.hyperbolic_times_used = Some(thin(r));
                }
            }
        }
        return Ok(rep);
    }
    if let Some(sink) = acc.iter().find(|a| a.analysis.kind == SingularityKind::Sink) {
        rep.verdict = Verdict::FlowEquilibriumSink;
        rep.evidence.point = Some(sink.analysis.point.clone());
        rep.evidence.eigenvalues = Some(sink.analysis.eigenvalues.clone());
        rep.evidence.accumulated = acc.clone();
        rep.evidence.exponent = rep.evidence.full_exponents.map(|p| p.0);
        return Ok(rep);
    }
    // (ii) sectional contraction: attracting periodic orbit.
    if let (Some(c), Some((e, _))) = (&cocycle, &sect) {
        if e.liminf_estimate < -thr {
            let (t_star, k_star) = if e.limsup_estimate < -thr {
                (t_reg, c.len())
            } else {
                let (t, _) = e
                    .series
                    .iter()
                    .copied()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("non-empty window");
                let k = c.times.iter().position(|&s| s >= t - 1e-12).unwrap_or(c.len() - 1);
                rep.caveats.push(format!("limsup estimate not negative; using the best horizon T = {t}"));
                (t, k + 1)
            };
            let cc = c.prefix(k_star);
            let value = cc.log_norms[cc.len() - 1] / t_star;
            let zeta = cfg.zeta.unwrap_or(0.9 * value.abs());
            rep.evidence.zeta = Some(zeta);
            let l = sys.jacobian_bound.unwrap_or_else(|| 1.1 * orbit_jacobian_max(sys, &seg));
            let record = detect_lpf_reverse_hyperbolic_times(&cc, zeta, l)?;
            if record.certified {
                let k_last = record.indices.iter().map(|p| p.0).max().expect("certified");
                let xbar = cc.states[k_last].clone();
                let d0 = 0.9 * dmin.unwrap_or(f64::INFINITY);
                let radius = 0.25 * d0.min(1.0);
                let rs = ReturnSettings {
                    dt: cfg.dt,
                    max_return_time: cfg.max_return_time,
                };
                rep.hyperbolic_times_used = Some(thin(record));
                match locate_periodic_sink(sys, &xbar, radius, &rs) {
                    Ok(Some((p, rm, residual))) => {
                        let ok = residual <= FIXED_POINT_TOL && rm.spectral_radius < 1.0 - SPECTRAL_MARGIN;
                        rep.evidence.point = Some(p.iter().copied().collect());
                        rep.evidence.period = Some(rm.return_time);
                        rep.evidence.residual = Some(residual);
                        rep.evidence.contraction_rate = Some(rm.spectral_radius);
                        rep.evidence.exponent = Some(rm.spectral_radius.ln() / rm.return_time);
                        if !rm.certified {
                            rep.caveats.push("finite-difference return derivative disagrees with the LPF value".into());
                        }
                        rep.evidence.return_map = Some(rm);
                        if ok {
                            rep.verdict = Verdict::FlowPeriodicSinkBasin;
                            return Ok(rep);
                        }
                        rep.caveats.push("located section point failed the residual or spectral check".into());
                    }
                    Ok(None) => rep.caveats.push("return map iteration did not converge".into()),
                    Err(e) => rep.caveats.push(format!("return map: {e}")),
                }
            } else {
                rep.caveats.push(format!("no certified LPF reverse hyperbolic times: {}", record.note));
                rep.hyperbolic_times_used = Some(thin(record));
            }
        }
    }
    // (iv) conorm contraction: source analysis of the reversed field.
    if allow_source {
        if let Some((_, ie)) = &sect {
            if ie.limsup_estimate < -thr {
                let src = classify_source(sys, x0, cfg)?;
                if matches!(src.verdict, Verdict::FlowSource) {
                    return Ok(src);
                }
                rep.caveats.push(format!("reversed-field analysis: {}", src.verdict.name()));
            }
        }
    }
    Ok(rep)
}

fn orbit_jacobian_max(sys: &SmoothSystem, seg: &TrajectorySegment) -> f64 {
    seg.states.iter().map(|x| op_norm(&sys.jacobian(x))).fold(0.0, f64::max)
}

/// End-to-end classification of the orbit of x0.
pub fn classify_trajectory(sys: &SmoothSystem, x0: &DVector<f64>, cfg: &ClassifyConfig) -> Result<ClassificationReport> {
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    if !(cfg.dt > 0.0) || cfg.horizon.is_some_and(|h| !(h > 0.0)) {
        return Err(Error::Input("need positive dt and horizon".into()));
    }
    match sys.kind {
        SystemKind::Map => classify_map(sys, x0, cfg, true),
        SystemKind::VectorField => classify_flow(sys, x0, cfg, true),
    }
}

/// Cell-center grid over a box, row-major with the first coordinate fastest.
pub fn grid_points(bx: &[(f64, f64)], counts: &[usize]) -> Result<Vec<DVector<f64>>> {
    if bx.len() != counts.len() || counts.iter().any(|&c| c == 0) {
        return Err(Error::Input("grid counts must match the box dimension and be positive".into()));
    }
    let total: usize = counts.iter().product();
    let d = bx.len();
    Ok((0..total)
        .map(|idx| {
            let mut rem = idx;
            DVector::from_fn(d, |i, _| {
                let k = rem % counts[i];
                rem /= counts[i];
                let (lo, hi) = bx[i];
                lo + (hi - lo) * (k as f64 + 0.5) / counts[i] as f64
            })
        })
        .collect())
}

/// Classifies every point on a worker pool; output order follows the input.
/// Cells whose classification errors are reported as inconclusive.
pub fn classify_grid(
    sys: &SmoothSystem,
    points: &[DVector<f64>],
    cfg: &ClassifyConfig,
    threads: Option<usize>,
) -> Result<Vec<ClassificationReport>> {
    let run = || {
        points
            .par_iter()
            .map(|x| {
                classify_trajectory(sys, x, cfg).unwrap_or_else(|e| {
                    let mut r = ClassificationReport::new(sys, x);
                    r.caveats.push(format!("error: {e}"));
                    r
                })
            })
            .collect::<Vec<_>>()
    };
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}
