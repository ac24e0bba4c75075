//! Finite-time exponent averages, (reverse) hyperbolic times for maps and for
//! the linear Poincaré flow, and contracting-ball constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{SmoothSystem, SystemKind, TrajectorySegment};
use crate::linalg::{op_norm, renormalize_pow2, singular_values};
use crate::lpf::{log_norm_between, LpfCocycle};
use crate::pliss::{flow_pliss_set, reverse_pliss_times};

/// Safety factor applied to the log budget of the contracting-ball ratio test.
pub const SAFETY_FACTOR: f64 = 0.9;
/// Cap on LPF candidates re-verified by full matrix products (normal dimension ≥ 2).
pub const MAX_MATRIX_CERTIFICATIONS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Running averages n⁻¹ Σ_{j<n} ln‖Df^k(f^{kj}x)‖ (or the inverse analogue).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentSeries {
    pub k: usize,
    pub direction: Direction,
    pub block_logs: Vec<f64>,
    pub partial_averages: Vec<f64>,
    pub liminf_estimate: f64,
    pub limsup_estimate: f64,
    /// Range of n (1-based counts of blocks) over which extremes are taken.
    pub window: (usize, usize),
}

/// Per-step logs a_j = ln‖Df(f^j x)‖.
pub fn step_logs(orbit: &TrajectorySegment) -> Result<Vec<f64>> {
    let steps = orbit.step_jacobians.as_ref().ok_or(Error::MissingFundamentals)?;
    Ok(steps.iter().map(|j| op_norm(j).ln()).collect())
}

/// Block exponents over the second half of the available blocks.
pub fn block_exponent_series(orbit: &TrajectorySegment, k: usize, direction: Direction) -> Result<ExponentSeries> {
    let steps = orbit.step_jacobians.as_ref().ok_or(Error::MissingFundamentals)?;
    let nb = if k == 0 { 0 } else { steps.len() / k };
    block_exponent_series_window(orbit, k, direction, (nb / 2).max(1), nb)
}

/// Block exponents with extremes taken over averages n ∈ [from, to].
pub fn block_exponent_series_window(
    orbit: &TrajectorySegment,
    k: usize,
    direction: Direction,
    from: usize,
    to: usize,
) -> Result<ExponentSeries> {
    let steps = orbit.step_jacobians.as_ref().ok_or(Error::MissingFundamentals)?;
    if k == 0 || orbit.len() < 2 * k {
        return Err(Error::Input(format!("need k >= 1 and at least 2k = {} states", 2 * k)));
    }
    let nb = steps.len() / k;
    let d = orbit.dim();
    let mut block_logs = Vec::with_capacity(nb);
    for j in 0..nb {
        let mut m = DMatrix::identity(d, d);
        let mut ls = 0.0;
        for s in &steps[j * k..(j + 1) * k] {
            m = s * m;
            ls += renormalize_pow2(&mut m);
        }
        let sv = singular_values(&m);
        let val = match direction {
            Direction::Forward => sv[0].ln() + ls,
            Direction::Inverse => {
                let smin = sv[sv.len() - 1];
                if !(smin > 0.0) {
                    return Err(Error::NonInvertible { index: j });
                }
                -(smin.ln() + ls)
            }
        };
        block_logs.push(val);
    }
    let mut partial_averages = Vec::with_capacity(nb);
    let mut acc = 0.0;
    for (n, v) in block_logs.iter().enumerate() {
        acc += v;
        partial_averages.push(acc / (n + 1) as f64);
    }
    let from = from.clamp(1, nb);
    let to = to.clamp(from, nb);
    let w = &partial_averages[from - 1..to];
    Ok(ExponentSeries {
        k,
        direction,
        block_logs,
        liminf_estimate: w.iter().copied().fold(f64::INFINITY, f64::min),
        limsup_estimate: w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        partial_averages,
        window: (from, to),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperbolicKind {
    ReverseContracting,
    ForwardExpanding,
    LpfReverse,
    LpfForward,
}

/// Hyperbolic times (τ, horizon) at rate ζ, each re-verified from raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicTimeRecord {
    pub kind: HyperbolicKind,
    pub zeta: f64,
    pub times: Vec<(f64, f64)>,
    /// Sample indices matching `times`.
    pub indices: Vec<(usize, usize)>,
    pub certified: bool,
    pub theta: f64,
    pub guarantee_active: bool,
    /// Measure (flows) or count (maps) of the certified set.
    pub measure: f64,
    /// Candidates dropped by re-verification (or not checked, see `note`).
    pub rejected: usize,
    pub note: String,
}

impl HyperbolicTimeRecord {
    pub fn empty(kind: HyperbolicKind, zeta: f64, note: impl Into<String>) -> Self {
        HyperbolicTimeRecord {
            kind,
            zeta,
            times: Vec::new(),
            indices: Vec::new(),
            certified: false,
            theta: 0.0,
            guarantee_active: false,
            measure: 0.0,
            rejected: 0,
            note: note.into(),
        }
    }

    /// Union of two records of the same kind and rate, sorted by (τ, horizon).
    pub fn merge(mut self, other: HyperbolicTimeRecord) -> Self {
        let mut pairs: Vec<((usize, usize), (f64, f64))> =
            self.indices.iter().copied().zip(self.times.iter().copied()).collect();
        pairs.extend(other.indices.iter().copied().zip(other.times.iter().copied()));
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        self.indices = pairs.iter().map(|p| p.0).collect();
        self.times = pairs.iter().map(|p| p.1).collect();
        self.certified = self.certified && other.certified || (self.times.is_empty() && other.certified);
        self.certified = !self.times.is_empty() && self.certified;
        self.measure = self.times.len() as f64;
        self.rejected += other.rejected;
        self
    }
}

/// Π_{i=h}^{h+L−1} e^{a_i} ≤ e^{−ζL/2} for every 1 ≤ L ≤ m − h.
fn map_time_certified(a: &[f64], h: usize, m: usize, zeta: f64) -> bool {
    let mut s = 0.0;
    for (l, v) in a[h..m].iter().enumerate() {
        s += v;
        let bound = -0.5 * zeta * (l + 1) as f64;
        if s > bound + 1e-9 * (1.0 + bound.abs()) {
            return false;
        }
    }
    true
}

/// Reverse hyperbolic times along a map orbit below horizon m, from the
/// per-step logs a_j = ln‖Df(f^j x)‖. Pliss constants: c2 = ζ, c1 = ζ/2 on
/// the sequence −a_j, H = −ln inf‖Df‖ (taken from `h_bound` or the series).
pub fn detect_reverse_hyperbolic_times_map(
    logs: &[f64],
    zeta: f64,
    m: usize,
    h_bound: Option<f64>,
) -> Result<HyperbolicTimeRecord> {
    if !(zeta > 0.0) {
        return Err(Error::Input("zeta must be positive".into()));
    }
    if m == 0 || m > logs.len() {
        return Err(Error::Input(format!("horizon {m} outside 1..={}", logs.len())));
    }
    let b: Vec<f64> = logs[..m].iter().map(|v| -v).collect();
    let c2 = zeta;
    let c1 = 0.5 * zeta;
    let h = h_bound
        .unwrap_or_else(|| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .max(c2);
    let r = reverse_pliss_times(&b, c1, c2, h)?;
    let mut indices = Vec::new();
    let mut rejected = 0;
    for &t in &r.indices {
        if map_time_certified(logs, t, m, zeta) {
            indices.push((t, m));
        } else {
            rejected += 1;
        }
    }
    Ok(HyperbolicTimeRecord {
        kind: HyperbolicKind::ReverseContracting,
        zeta,
        times: indices.iter().map(|&(t, m)| (t as f64, m as f64)).collect(),
        certified: !indices.is_empty(),
        measure: indices.len() as f64,
        indices,
        theta: r.theta,
        guarantee_active: r.guarantee_active,
        rejected,
        note: String::new(),
    })
}

/// Index range of the uniform part of the cocycle grid.
fn uniform_len(cocycle: &LpfCocycle) -> usize {
    let n = cocycle.len();
    if n >= 3 {
        let h = cocycle.spacing();
        let last = cocycle.times[n - 1] - cocycle.times[n - 2];
        if (last - h).abs() > 1e-9 * h {
            return n - 1;
        }
    }
    n
}

/// ln‖P at x_τ over (s − τ)‖ ≤ −(ζ/2)(s − τ) + 1e−9 for all sampled s in (τ, T].
pub fn certify_lpf_time(cocycle: &LpfCocycle, tau: usize, horizon: usize, zeta: f64) -> Result<bool> {
    for s in tau + 1..=horizon {
        let dt = cocycle.times[s] - cocycle.times[tau];
        if log_norm_between(cocycle, tau, s - tau)? > -0.5 * zeta * dt + 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

fn certify_scalar(cocycle: &LpfCocycle, n: usize, zeta: f64) -> Vec<bool> {
    // Normal dimension 1: the cocycle is multiplicative, so the condition is a
    // suffix-maximum test on ln|P_s| + (ζ/2) s.
    let g: Vec<f64> = (0..n)
        .map(|s| cocycle.log_norms[s] + 0.5 * zeta * cocycle.times[s])
        .collect();
    let mut ok = vec![false; n];
    let mut suffix = f64::NEG_INFINITY;
    for k in (0..n).rev() {
        ok[k] = suffix <= g[k] + 1e-9;
        suffix = suffix.max(g[k]);
    }
    ok
}

/// Reverse hyperbolic times of the LPF at rate ζ over the cocycle horizon.
/// `l_bound` is L = sup‖DG‖ (used as A = −L in the Pliss step).
pub fn detect_lpf_reverse_hyperbolic_times(cocycle: &LpfCocycle, zeta: f64, l_bound: f64) -> Result<HyperbolicTimeRecord> {
    if !(zeta > 0.0) {
        return Err(Error::Input("zeta must be positive".into()));
    }
    let n = uniform_len(cocycle);
    if n < 2 {
        return Ok(HyperbolicTimeRecord::empty(HyperbolicKind::LpfReverse, zeta, "too few samples"));
    }
    let t_end = cocycle.times[n - 1];
    if cocycle.log_norms[n - 1] > -zeta * t_end {
        return Ok(HyperbolicTimeRecord::empty(
            HyperbolicKind::LpfReverse,
            zeta,
            format!("ln‖P^T‖ = {} exceeds -zeta*T = {}", cocycle.log_norms[n - 1], -zeta * t_end),
        ));
    }
    let times = &cocycle.times[..n];
    let r = flow_pliss_set(times, &cocycle.log_norms[..n], -zeta, 0.25 * zeta, Some(-l_bound))?;
    let candidates: Vec<usize> = r.indices.iter().copied().filter(|&k| k + 1 < n).collect();
    let step = cocycle.spacing();
    let scalar = cocycle.matrices[0].nrows() == 1;
    let mut accepted = Vec::new();
    let mut rejected = 0;
    let mut note = String::new();
    if scalar {
        let ok = certify_scalar(cocycle, n, zeta);
        for &k in &candidates {
            if ok[k] {
                accepted.push(k);
            } else {
                rejected += 1;
            }
        }
    } else {
        let stride = (candidates.len() / MAX_MATRIX_CERTIFICATIONS).max(1);
        if stride > 1 {
            note = format!("re-verified every {stride}-th of {} candidates", candidates.len());
        }
        for (i, &k) in candidates.iter().enumerate() {
            if i % stride != 0 {
                rejected += 1;
                continue;
            }
            if certify_lpf_time(cocycle, k, n - 1, zeta)? {
                accepted.push(k);
            } else {
                rejected += 1;
            }
        }
    }
    Ok(HyperbolicTimeRecord {
        kind: HyperbolicKind::LpfReverse,
        zeta,
        times: accepted.iter().map(|&k| (cocycle.times[k], t_end)).collect(),
        indices: accepted.iter().map(|&k| (k, n - 1)).collect(),
        certified: !accepted.is_empty(),
        theta: r.theta,
        guarantee_active: r.guarantee_active,
        measure: accepted.len() as f64 * step,
        rejected,
        note,
    })
}

/// Sliding post-filter: every sample s in (τ_min, T) re-certified at rate ζ/2
/// (contraction e^{−ζ/4} per unit time).
pub fn slide_lpf_times(record: &HyperbolicTimeRecord, cocycle: &LpfCocycle) -> Result<HyperbolicTimeRecord> {
    let Some(&(first, horizon)) = record.indices.first() else {
        return Ok(HyperbolicTimeRecord::empty(HyperbolicKind::LpfReverse, 0.5 * record.zeta, "nothing to slide"));
    };
    let zeta = 0.5 * record.zeta;
    let scalar = cocycle.matrices[0].nrows() == 1;
    let ok = if scalar { Some(certify_scalar(cocycle, horizon + 1, zeta)) } else { None };
    let mut accepted = Vec::new();
    let mut rejected = 0;
    for s in first + 1..horizon {
        let pass = match &ok {
            Some(v) => v[s],
            None => certify_lpf_time(cocycle, s, horizon, zeta)?,
        };
        if pass {
            accepted.push(s);
        } else {
            rejected += 1;
        }
    }
    Ok(HyperbolicTimeRecord {
        kind: HyperbolicKind::LpfReverse,
        zeta,
        times: accepted.iter().map(|&k| (cocycle.times[k], cocycle.times[horizon])).collect(),
        indices: accepted.iter().map(|&k| (k, horizon)).collect(),
        certified: !accepted.is_empty(),
        theta: record.theta,
        guarantee_active: record.guarantee_active,
        measure: accepted.len() as f64 * cocycle.spacing(),
        rejected,
        note: "sliding post-filter".into(),
    })
}

/// δ₁ and λ₁ = √λ of the forward contracting-ball construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractingBall {
    pub delta1: f64,
    pub lambda1: f64,
    pub diameter: f64,
    pub min_df: f64,
    pub max_df: f64,
    pub probe_count: usize,
    /// Dyadic exponent k with δ₁ = 2^{−k}·diameter.
    pub dyadic_exponent: u32,
}

/// Largest δ₁ ∈ {2⁰,…,2⁻²⁰}·diam such that probe pairs closer than δ₁ have
/// ‖Df(x)‖/‖Df(y)‖ ≤ λ₁^{−0.9}.
pub fn contracting_ball_radius(sys: &SmoothSystem, lambda: f64, probes: &[DVector<f64>]) -> Result<ContractingBall> {
    if sys.kind != SystemKind::Map {
        return Err(Error::Input("contracting balls are defined for maps".into()));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Input(format!("lambda must lie in (0,1), got {lambda}")));
    }
    if probes.len() < 2 {
        return Err(Error::Input("need at least two probe points".into()));
    }
    let norms: Vec<f64> = probes.iter().map(|p| op_norm(&sys.jacobian(p))).collect();
    let min_df = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_df = norms.iter().copied().fold(0.0, f64::max);
    if !(min_df > 0.0) {
        return Err(Error::Hypothesis("min ‖Df‖ on the probe grid is 0".into()));
    }
    let lambda1 = lambda.sqrt();
    let log_budget = -SAFETY_FACTOR * lambda1.ln();
    let logs: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let mut diameter: f64 = 0.0;
    let mut closest_bad = f64::INFINITY;
    for i in 0..probes.len() {
        for j in (i + 1)..probes.len() {
            let d = sys.topo.distance(&probes[i], &probes[j]);
            diameter = diameter.max(d);
            if (logs[i] - logs[j]).abs() > log_budget {
                closest_bad = closest_bad.min(d);
            }
        }
    }
    if !(diameter > 0.0) {
        return Err(Error::Input("probe points coincide".into()));
    }
    for k in 0..=20u32 {
        let r = diameter * 2f64.powi(-(k as i32));
        if r <= closest_bad {
            return Ok(ContractingBall {
                delta1: r,
                lambda1,
                diameter,
                min_df,
                max_df,
                probe_count: probes.len(),
                dyadic_exponent: k,
            });
        }
    }
    Err(Error::Hypothesis(format!(
        "ratio bound fails at every dyadic radius down to 2^-20 * {diameter}"
    )))
}
