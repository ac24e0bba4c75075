//! Pliss times of finite sequences and Pliss sets of sampled functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Open-set tolerance for comparisons of G in the continuous case.
pub const OPEN_SET_TOL: f64 = 1e-12;

/// Selected indices (discrete) or grid points and intervals (continuous).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlissResult {
    /// Discrete: 1-based indices n. Continuous: grid indices k of t_k.
    pub indices: Vec<usize>,
    /// Continuous only: maximal runs of consecutive qualifying grid points as [t_start, t_end].
    pub intervals: Vec<(f64, f64)>,
    pub theta: f64,
    pub guarantee_active: bool,
    /// ℓ (discrete) or count·step (continuous).
    pub count_or_measure: f64,
    /// N (discrete) or T (continuous).
    pub extent: f64,
    /// Continuous only: the lower bound A that was used.
    pub lower_slope: Option<f64>,
}

fn check_discrete(a: &[f64], c1: f64, c2: f64) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Input("Pliss selection needs N >= 1".into()));
    }
    if !(c1 < c2) {
        return Err(Error::Input(format!("need c1 < c2, got c1 = {c1}, c2 = {c2}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("sequence contains non-finite values".into()));
    }
    Ok(())
}

fn discrete_guarantee(a: &[f64], c1: f64, c2: f64, h: f64) -> bool {
    let n = a.len() as f64;
    let sum: f64 = a.iter().sum();
    c1 > 0.0 && c2 <= h && h > c1 && sum >= c2 * n && a.iter().all(|&v| v <= h)
}

/// Indices n in 1..=N with Σ_{j=n'+1}^{n} a_j ≥ c1(n − n') for every n' < n.
pub fn pliss_times(a: &[f64], c1: f64, c2: f64, h: f64) -> Result<PlissResult> {
    check_discrete(a, c1, c2)?;
    let mut indices = Vec::new();
    let mut s = 0.0;
    let mut running_max = 0.0;
    for (i, &v) in a.iter().enumerate() {
        s += v - c1;
        if s >= running_max {
            indices.push(i + 1);
            running_max = s;
        }
    }
    let theta = (c2 - c1) / (h - c1);
    Ok(PlissResult {
        count_or_measure: indices.len() as f64,
        indices,
        intervals: Vec::new(),
        theta,
        guarantee_active: discrete_guarantee(a, c1, c2, h),
        extent: a.len() as f64,
        lower_slope: None,
    })
}

/// Pliss selection on the reversed sequence with indices mapped back by
/// n ↦ N − n. A returned h satisfies Σ_{i=h}^{h+L−1} a_i ≥ c1·L (0-based)
/// for every 1 ≤ L ≤ N − h.
pub fn reverse_pliss_times(a: &[f64], c1: f64, c2: f64, h: f64) -> Result<PlissResult> {
    let rev: Vec<f64> = a.iter().rev().copied().collect();
    let mut r = pliss_times(&rev, c1, c2, h)?;
    let n = a.len();
    let mut mapped: Vec<usize> = r.indices.iter().map(|&k| n - k).collect();
    mapped.reverse();
    r.indices = mapped;
    Ok(r)
}

/// A from sampled difference quotients minus a one-step Lipschitz margin.
pub fn default_lower_slope(h_samples: &[f64], step: f64) -> f64 {
    let dq: Vec<f64> = h_samples.windows(2).map(|w| (w[1] - w[0]) / step).collect();
    let min_dq = dq.iter().copied().fold(f64::INFINITY, f64::min);
    let margin = dq
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    min_dq - margin
}

/// Uniform grid spacing of `times`, or an error.
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Input("need at least 2 samples".into()));
    }
    let t_end = times[times.len() - 1];
    let step = (t_end - times[0]) / (times.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::Input("grid must be increasing".into()));
    }
    for (k, &t) in times.iter().enumerate() {
        let expected = times[0] + k as f64 * step;
        if (t - expected).abs() > 1e-9 * step.max(1.0) {
            return Err(Error::Input(format!("non-uniform grid at sample {k}")));
        }
    }
    Ok(step)
}

/// Grid points t_k with H(s) − H(t_k) < (c+eps)(s − t_k) for all later samples s.
pub fn flow_pliss_set(times: &[f64], h: &[f64], c: f64, eps: f64, lower_slope: Option<f64>) -> Result<PlissResult> {
    if times.len() != h.len() {
        return Err(Error::Input("times and samples differ in length".into()));
    }
    let step = uniform_step(times)?;
    if times[0].abs() > 1e-12 {
        return Err(Error::Input("grid must start at t = 0".into()));
    }
    if h[0].abs() > 1e-9 {
        return Err(Error::Input(format!("H(0) = {} is not 0", h[0])));
    }
    if !(eps > 0.0) {
        return Err(Error::Input("eps must be positive".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("samples contain non-finite values".into()));
    }
    let n = h.len();
    let slope = c + eps;
    let g: Vec<f64> = times.iter().zip(h).map(|(t, v)| v - slope * t).collect();
    let mut qualifies = vec![false; n];
    let mut suffix_max = f64::NEG_INFINITY;
    for k in (0..n).rev() {
        qualifies[k] = g[k] + OPEN_SET_TOL > suffix_max;
        suffix_max = suffix_max.max(g[k]);
    }
    let indices: Vec<usize> = (0..n).filter(|&k| qualifies[k]).collect();
    let mut intervals = Vec::new();
    let mut k = 0;
    while k < n {
        if qualifies[k] {
            let start = k;
            while k + 1 < n && qualifies[k + 1] {
                k += 1;
            }
            intervals.push((times[start], times[k]));
        }
        k += 1;
    }
    let a = lower_slope.unwrap_or_else(|| default_lower_slope(h, step));
    let t_end = times[n - 1];
    let theta = eps / (slope - a);
    let min_dq = h
        .windows(2)
        .map(|w| (w[1] - w[0]) / step)
        .fold(f64::INFINITY, f64::min);
    let guarantee_active = h[n - 1] < c * t_end && slope > min_dq && min_dq > a && theta > 0.0;
    Ok(PlissResult {
        count_or_measure: indices.len() as f64 * step,
        indices,
        intervals,
        theta,
        guarantee_active,
        extent: t_end,
        lower_slope: Some(a),
    })
}
