//! Linear Poincaré Flow in transported normal frames, its operator-norm
//! logs, the infinitesimal generators, and the additivity identity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{interval_derivative, rk4_step_variational, SmoothSystem, SystemKind, TrajectorySegment};
use crate::geometry::{normal_frame, orthogonal_projection, transport_frame, NormalFrame};
use crate::linalg::{max_symmetric_part_eigenvalue, renormalize_pow2, singular_values};

/// ‖G‖ below this is treated as a singularity.
pub const REGULAR_THRESHOLD: f64 = 1e-8;

/// LPF matrices along a trajectory. The true matrix at k is
/// `exp(log_scales[k]) * matrices[k]`.
#[derive(Debug, Clone)]
pub struct LpfCocycle {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub frames: Vec<NormalFrame>,
    pub matrices: Vec<DMatrix<f64>>,
    pub log_scales: Vec<f64>,
    pub log_norms: Vec<f64>,
    pub log_conorms: Vec<f64>,
    /// Sample indices where frame transport fell back to a fresh frame.
    pub resets: Vec<usize>,
}

impl LpfCocycle {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// True P_k (may overflow for long horizons).
    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        &self.matrices[k] * self.log_scales[k].exp()
    }

    /// The first n samples.
    pub fn prefix(&self, n: usize) -> LpfCocycle {
        let n = n.min(self.len());
        LpfCocycle {
            times: self.times[..n].to_vec(),
            states: self.states[..n].to_vec(),
            frames: self.frames[..n].to_vec(),
            matrices: self.matrices[..n].to_vec(),
            log_scales: self.log_scales[..n].to_vec(),
            log_norms: self.log_norms[..n].to_vec(),
            log_conorms: self.log_conorms[..n].to_vec(),
            resets: self.resets.iter().copied().filter(|&k| k < n).collect(),
        }
    }

    /// Uniform sample spacing of the first n−1 samples (the last one may be short).
    pub fn spacing(&self) -> f64 {
        if self.times.len() < 2 {
            return 0.0;
        }
        self.times[1] - self.times[0]
    }
}

/// P_k = Q_kᵀ Z_k Q_0 along the segment.
pub fn lpf_cocycle(seg: &TrajectorySegment, sys: &SmoothSystem) -> Result<LpfCocycle> {
    if sys.kind != SystemKind::VectorField {
        return Err(Error::Input("the linear Poincaré flow needs a vector field".into()));
    }
    if sys.dim() < 2 {
        return Err(Error::Input("the linear Poincaré flow needs dimension >= 2".into()));
    }
    // P is composed interval by interval so decaying normal directions stay resolved.
    seg.fundamentals.as_ref().ok_or(Error::MissingFundamentals)?;
    let n = seg.len();
    let mut frames = Vec::with_capacity(n);
    let mut matrices = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut log_norms = Vec::with_capacity(n);
    let mut log_conorms = Vec::with_capacity(n);
    let mut resets = Vec::new();
    for k in 0..n {
        let g = sys.eval(&seg.states[k]);
        let gn = g.norm();
        if !(gn >= REGULAR_THRESHOLD) {
            return Err(Error::NearSingularity { index: k, norm: gn });
        }
        let frame = if k == 0 {
            normal_frame(&g)?
        } else {
            let t = transport_frame(&frames[k - 1], &g)?;
            if t.reset {
                resets.push(k);
            }
            t.frame
        };
        let (mut p, mut ls) = match (matrices.last(), log_scales.last()) {
            (Some(prev), Some(&prev_ls)) => {
                let dur = seg.times[k] - seg.times[k - 1];
                let (w, ws) = interval_derivative(sys, &seg.states[k - 1], dur, seg.step)?;
                let inc = frame.basis.transpose() * w * &frames[k - 1].basis;
                (inc * prev, prev_ls + ws)
            }
            _ => (DMatrix::identity(sys.dim() - 1, sys.dim() - 1), 0.0),
        };
        ls += renormalize_pow2(&mut p);
        let sv = singular_values(&p);
        log_norms.push(sv[0].ln() + ls);
        log_conorms.push(sv[sv.len() - 1].ln() + ls);
        matrices.push(p);
        log_scales.push(ls);
        frames.push(frame);
    }
    Ok(LpfCocycle {
        times: seg.times.clone(),
        states: seg.states.clone(),
        frames,
        matrices,
        log_scales,
        log_norms,
        log_conorms,
        resets,
    })
}

fn regular_g(sys: &SmoothSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let g = sys.eval(x);
    if !(g.norm() >= REGULAR_THRESHOLD) {
        return Err(Error::Input(format!("‖G(x)‖ = {:e} below regular threshold", g.norm())));
    }
    Ok(g)
}

/// ⟨O_x DG_x v, v⟩ for a unit v normal to G(x).
pub fn generator_d(sys: &SmoothSystem, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let g = regular_g(sys, x)?;
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Input("v must be a unit vector".into()));
    }
    if v.dot(&g).abs() > 1e-8 * g.norm() {
        return Err(Error::Input("v must be orthogonal to G(x)".into()));
    }
    let o = orthogonal_projection(&g)?;
    Ok((o * sys.jacobian(x) * v).dot(v))
}

/// One-sided difference quotients (D₋, D₊) of t ↦ ln‖P^t v‖ at t = 0 from a
/// single RK4 step of size h backward and forward. Diagnostic only: for C¹
/// fields both agree with `generator_d` up to O(h).
pub fn generator_one_sided(sys: &SmoothSystem, x: &DVector<f64>, v: &DVector<f64>, h: f64) -> Result<(f64, f64)> {
    generator_d(sys, x, v)?;
    if !(h > 0.0 && h <= 0.1) {
        return Err(Error::Input(format!("difference step h = {h} outside (0, 0.1]")));
    }
    let z = DMatrix::identity(sys.dim(), sys.dim());
    let log_growth = |step: f64| -> Result<f64> {
        let (y, w) = rk4_step_variational(sys, x, &z, step);
        let o = orthogonal_projection(&regular_g(sys, &y)?)?;
        Ok((o * w * v).norm().ln())
    };
    Ok((-log_growth(-h)? / h, log_growth(h)? / h))
}

/// λ_max of the symmetric part of Qᵀ DG_x Q.
pub fn generator_d_sup(sys: &SmoothSystem, x: &DVector<f64>) -> Result<f64> {
    let g = regular_g(sys, x)?;
    let q = normal_frame(&g)?.basis;
    let s = q.transpose() * sys.jacobian(x) * &q;
    Ok(max_symmetric_part_eigenvalue(&s))
}

/// ⟨DG_x v, v⟩ for a unit v.
pub fn generator_dg(sys: &SmoothSystem, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Input("v must be a unit vector".into()));
    }
    Ok((sys.jacobian(x) * v).dot(v))
}

/// λ_max((DG_x + DG_xᵀ)/2).
pub fn generator_dg_sup(sys: &SmoothSystem, x: &DVector<f64>) -> f64 {
    max_symmetric_part_eigenvalue(&sys.jacobian(x))
}

/// Composite Simpson on a uniform grid; a 3/8 panel closes odd interval counts.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        2 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        3 => 3.0 * h / 8.0 * (values[0] + 3.0 * values[1] + 3.0 * values[2] + values[3]),
        _ => {
            let even = if n % 2 == 0 { n } else { n - 3 };
            let mut s = values[0] + values[even];
            for (i, v) in values.iter().enumerate().take(even).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            let mut total = s * h / 3.0;
            if even < n {
                total += simpson(&values[even..], h);
            }
            total
        }
    }
}

/// |ln‖P_k v0‖ − ∫_0^{t_k} D(Φ̂_s v0) ds| with Φ̂ pushed through the stored P.
pub fn additivity_residual(cocycle: &LpfCocycle, sys: &SmoothSystem, v0: &DVector<f64>, k: usize) -> Result<f64> {
    if k >= cocycle.len() {
        return Err(Error::Input(format!("index {k} beyond cocycle length {}", cocycle.len())));
    }
    let m = cocycle.matrices[0].nrows();
    if v0.len() != m || (v0.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Input(format!("v0 must be a unit vector of length {m}")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let h = cocycle.spacing();
    if k + 1 == cocycle.len() && k >= 2 {
        let last = cocycle.times[k] - cocycle.times[k - 1];
        if (last - h).abs() > 1e-9 * h {
            return Err(Error::Input("additivity needs a uniform grid up to index k".into()));
        }
    }
    let mut integrand = Vec::with_capacity(k + 1);
    for s in 0..=k {
        let w = &cocycle.matrices[s] * v0;
        let amb = &cocycle.frames[s].basis * (&w / w.norm());
        let x = &cocycle.states[s];
        let dg = sys.jacobian(x);
        integrand.push((dg * &amb).dot(&amb));
    }
    let integral = simpson(&integrand, h);
    let lhs = (&cocycle.matrices[k] * v0).norm().ln() + cocycle.log_scales[k];
    Ok((lhs - integral).abs())
}

/// Finite-horizon estimates of ln‖P^T‖/T over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionalExponents {
    pub liminf_estimate: f64,
    pub limsup_estimate: f64,
    pub window: (f64, f64),
    pub series: Vec<(f64, f64)>,
    pub caveat: String,
}

fn exponent_window(times: &[f64], logs: &[f64], window: (f64, f64), label: &str) -> Result<SectionalExponents> {
    let (t0, t1) = window;
    if !(t0 >= 1.0) {
        return Err(Error::Input("window must start at T0 >= 1".into()));
    }
    let t_last = *times.last().unwrap_or(&0.0);
    if t1 > t_last + 1e-9 {
        return Err(Error::Input(format!("window end {t1} beyond trajectory length {t_last}")));
    }
    let series: Vec<(f64, f64)> = times
        .iter()
        .zip(logs)
        .filter(|(t, _)| **t >= t0 - 1e-12 && **t <= t1 + 1e-12)
        .map(|(t, l)| (*t, l / t))
        .collect();
    if series.is_empty() {
        return Err(Error::Input("empty window".into()));
    }
    let liminf = series.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let limsup = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SectionalExponents {
        liminf_estimate: liminf,
        limsup_estimate: limsup,
        window,
        series,
        caveat: format!("finite-horizon {label} over T in [{t0}, {t1}]; not an asymptotic limit"),
    })
}

/// min and max of ln‖P_k‖/t_k over t_k ∈ [T0, T1].
pub fn sectional_exponents(cocycle: &LpfCocycle, window: (f64, f64)) -> Result<SectionalExponents> {
    exponent_window(&cocycle.times, &cocycle.log_norms, window, "estimate of ln‖P^T‖/T")
}

/// The same for ln‖(P^T)⁻¹‖/T = −ln σ_min(P^T)/T.
pub fn inverse_sectional_exponents(cocycle: &LpfCocycle, window: (f64, f64)) -> Result<SectionalExponents> {
    let inv: Vec<f64> = cocycle.log_conorms.iter().map(|v| -v).collect();
    exponent_window(&cocycle.times, &inv, window, "estimate of ln‖(P^T)^-1‖/T")
}

/// Same statistic for the full derivative, ln‖Dφ_T‖/T.
pub fn full_derivative_exponents(seg: &TrajectorySegment, window: (f64, f64)) -> Result<SectionalExponents> {
    let logs: Vec<f64> = (0..seg.len())
        .map(|k| seg.log_norm_fundamental(k))
        .collect::<Result<_>>()?;
    exponent_window(&seg.times, &logs, window, "estimate of ln‖Dφ_T‖/T")
}

/// ln‖P_{k+j} P_k⁻¹‖, the log-norm of the LPF from x_k over j samples.
pub fn log_norm_between(cocycle: &LpfCocycle, k: usize, j: usize) -> Result<f64> {
    let pk = &cocycle.matrices[k];
    let inv = pk
        .clone()
        .try_inverse()
        .ok_or(Error::NonInvertible { index: k })?;
    let m = &cocycle.matrices[k + j] * inv;
    Ok(singular_values(&m)[0].ln() + cocycle.log_scales[k + j] - cocycle.log_scales[k])
}
