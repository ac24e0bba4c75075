//! Systems, fixed-step RK4 integration with the variational equation, and
//! map iteration with chained Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_unchecked, ChartTopology};
use crate::linalg::{op_norm, renormalize_pow2};

pub const DEFAULT_DT: f64 = 1e-3;
pub const BLOW_UP_NORM: f64 = 1e12;
pub const FD_STEP: f64 = 1e-6;
/// Fundamentals are rescaled by a power of two when an entry leaves this band.
const RESCALE_HIGH: f64 = 1e100;
const RESCALE_LOW: f64 = 1e-100;

pub type FieldFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ValueJacobianFn = Arc<dyn Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Map,
    VectorField,
}

/// A map or vector field on a chart.
#[derive(Clone)]
pub struct SmoothSystem {
    pub name: String,
    pub kind: SystemKind,
    pub topo: ChartTopology,
    eval: FieldFn,
    jacobian: Option<JacobianFn>,
    value_and_jacobian: Option<ValueJacobianFn>,
    pub equilibria: Vec<DVector<f64>>,
    pub jacobian_bound: Option<f64>,
    /// Box on which `jacobian_bound` was estimated.
    pub sample_box: Option<Vec<(f64, f64)>>,
    inverse: Option<Arc<SmoothSystem>>,
}

impl fmt::Debug for SmoothSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothSystem")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("dimension", &self.topo.dimension)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("equilibria", &self.equilibria.len())
            .finish()
    }
}

impl SmoothSystem {
    pub fn new(name: impl Into<String>, kind: SystemKind, topo: ChartTopology, eval: FieldFn) -> Self {
        SmoothSystem {
            name: name.into(),
            kind,
            topo,
            eval,
            jacobian: None,
            value_and_jacobian: None,
            equilibria: Vec::new(),
            jacobian_bound: None,
            sample_box: None,
            inverse: None,
        }
    }

    pub fn with_jacobian(mut self, j: JacobianFn) -> Self {
        self.jacobian = Some(j);
        self
    }

    /// Combined evaluator used by `iterate` when computing both is cheaper together.
    pub fn with_value_and_jacobian(mut self, vj: ValueJacobianFn) -> Self {
        self.value_and_jacobian = Some(vj);
        self
    }

    pub fn with_equilibria(mut self, eq: Vec<DVector<f64>>) -> Self {
        self.equilibria = eq;
        self
    }

    pub fn with_jacobian_bound(mut self, l: f64) -> Self {
        self.jacobian_bound = Some(l);
        self
    }

    pub fn with_sample_box(mut self, b: Vec<(f64, f64)>) -> Self {
        self.sample_box = Some(b);
        self
    }

    pub fn with_inverse(mut self, inv: SmoothSystem) -> Self {
        self.inverse = Some(Arc::new(inv));
        self
    }

    pub fn dim(&self) -> usize {
        self.topo.dimension
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some() || self.value_and_jacobian.is_some()
    }

    /// Inverse map, when one was attached.
    pub fn inverse(&self) -> Option<&SmoothSystem> {
        self.inverse.as_deref()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }

    /// Analytic Jacobian, or central differences with step 1e−6.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(x);
        }
        if let Some(vj) = &self.value_and_jacobian {
            return vj(x).1;
        }
        self.fd_jacobian(x)
    }

    pub fn fd_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let col = (self.eval(&xp) - self.eval(&xm)) / (2.0 * FD_STEP);
            jac.set_column(j, &col);
        }
        jac
    }

    pub fn value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        if let Some(vj) = &self.value_and_jacobian {
            return vj(x);
        }
        (self.eval(x), self.jacobian(x))
    }

    /// The time-reversed field −G (vector fields only).
    pub fn reversed(&self) -> Result<SmoothSystem> {
        if self.kind != SystemKind::VectorField {
            return Err(Error::Input("time reversal applies to vector fields".into()));
        }
        let f = self.eval.clone();
        let mut out = SmoothSystem::new(
            format!("reversed({})", self.name),
            SystemKind::VectorField,
            self.topo.clone(),
            Arc::new(move |x: &DVector<f64>| -f(x)),
        );
        if self.has_analytic_jacobian() {
            let base = self.clone();
            out = out.with_jacobian(Arc::new(move |x: &DVector<f64>| -base.jacobian(x)));
        }
        out.equilibria = self.equilibria.clone();
        out.jacobian_bound = self.jacobian_bound;
        out.sample_box = self.sample_box.clone();
        Ok(out)
    }
}

/// Sampled orbit. Fundamentals are stored rescaled: the true matrix at sample
/// k is `exp(log_scales[k]) * fundamentals[k]`.
#[derive(Debug, Clone)]
pub struct TrajectorySegment {
    pub t0: f64,
    /// Spacing between stored samples.
    pub dt: f64,
    /// Integration step (equals `dt` unless samples are strided; 1 for maps).
    pub step: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub fundamentals: Option<Vec<DMatrix<f64>>>,
    pub log_scales: Vec<f64>,
    /// Per-step Jacobians Df(x_k) (maps only).
    pub step_jacobians: Option<Vec<DMatrix<f64>>>,
}

impl TrajectorySegment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty segment")
    }

    /// True fundamental matrix at sample k (may overflow for long horizons).
    pub fn fundamental(&self, k: usize) -> Result<DMatrix<f64>> {
        let f = self.fundamentals.as_ref().ok_or(Error::MissingFundamentals)?;
        Ok(&f[k] * self.log_scales[k].exp())
    }

    /// ln‖Z_k‖ computed without overflow.
    pub fn log_norm_fundamental(&self, k: usize) -> Result<f64> {
        let f = self.fundamentals.as_ref().ok_or(Error::MissingFundamentals)?;
        Ok(op_norm(&f[k]).ln() + self.log_scales[k])
    }
}

fn check_state(x: &DVector<f64>, t: f64) -> Result<()> {
    let n = x.norm();
    if n.is_nan() {
        return Err(Error::Numeric(format!("NaN state at t = {t}")));
    }
    if n > BLOW_UP_NORM || n.is_infinite() {
        return Err(Error::BlowUp { t, norm: n });
    }
    Ok(())
}

/// One classic RK4 step for the state alone.
pub fn rk4_step(sys: &SmoothSystem, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let k1 = sys.eval(x);
    let k2 = sys.eval(&(x + &k1 * (0.5 * h)));
    let k3 = sys.eval(&(x + &k2 * (0.5 * h)));
    let k4 = sys.eval(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step for the state and Ż = DG·Z with the same tableau.
pub fn rk4_step_variational(
    sys: &SmoothSystem,
    x: &DVector<f64>,
    z: &DMatrix<f64>,
    h: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (k1, j1) = sys.value_and_jacobian(x);
    let m1 = &j1 * z;
    let x2 = x + &k1 * (0.5 * h);
    let (k2, j2) = sys.value_and_jacobian(&x2);
    let m2 = &j2 * (z + &m1 * (0.5 * h));
    let x3 = x + &k2 * (0.5 * h);
    let (k3, j3) = sys.value_and_jacobian(&x3);
    let m3 = &j3 * (z + &m2 * (0.5 * h));
    let x4 = x + &k3 * h;
    let (k4, j4) = sys.value_and_jacobian(&x4);
    let m4 = &j4 * (z + &m3 * h);
    let xn = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let zn = z + (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
    (xn, zn)
}

/// Dφ over [0, duration] from x, integrated from the identity with steps of
/// at most `step`. Returns the rescaled matrix and its log scale.
pub fn interval_derivative(sys: &SmoothSystem, x: &DVector<f64>, duration: f64, step: f64) -> Result<(DMatrix<f64>, f64)> {
    let d = sys.dim();
    let mut z = DMatrix::identity(d, d);
    let mut scale = 0.0;
    if !(duration > 0.0) {
        return Ok((z, scale));
    }
    let (n, last) = step_plan(duration, step);
    let mut y = x.clone();
    for k in 0..n {
        let h = if k + 1 == n { last } else { step };
        let (yn, zn) = rk4_step_variational(sys, &y, &z, h);
        y = yn;
        z = zn;
        let amax = z.amax();
        if amax > RESCALE_HIGH || (amax < RESCALE_LOW && amax > 0.0) {
            scale += renormalize_pow2(&mut z);
        }
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite interval derivative".into()));
    }
    Ok((z, scale))
}

/// Integration options beyond the basic call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub variational: bool,
    /// Store every n-th step (the final state is always stored).
    pub record_every: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            dt: DEFAULT_DT,
            variational: false,
            record_every: 1,
        }
    }
}

/// Fixed-step RK4 from x0 over [0, T]; the last step is shortened to land on T.
pub fn integrate(
    sys: &SmoothSystem,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    with_variational: bool,
) -> Result<TrajectorySegment> {
    integrate_with(
        sys,
        x0,
        t_end,
        &IntegrateOptions {
            dt,
            variational: with_variational,
            record_every: 1,
        },
    )
}

/// Number of steps and the length of the final step for [0, T] at step dt.
pub fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let last = t_end - (n - 1) as f64 * dt;
    (n, last)
}

pub fn integrate_with(
    sys: &SmoothSystem,
    x0: &DVector<f64>,
    t_end: f64,
    opts: &IntegrateOptions,
) -> Result<TrajectorySegment> {
    if sys.kind != SystemKind::VectorField {
        return Err(Error::Input("integrate requires a vector field".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    let dt = opts.dt;
    if !(dt > 0.0) || !(t_end > 0.0) || !dt.is_finite() || !t_end.is_finite() {
        return Err(Error::Input(format!("need 0 < dt and 0 < T, got dt = {dt}, T = {t_end}")));
    }
    if dt > 0.1 {
        return Err(Error::Input(format!("dt = {dt} exceeds 0.1")));
    }
    if dt > t_end * (1.0 + 1e-12) {
        return Err(Error::Input(format!("dt = {dt} exceeds T = {t_end}")));
    }
    let every = opts.record_every.max(1);
    check_state(x0, 0.0)?;
    let (n, last) = step_plan(t_end, dt);
    let cap = n / every + 2;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    let mut funds = Vec::with_capacity(if opts.variational { cap } else { 0 });
    let mut scales = Vec::with_capacity(if opts.variational { cap } else { 0 });
    let d = sys.dim();
    let mut x = x0.clone();
    let mut z = DMatrix::identity(d, d);
    let mut scale = 0.0;
    times.push(0.0);
    states.push(x.clone());
    if opts.variational {
        funds.push(z.clone());
        scales.push(0.0);
    }
    for k in 0..n {
        let h = if k + 1 == n { last } else { dt };
        let t = if k + 1 == n { t_end } else { (k + 1) as f64 * dt };
        if opts.variational {
            let (xn, zn) = rk4_step_variational(sys, &x, &z, h);
            x = xn;
            z = zn;
            let amax = z.amax();
            if amax > RESCALE_HIGH || (amax < RESCALE_LOW && amax > 0.0) {
                scale += renormalize_pow2(&mut z);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite fundamental matrix at t = {t}")));
            }
        } else {
            x = rk4_step(sys, &x, h);
        }
        check_state(&x, t)?;
        if (k + 1) % every == 0 || k + 1 == n {
            times.push(t);
            states.push(x.clone());
            if opts.variational {
                funds.push(z.clone());
                scales.push(scale);
            }
        }
    }
    Ok(TrajectorySegment {
        t0: 0.0,
        dt: dt * every as f64,
        step: dt,
        times,
        states,
        fundamentals: if opts.variational { Some(funds) } else { None },
        log_scales: scales,
        step_jacobians: None,
    })
}

/// Orbit of a map: x_{k+1} = f(x_k) (periodic coordinates wrapped),
/// Z_{k+1} = Df(x_k)·Z_k.
pub fn iterate(sys: &SmoothSystem, x0: &DVector<f64>, n: usize, with_jacobians: bool) -> Result<TrajectorySegment> {
    if sys.kind != SystemKind::Map {
        return Err(Error::Input("iterate requires a map".into()));
    }
    if n == 0 {
        return Err(Error::Input("iterate needs n >= 1".into()));
    }
    if x0.len() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: x0.len(),
        });
    }
    check_state(x0, 0.0)?;
    let d = sys.dim();
    let mut states = Vec::with_capacity(n + 1);
    let mut funds = Vec::new();
    let mut scales = Vec::new();
    let mut steps = Vec::new();
    let mut x = wrap_unchecked(x0, &sys.topo);
    let mut z = DMatrix::identity(d, d);
    let mut scale = 0.0;
    states.push(x.clone());
    if with_jacobians {
        funds.push(z.clone());
        scales.push(0.0);
    }
    for k in 0..n {
        let next = if with_jacobians {
            let (fx, jx) = sys.value_and_jacobian(&x);
            z = &jx * &z;
            let amax = z.amax();
            if amax > RESCALE_HIGH || (amax < RESCALE_LOW && amax > 0.0) {
                scale += renormalize_pow2(&mut z);
            }
            steps.push(jx);
            fx
        } else {
            sys.eval(&x)
        };
        check_state(&next, (k + 1) as f64)?;
        x = wrap_unchecked(&next, &sys.topo);
        states.push(x.clone());
        if with_jacobians {
            funds.push(z.clone());
            scales.push(scale);
        }
    }
    Ok(TrajectorySegment {
        t0: 0.0,
        dt: 1.0,
        step: 1.0,
        times: (0..=n).map(|k| k as f64).collect(),
        states,
        fundamentals: if with_jacobians { Some(funds) } else { None },
        log_scales: scales,
        step_jacobians: if with_jacobians { Some(steps) } else { None },
    })
}

/// ‖Z_{k+j} − W_j·Z_k‖/‖Z_{k+j}‖ with W_j re-derived from x_k.
pub fn cocycle_residual(seg: &TrajectorySegment, sys: &SmoothSystem, k: usize, j: usize) -> Result<f64> {
    let funds = seg.fundamentals.as_ref().ok_or(Error::MissingFundamentals)?;
    if k + j >= seg.len() {
        return Err(Error::Input(format!("k + j = {} beyond segment length {}", k + j, seg.len())));
    }
    if j == 0 {
        return Ok(0.0);
    }
    let (w, w_scale) = match sys.kind {
        SystemKind::Map => {
            let steps = seg.step_jacobians.as_ref().ok_or(Error::MissingFundamentals)?;
            let d = sys.dim();
            let mut w = DMatrix::identity(d, d);
            for s in &steps[k..k + j] {
                w = s * w;
            }
            (w, 0.0)
        }
        SystemKind::VectorField => {
            let every = ((seg.dt / seg.step).round() as usize).max(1);
            let span = seg.times[k + j] - seg.times[k];
            let re = integrate_with(
                sys,
                &seg.states[k],
                span,
                &IntegrateOptions {
                    dt: seg.step.min(span),
                    variational: true,
                    record_every: every,
                },
            )?;
            let last = re.len() - 1;
            (re.fundamentals.unwrap()[last].clone(), re.log_scales[last])
        }
    };
    let target = &funds[k + j];
    let rel = (seg.log_scales[k] + w_scale - seg.log_scales[k + j]).exp();
    let diff = target - (&w * &funds[k]) * rel;
    Ok(op_norm(&diff) / op_norm(target))
}

/// The time-t map of a vector field, computed with `substeps` RK4 steps.
pub fn time_map(field: &SmoothSystem, t: f64, substeps: usize) -> Result<SmoothSystem> {
    if field.kind != SystemKind::VectorField {
        return Err(Error::Input("time_map requires a vector field".into()));
    }
    if substeps == 0 || !(t.abs() > 0.0) {
        return Err(Error::Input("time_map needs t != 0 and substeps >= 1".into()));
    }
    let base = if t < 0.0 { field.reversed()? } else { field.clone() };
    let h = t.abs() / substeps as f64;
    let f1 = base.clone();
    let eval: FieldFn = Arc::new(move |x: &DVector<f64>| {
        let mut y = x.clone();
        for _ in 0..substeps {
            y = rk4_step(&f1, &y, h);
        }
        y
    });
    let f2 = base.clone();
    let vj: ValueJacobianFn = Arc::new(move |x: &DVector<f64>| {
        let d = x.len();
        let mut y = x.clone();
        let mut z = DMatrix::identity(d, d);
        for _ in 0..substeps {
            let (yn, zn) = rk4_step_variational(&f2, &y, &z, h);
            y = yn;
            z = zn;
        }
        (y, z)
    });
    let mut map = SmoothSystem::new(
        format!("time_{t}_map({})", field.name),
        SystemKind::Map,
        field.topo.clone(),
        eval,
    )
    .with_value_and_jacobian(vj);
    map.equilibria = field.equilibria.clone();
    map.sample_box = field.sample_box.clone();
    Ok(map)
}

/// Time-t map with the time −t map attached as its inverse.
pub fn time_map_with_inverse(field: &SmoothSystem, t: f64, substeps: usize) -> Result<SmoothSystem> {
    let fwd = time_map(field, t, substeps)?;
    let inv = time_map(field, -t, substeps)?;
    Ok(fwd.with_inverse(inv))
}

/// Cartesian product of two maps on the product chart.
pub fn product_map(a: &SmoothSystem, b: &SmoothSystem) -> Result<SmoothSystem> {
    if a.kind != SystemKind::Map || b.kind != SystemKind::Map {
        return Err(Error::Input("product_map requires two maps".into()));
    }
    let da = a.dim();
    let db = b.dim();
    let mut mask = a.topo.periodic_mask.clone();
    mask.extend(&b.topo.periodic_mask);
    let mut period = a.topo.period.clone();
    period.extend(&b.topo.period);
    let topo = ChartTopology {
        dimension: da + db,
        periodic_mask: mask,
        period,
    };
    let split = move |x: &DVector<f64>| (x.rows(0, da).into_owned(), x.rows(da, db).into_owned());
    let (a1, b1) = (a.clone(), b.clone());
    let eval: FieldFn = Arc::new(move |x: &DVector<f64>| {
        let (xa, xb) = split(x);
        let ya = a1.eval(&xa);
        let yb = b1.eval(&xb);
        DVector::from_iterator(da + db, ya.iter().chain(yb.iter()).copied())
    });
    let (a2, b2) = (a.clone(), b.clone());
    let vj: ValueJacobianFn = Arc::new(move |x: &DVector<f64>| {
        let (xa, xb) = split(x);
        let (ya, ja) = a2.value_and_jacobian(&xa);
        let (yb, jb) = b2.value_and_jacobian(&xb);
        let y = DVector::from_iterator(da + db, ya.iter().chain(yb.iter()).copied());
        let mut j = DMatrix::zeros(da + db, da + db);
        j.view_mut((0, 0), (da, da)).copy_from(&ja);
        j.view_mut((da, da), (db, db)).copy_from(&jb);
        (y, j)
    });
    let mut out = SmoothSystem::new(format!("{}x{}", a.name, b.name), SystemKind::Map, topo, eval)
        .with_value_and_jacobian(vj);
    for p in &a.equilibria {
        for q in &b.equilibria {
            out.equilibria
                .push(DVector::from_iterator(da + db, p.iter().chain(q.iter()).copied()));
        }
    }
    if let (Some(ba), Some(bb)) = (&a.sample_box, &b.sample_box) {
        out.sample_box = Some(ba.iter().chain(bb.iter()).copied().collect());
    }
    if let (Some(ia), Some(ib)) = (a.inverse(), b.inverse()) {
        out = out.with_inverse(product_map(ia, ib)?);
    }
    Ok(out)
}
