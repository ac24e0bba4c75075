//! Euclidean charts with optional periodic coordinates, orthogonal
//! projections onto normal spaces, and orthonormal normal frames.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this norm a direction is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-300;

/// Frame transport falls back to a fresh frame below this conditioning.
pub const TRANSPORT_CONDITIONING: f64 = 1e-8;

/// Chart topology: ℝ^d with some coordinates identified modulo a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartTopology {
    pub dimension: usize,
    pub periodic_mask: Vec<bool>,
    pub period: Vec<f64>,
}

impl ChartTopology {
    /// Plain ℝ^d.
    pub fn euclidean(d: usize) -> Self {
        ChartTopology {
            dimension: d,
            periodic_mask: vec![false; d],
            period: vec![0.0; d],
        }
    }

    /// Builds a topology where `periods[i] = Some(p)` marks coordinate i periodic.
    pub fn new(periods: &[Option<f64>]) -> Result<Self> {
        if periods.is_empty() {
            return Err(Error::Input("chart dimension must be at least 1".into()));
        }
        let mut mask = Vec::with_capacity(periods.len());
        let mut period = Vec::with_capacity(periods.len());
        for (i, p) in periods.iter().enumerate() {
            match p {
                Some(p) if p.is_finite() && *p > 0.0 => {
                    mask.push(true);
                    period.push(*p);
                }
                Some(p) => {
                    return Err(Error::Input(format!(
                        "coordinate {i}: period must be finite and positive, got {p}"
                    )))
                }
                None => {
                    mask.push(false);
                    period.push(0.0);
                }
            }
        }
        Ok(ChartTopology {
            dimension: periods.len(),
            periodic_mask: mask,
            period,
        })
    }

    /// Every coordinate periodic with the same period.
    pub fn torus(d: usize, period: f64) -> Result<Self> {
        ChartTopology::new(&vec![Some(period); d])
    }

    pub fn is_periodic(&self, i: usize) -> bool {
        self.periodic_mask[i]
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::Dimension {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Displacement `a − b` with periodic coordinates reduced to the
    /// minimal image in [−p/2, p/2).
    pub fn displacement(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut d = a - b;
        for i in 0..self.dimension {
            if self.periodic_mask[i] {
                let p = self.period[i];
                d[i] -= p * (d[i] / p).round();
            }
        }
        d
    }

    /// Chart distance (Euclidean norm of the minimal-image displacement).
    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.displacement(a, b).norm()
    }
}

/// Maps each periodic coordinate into [0, period); other coordinates unchanged.
pub fn wrap_point(x: &DVector<f64>, topo: &ChartTopology) -> Result<DVector<f64>> {
    topo.check(x)?;
    Ok(wrap_unchecked(x, topo))
}

pub(crate) fn wrap_unchecked(x: &DVector<f64>, topo: &ChartTopology) -> DVector<f64> {
    let mut y = x.clone();
    for i in 0..topo.dimension {
        if topo.periodic_mask[i] {
            let p = topo.period[i];
            let mut v = y[i].rem_euclid(p);
            // rem_euclid can round up to p for tiny negative inputs.
            if v >= p {
                v = 0.0;
            }
            y[i] = v;
        }
    }
    y
}

/// O = I − v vᵀ/‖v‖².
pub fn orthogonal_projection(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n2 = v.norm_squared();
    let n = n2.sqrt();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection { norm: n });
    }
    let d = v.len();
    Ok(DMatrix::identity(d, d) - (v * v.transpose()) / n2)
}

/// Orthonormal basis of the orthogonal complement of a flow direction.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFrame {
    pub base_direction: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl NormalFrame {
    pub fn dim(&self) -> usize {
        self.base_direction.len()
    }

    /// Projection onto the normal space, basis·basisᵀ.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

fn unit(v: &DVector<f64>) -> Result<DVector<f64>> {
    let n = v.norm();
    if !(n >= DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection { norm: n });
    }
    Ok(v / n)
}

/// Deterministic Householder frame: columns 2..d of H = I − 2wwᵀ/wᵀw with
/// w = u + sign(u₀)e₁.
pub fn normal_frame(v: &DVector<f64>) -> Result<NormalFrame> {
    let u = unit(v)?;
    let d = u.len();
    let mut w = u.clone();
    let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
    w[0] += s;
    let ww = w.norm_squared();
    let h = DMatrix::identity(d, d) - (&w * w.transpose()) * (2.0 / ww);
    let basis = h.columns(1, d - 1).into_owned();
    Ok(NormalFrame {
        base_direction: u,
        basis,
    })
}

/// Result of moving a frame to a new base direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportedFrame {
    pub frame: NormalFrame,
    /// True when the projected basis degenerated and a fresh frame was built.
    pub reset: bool,
    /// min(smallest Gram–Schmidt pivot, cosine between base directions).
    pub conditioning: f64,
}

/// Projects the previous basis onto the new normal space and re-orthonormalizes
/// by modified Gram–Schmidt. A turn of the base direction by a right angle or
/// more within one call is treated as degenerate and triggers a reset.
pub fn transport_frame(prev: &NormalFrame, new_direction: &DVector<f64>) -> Result<TransportedFrame> {
    let u = unit(new_direction)?;
    let d = u.len();
    let k = d - 1;
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut conditioning = prev.base_direction.dot(&u);
    for j in 0..k {
        let c = prev.basis.column(j).into_owned();
        let mut c = &c - &u * u.dot(&c);
        for q in &cols {
            let r = q.dot(&c);
            c -= q * r;
        }
        let nrm = c.norm();
        conditioning = conditioning.min(nrm);
        if nrm < TRANSPORT_CONDITIONING {
            break;
        }
        cols.push(c / nrm);
    }
    if conditioning < TRANSPORT_CONDITIONING || cols.len() < k {
        let frame = normal_frame(&u)?;
        return Ok(TransportedFrame {
            frame,
            reset: true,
            conditioning,
        });
    }
    let mut basis = DMatrix::zeros(d, k);
    for (j, c) in cols.iter().enumerate() {
        basis.set_column(j, c);
    }
    Ok(TransportedFrame {
        frame: NormalFrame {
            base_direction: u,
            basis,
        },
        reset: false,
        conditioning,
    })
}
