//! Small dense kernels used throughout: one-sided Jacobi SVD, cyclic Jacobi
//! for symmetric eigenvalues, general eigenvalues, matrix exponential.

use nalgebra::{Complex, DMatrix, DVector};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Singular values of `a` in descending order (one-sided Jacobi, Hestenes).
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    // Orthogonalize the columns of the taller orientation.
    let mut u = if a.nrows() >= a.ncols() {
        a.clone()
    } else {
        a.transpose()
    };
    let n = u.ncols();
    let m = u.nrows();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n).map(|j| u.column(j).norm()).collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Operator 2-norm (largest singular value); 0 for empty matrices.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Smallest singular value; 0 for empty matrices.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    singular_values(a).last().copied().unwrap_or(0.0)
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
/// Only the upper triangle of `s` is trusted.
pub fn symmetric_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    let mut a = DMatrix::from_fn(n, n, |i, j| if i <= j { s[(i, j)] } else { s[(j, i)] });
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Largest eigenvalue of the symmetric part (A + Aᵀ)/2.
pub fn max_symmetric_part_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    symmetric_eigenvalues(&sym)
        .last()
        .copied()
        .unwrap_or(0.0)
}

/// Eigenvalues of a general square matrix, sorted by real then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

/// Spectral radius max |λ|.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Matrix exponential by Padé scaling-and-squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Unit vector spanning the (numerical) kernel of `a`: the right singular
/// vector of the smallest singular value.
pub fn null_vector(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut v = DVector::from_fn(n, |j, _| v_t[(imin, j)]);
    // Fix the sign: first non-negligible entry positive.
    if let Some(&first) = v.iter().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            v = -v;
        }
    }
    v
}

/// Rescales `m` by a power of two so its largest entry lies in [0.5, 1).
/// Returns ln of the removed factor. Exact in floating point.
pub fn renormalize_pow2(m: &mut DMatrix<f64>) -> f64 {
    let amax = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if amax == 0.0 || !amax.is_finite() {
        return 0.0;
    }
    let e = amax.log2().floor() as i32 + 1;
    let factor = 2f64.powi(-e);
    m.iter_mut().for_each(|v| *v *= factor);
    e as f64 * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -5.0, 0.5]));
        let sv = singular_values(&a);
        assert!((sv[0] - 5.0).abs() < 1e-14);
        assert!((sv[1] - 3.0).abs() < 1e-14);
        assert!((sv[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn svd_matches_nalgebra_on_dense_matrices() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, -4.0, 0.5, 6.0, 0.1, 8.0, -9.0]);
        let mut oracle: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
        oracle.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in singular_values(&a).iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12 * oracle[0]);
        }
        let wide = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let sv = singular_values(&wide);
        assert_eq!(sv.len(), 2);
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn symmetric_eigen_matches_closed_form() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = symmetric_eigenvalues(&s);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn complex_pair_eigenvalues() {
        // Block with eigenvalues -0.5 ± 3i, plus -1.
        let a = DMatrix::from_row_slice(3, 3, &[-0.5, 3.0, 0.0, -3.0, -0.5, 0.0, 0.0, 0.0, -1.0]);
        let ev = eigenvalues(&a);
        assert!((ev[0].re + 1.0).abs() < 1e-12);
        assert!((ev[1].re + 0.5).abs() < 1e-12 && (ev[1].im.abs() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let t = 0.7_f64;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]);
        let e = expm(&a);
        assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn pow2_renormalization_is_exact() {
        let mut m = DMatrix::from_row_slice(1, 2, &[3.0e150, -1.0]);
        let orig = m.clone();
        let ls = renormalize_pow2(&mut m);
        let back = m.map(|v| v * ls.exp());
        assert!((back[(0, 0)] / orig[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m[(0, 0)].abs() < 1.0 && m[(0, 0)].abs() >= 0.5);
    }

    #[test]
    fn null_vector_of_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let v = null_vector(&a);
        assert!((&a * &v).norm() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }
}
