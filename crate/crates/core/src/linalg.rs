//! Dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on dynamically sized `f64` matrices. The general
//! eigendecomposition goes through the complex Schur form and recovers
//! eigenvectors by back-substitution on the triangular factor.

use alloc::vec::Vec;
use nalgebra::{Complex, DMatrix, DVector};
#[allow(unused_imports)] // inherent on f64 whenever std is linked
use num_traits::Float;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Default relative threshold for numerical rank and pseudo-inverse truncation.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Thin SVD of `a`, returning `(U, singular values, V)` with `a = U diag(s) Vᵀ`.
pub fn svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    (u, svd.singular_values, v_t.transpose())
}

/// Number of singular values above `rcond · σ_max`.
pub fn numerical_rank(singular_values: &DVector<f64>, rcond: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rcond * smax).count()
}

/// Moore–Penrose pseudo-inverse with singular values below `rcond · σ_max` dropped.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 || a.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let (u, s, v) = svd(a);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let mut v_scaled = v;
    for (j, &sj) in s.iter().enumerate() {
        let inv = if sj > cutoff { 1.0 / sj } else { 0.0 };
        v_scaled.column_mut(j).scale_mut(inv);
    }
    Ok(v_scaled * u.transpose())
}

/// Least-squares solution `X` of `X · a ≈ b`, i.e. `b · pinv(a)`.
pub fn right_divide(b: &DMatrix<f64>, a: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    if b.ncols() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "right_divide columns",
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    Ok(b * pinv(a, rcond)?)
}

/// Inverse of a square matrix via LU, failing on exact singularity.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone().try_inverse().ok_or(Error::RankDeficient {
        context: "matrix inverse",
        rank: 0,
        required: a.nrows(),
        hint: None,
    })
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = a.clone().singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Extends orthonormal columns `basis` (n×r) to an orthogonal n×n matrix whose
/// first r columns are `basis`.
pub fn orthonormal_completion(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut cand = DVector::<f64>::zeros(n);
        cand[e] = 1.0;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&cand);
                cand.axpy(-d, c, 1.0);
            }
        }
        let norm = cand.norm();
        if norm > 1e-6 {
            cols.push(cand / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Modulus of a complex scalar.
#[inline]
pub fn cabs(z: C64) -> f64 {
    z.re.hypot(z.im)
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|v| C64::new(v, 0.0))
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

pub fn cfrobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigenvalues and unit-norm eigenvectors of a real square matrix.
///
/// Eigenvectors are phase-normalized so that their largest-modulus component is
/// real and positive; real eigenvalues therefore get (numerically) real vectors.
/// Repeated eigenvalues of a diagonalizable matrix get independent vectors; a
/// defective matrix yields nearly parallel vectors, which callers detect via the
/// condition number of the eigenvector matrix.
pub fn eig(a: &DMatrix<f64>) -> Result<(Vec<C64>, CMatrix)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: "eig requires a square matrix",
            expected: n,
            found: a.ncols(),
        });
    }
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    let schur = nalgebra::linalg::Schur::try_new(to_complex(a), f64::EPSILON, 0).ok_or(
        Error::VerificationFailed {
            what: "Schur decomposition convergence",
            residual: f64::NAN,
        },
    )?;
    let (q, t) = schur.unpack();
    let scale = cfrobenius(&t).max(f64::MIN_POSITIVE);
    let smin = (f64::EPSILON * scale).max(f64::MIN_POSITIVE);

    let mut y = CMatrix::zeros(n, n);
    for j in 0..n {
        let lambda = t[(j, j)];
        y[(j, j)] = C64::new(1.0, 0.0);
        for i in (0..j).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for k in (i + 1)..=j {
                acc += t[(i, k)] * y[(k, j)];
            }
            let mut denom = t[(i, i)] - lambda;
            if cabs(denom) < smin {
                denom = C64::new(smin, 0.0);
            }
            y[(i, j)] = -acc / denom;
        }
    }
    let mut v = q * y;
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let mut lambda = t[(j, j)];
        if lambda.im.abs() <= 1e-14 * scale {
            lambda.im = 0.0;
        }
        values.push(lambda);
        let mut col = v.column_mut(j);
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, z)| if cabs(*z) > acc.1 { (i, cabs(*z)) } else { acc });
        let pivot = col[imax];
        let phase = if cabs(pivot) > 0.0 {
            pivot.conj() / cabs(pivot)
        } else {
            C64::new(1.0, 0.0)
        };
        for z in col.iter_mut() {
            *z = *z * phase / norm;
        }
        if lambda.im == 0.0 {
            for z in col.iter_mut() {
                if z.im.abs() <= 1e-13 {
                    z.im = 0.0;
                }
            }
        }
    }
    Ok((values, v))
}

/// Spectrum only; cheaper to reason about than `eig` when vectors are not needed.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    Ok(eig(a)?.0)
}

/// Inverse of a complex square matrix.
pub fn cinverse(a: &CMatrix) -> Result<CMatrix> {
    a.clone().try_inverse().ok_or(Error::RankDeficient {
        context: "complex matrix inverse",
        rank: 0,
        required: a.nrows(),
        hint: None,
    })
}

pub fn ccondition_number(a: &CMatrix) -> f64 {
    let s = a.clone().singular_values();
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Largest eigenvalue displacement under the minimum-cost matching.
pub fn spectrum_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| cabs(x - y)).collect())
        .collect();
    let assignment = crate::assignment::solve(&cost);
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_identity_is_identity() {
        let i = DMatrix::<f64>::identity(3, 3);
        let p = pinv(&i, DEFAULT_RCOND).unwrap();
        assert!((p - i).norm() < 1e-14);
    }

    #[test]
    fn pinv_rejects_zero() {
        assert_eq!(pinv(&DMatrix::zeros(2, 3), 1e-10), Err(Error::ZeroMatrix));
    }

    #[test]
    fn pinv_satisfies_penrose_conditions_on_rank_deficient_input() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0, 0.0, 1.0, 0.0, 1.0]);
        let p = pinv(&a, 1e-12).unwrap();
        assert!((&a * &p * &a - &a).norm() < 1e-12);
        assert!((&p * &a * &p - &p).norm() < 1e-12);
        let ap = &a * &p;
        assert!((&ap - ap.transpose()).norm() < 1e-12);
    }

    #[test]
    fn eig_identity_gives_unit_basis() {
        let (vals, v) = eig(&DMatrix::identity(4, 4)).unwrap();
        for l in &vals {
            assert!(cabs(l - C64::new(1.0, 0.0)) < 1e-14);
        }
        assert!(ccondition_number(&v) < 1.0 + 1e-10);
    }

    #[test]
    fn eig_rotation_has_conjugate_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let (vals, v) = eig(&a).unwrap();
        let mut ims: Vec<f64> = vals.iter().map(|l| l.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-12 && (ims[1] - 1.0).abs() < 1e-12);
        let lam = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals.clone()));
        let resid = to_complex(&a) * &v - &v * lam;
        assert!(cfrobenius(&resid) < 1e-12);
    }

    #[test]
    fn eig_detects_jordan_block_via_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let (_, v) = eig(&a).unwrap();
        assert!(ccondition_number(&v) > 1e10);
    }

    #[test]
    fn completion_is_orthogonal() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0]);
        let t = orthonormal_completion(&b);
        assert_eq!(t.ncols(), 3);
        assert!((t.transpose() * &t - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!((t.column(0) - b.column(0)).norm() < 1e-15);
    }
}
