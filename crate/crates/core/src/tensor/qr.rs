//! Householder thin QR with a positive-diagonal sign convention.

use super::matrix::{norm2, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative pivot threshold below which a column counts as collapsed.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factorization `a = q·r` of a `d×k` matrix with `d ≥ k`.
///
/// `q` has orthonormal columns and `r` is upper triangular with a strictly
/// positive diagonal, which makes the factorization unique for full-rank
/// input. Fails with [`Error::RankDeficient`] when a pivot falls below
/// `1e-12` times the largest column norm of `a`.
pub fn thin_qr<T: Real>(a: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let (d, k) = a.shape();
    if k > d {
        return Err(Error::BadShape(format!(
            "thin QR needs rows >= cols, got {d}x{k}"
        )));
    }
    let largest = (0..k)
        .map(|j| norm2(&a.column(j)))
        .fold(T::zero(), T::max);
    let tol = T::tol(RANK_TOL) * largest;

    let mut w = a.clone();
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(k);
    let mut col = vec![T::zero(); d];
    for j in 0..k {
        let x = &mut col[..d - j];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = w[(j + i, j)];
        }
        let norm = norm2(x);
        if !(norm > tol) {
            return Err(Error::RankDeficient { column: j });
        }
        let alpha = if x[0] >= T::zero() { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm > T::zero() {
            v.iter_mut().for_each(|vi| *vi /= vnorm);
        }
        apply_reflector(&mut w, &v, j, j);
        reflectors.push(v);
    }

    let mut r = Matrix::zeros(k, k);
    for i in 0..k {
        for c in i..k {
            r[(i, c)] = w[(i, c)];
        }
    }

    let mut q = Matrix::eye(d, k);
    for (j, v) in reflectors.iter().enumerate().rev() {
        apply_reflector(&mut q, v, j, j);
    }

    for j in 0..k {
        if r[(j, j)] < T::zero() {
            for c in j..k {
                r[(j, c)] = -r[(j, c)];
            }
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok((q, r))
}

/// The orthonormal factor of [`thin_qr`].
pub fn orthonormalize<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    thin_qr(a).map(|(q, _)| q)
}

/// Applies `H = I − 2vvᵀ` (acting on rows `offset..`) to columns `first..`.
fn apply_reflector<T: Real>(m: &mut Matrix<T>, v: &[T], offset: usize, first: usize) {
    let two = T::lit(2.0);
    for c in first..m.cols() {
        let mut s = T::zero();
        for (i, &vi) in v.iter().enumerate() {
            s += vi * m[(offset + i, c)];
        }
        if s == T::zero() {
            continue;
        }
        let s = s * two;
        for (i, &vi) in v.iter().enumerate() {
            m[(offset + i, c)] -= s * vi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_columns_are_fixed() {
        let a = Matrix::<f64>::eye(3, 2);
        let (q, r) = thin_qr(&a).unwrap();
        assert_eq!(q, a);
        assert_eq!(r, Matrix::identity(2));
    }

    #[test]
    fn single_column_is_normalized() {
        let a = Matrix::column_vector(&[3.0, 4.0]);
        let (q, r) = thin_qr(&a).unwrap();
        assert!((q[(0, 0)] - 0.6f64).abs() < 1e-15);
        assert!((q[(1, 0)] - 0.8f64).abs() < 1e-15);
        assert!((r[(0, 0)] - 5.0f64).abs() < 1e-14);
    }

    #[test]
    fn negative_pivots_are_flipped() {
        let a = Matrix::from_rows(&[[-2.0, 1.0], [0.0, -3.0], [0.0, 0.0]]);
        let (q, r) = thin_qr(&a).unwrap();
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        let back = q.matmul(&r).unwrap();
        assert!(back.sub(&a).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn collapsed_column_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
        assert!(matches!(
            thin_qr(&a),
            Err(Error::RankDeficient { column: 1 })
        ));
        let z = Matrix::<f64>::zeros(3, 1);
        assert!(matches!(thin_qr(&z), Err(Error::RankDeficient { column: 0 })));
    }

    #[test]
    fn wide_input_is_rejected() {
        assert!(matches!(
            thin_qr(&Matrix::<f64>::zeros(2, 3)),
            Err(Error::BadShape(_))
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let a = Matrix::from_rows(&[[1.0f32, 2.0], [0.5, -1.0], [2.0, 0.25]]);
        let (q, r) = thin_qr(&a).unwrap();
        assert!(q.orthonormality_defect() < 1e-6);
        assert!(q.matmul(&r).unwrap().sub(&a).unwrap().max_abs() < 1e-5);
    }
}
