//! Minimal dense linear algebra: thin QR, small SVD, ℓ^s norms, subspace
//! distance and the orthogonal Procrustes (polar) factor.

mod matrix;
mod qr;
mod svd;

pub use matrix::{dot, norm2, Matrix};
pub use qr::{orthonormalize, thin_qr, RANK_TOL};
pub use svd::{svd_small, SvdSmall, MAX_SMALL_DIM, MAX_SWEEPS, OFF_DIAGONAL_TOL};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Singular-value floor below which [`polar_rotation`] refuses its input.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Allowed deviation from orthonormality for frames passed to
/// [`subspace_distance`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Orthogonal polar factor `U·Vᵀ` of a nonsingular square matrix: the
/// orthogonal `R` maximizing `trace(Rᵀ s)`.
pub fn polar_rotation<T: Real>(s: &Matrix<T>) -> Result<Matrix<T>> {
    let svd = svd_small(s)?;
    let sigma_min = svd.sigma_min();
    if !(sigma_min >= T::tol(SINGULAR_TOL)) {
        return Err(Error::Singular {
            sigma_min: sigma_min.as_f64(),
        });
    }
    svd.u.matmul(&svd.v.transpose())
}

/// Operator-norm distance `‖VVᵀ − WWᵀ‖` between the spans of two
/// orthonormal `d×k` frames, i.e. the sine of the largest principal angle.
///
/// Uses `sqrt(1 − σ_min(vᵀw)²)`. When that is small the cosine route loses
/// half the digits, so the sine is recomputed from the residual
/// `w − v(vᵀw)`.
pub fn subspace_distance<T: Real>(w: &Matrix<T>, v: &Matrix<T>) -> Result<T> {
    if w.shape() != v.shape() {
        return Err(Error::shape(
            format!("{:?}", v.shape()),
            format!("{:?}", w.shape()),
        ));
    }
    let tol = T::tol(ORTHONORMAL_TOL);
    for frame in [w, v] {
        let defect = frame.orthonormality_defect();
        if !(defect <= tol) {
            return Err(Error::NotOrthonormal {
                deviation: defect.as_f64(),
            });
        }
    }
    let cross = v.t_matmul(w)?;
    let sigma_min = svd_small(&cross)?.sigma_min().min(T::one());
    let sin2 = T::one() - sigma_min * sigma_min;
    if sin2 > T::lit(1e-4) {
        return Ok(sin2.sqrt());
    }
    let residual = w.sub(&v.matmul(&cross)?)?;
    let sines = svd::singular_values_tall(&residual)?;
    Ok(sines[0].min(T::one()))
}

/// `ℓ^s` norm for even `s ≥ 2`.
pub fn ls_norm<T: Real>(x: &[T], s: u32) -> Result<T> {
    if s < 2 || s % 2 != 0 {
        return Err(Error::BadOrder(s));
    }
    let scale = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return Ok(T::zero());
    }
    let sum: T = x.iter().map(|&v| (v / scale).powi(s as i32)).sum();
    Ok(scale * sum.powf(T::one() / T::of_usize(s as usize)))
}

/// Smallest even order `s` with `s > ln p`; the `ℓ^s` norm then lies
/// between the max norm and `e` times the max norm on `ℝ^p`.
pub fn s_p(p: usize) -> u32 {
    let log_p = (p.max(1) as f64).ln();
    let ell = (log_p / 2.0).floor() as u32 + 1;
    2 * ell
}
