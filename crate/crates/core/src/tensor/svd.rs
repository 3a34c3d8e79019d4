//! One-sided Jacobi SVD for small matrices.

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest dimension accepted by [`svd_small`].
pub const MAX_SMALL_DIM: usize = 64;
/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal threshold for a column pair to count as orthogonal.
pub const OFF_DIAGONAL_TOL: f64 = 1e-14;

/// Singular value decomposition `s = u·diag(sigma)·vᵀ` of a square matrix.
#[derive(Debug, Clone)]
pub struct SvdSmall<T> {
    pub u: Matrix<T>,
    /// Non-increasing and non-negative.
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Real> SvdSmall<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.sigma.len();
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for j in 0..n {
                us[(i, j)] *= self.sigma[j];
            }
        }
        us.matmul(&self.v.transpose()).expect("square factors")
    }

    pub fn sigma_min(&self) -> T {
        self.sigma.last().copied().unwrap_or_else(T::zero)
    }

    pub fn sigma_max(&self) -> T {
        self.sigma.first().copied().unwrap_or_else(T::zero)
    }
}

/// SVD of a `k×k` matrix, `k ≤ 64`.
pub fn svd_small<T: Real>(s: &Matrix<T>) -> Result<SvdSmall<T>> {
    let (r, c) = s.shape();
    if r != c {
        return Err(Error::BadShape(format!("svd_small expects a square matrix, got {r}x{c}")));
    }
    if r > MAX_SMALL_DIM {
        return Err(Error::BadShape(format!(
            "svd_small accepts at most {MAX_SMALL_DIM}x{MAX_SMALL_DIM}, got {r}x{r}"
        )));
    }
    let (sigma, u, v) = jacobi(s)?;
    Ok(SvdSmall { u, sigma, v })
}

/// Singular values (non-increasing) of a tall `r×k` matrix, `r ≥ k`.
pub(crate) fn singular_values_tall<T: Real>(a: &Matrix<T>) -> Result<Vec<T>> {
    jacobi(a).map(|(sigma, _, _)| sigma)
}

/// Hestenes one-sided Jacobi on the columns of an `r×k` matrix with `r ≥ k`.
/// Returns `(sigma, u (r×k), v (k×k))`.
fn jacobi<T: Real>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>, Matrix<T>)> {
    let (rows, k) = a.shape();
    debug_assert!(rows >= k);
    // Column-major working copies.
    let mut cols: Vec<Vec<T>> = (0..k).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<T>> = (0..k)
        .map(|j| {
            let mut e = vec![T::zero(); k];
            e[j] = T::one();
            e
        })
        .collect();
    let tol = T::tol(OFF_DIAGONAL_TOL);

    let mut converged = k < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                rotate_pair(&mut cols, p, q, cs, sn);
                rotate_pair(&mut vcols, p, q, cs, sn);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: MAX_SWEEPS,
        });
    }

    let mut sigma: Vec<T> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap_or(std::cmp::Ordering::Equal));
    sigma = order.iter().map(|&i| sigma[i]).collect();
    let cols: Vec<Vec<T>> = order.iter().map(|&i| cols[i].clone()).collect();
    let vcols: Vec<Vec<T>> = order.iter().map(|&i| vcols[i].clone()).collect();

    let smax = sigma.first().copied().unwrap_or_else(T::zero);
    let negligible = T::epsilon() * T::of_usize(rows.max(1)) * smax;
    let mut ucols: Vec<Vec<T>> = Vec::with_capacity(k);
    for (j, c) in cols.iter().enumerate() {
        if sigma[j] > negligible && sigma[j] > T::zero() {
            ucols.push(c.iter().map(|&x| x / sigma[j]).collect());
        } else {
            ucols.push(complete_basis(&ucols, rows));
        }
    }

    let mut u = Matrix::zeros(rows, k);
    let mut v = Matrix::zeros(k, k);
    for j in 0..k {
        u.set_column(j, &ucols[j]);
        v.set_column(j, &vcols[j]);
    }
    Ok((sigma, u, v))
}

fn rotate_pair<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, cs: T, sn: T) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = cs * a - sn * b;
        *y = sn * a + cs * b;
    }
}

/// A unit vector orthogonal to every vector in `basis`, found by
/// Gram–Schmidt over the standard basis.
fn complete_basis<T: Real>(basis: &[Vec<T>], n: usize) -> Vec<T> {
    let mut best: Option<(T, Vec<T>)> = None;
    for e in 0..n {
        let mut cand = vec![T::zero(); n];
        cand[e] = T::one();
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                cand.iter_mut().zip(b).for_each(|(c, &bi)| *c -= proj * bi);
            }
        }
        let nrm = norm2(&cand);
        if best.as_ref().map_or(true, |(bn, _)| nrm > *bn) {
            best = Some((nrm, cand));
        }
        if nrm > T::lit(0.5) {
            break;
        }
    }
    let (nrm, mut cand) = best.expect("n > 0");
    cand.iter_mut().for_each(|c| *c /= nrm);
    cand
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi. Kept
    /// separate from the one-sided routine under test.
    fn symmetric_eigenvalues(m: &Matrix<f64>) -> Vec<f64> {
        let n = m.rows();
        let mut a = m.clone();
        for _ in 0..200 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[(p, q)] * a[(p, q)];
                }
            }
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for r in 0..n {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        a[(r, p)] = c * arp - s * arq;
                        a[(r, q)] = s * arp + c * arq;
                    }
                    for r in 0..n {
                        let apr = a[(p, r)];
                        let aqr = a[(q, r)];
                        a[(p, r)] = c * apr - s * aqr;
                        a[(q, r)] = s * apr + c * aqr;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    fn rotation(deg: f64) -> Matrix<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix::from_rows(&[[c, -s], [s, c]])
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = svd_small(&Matrix::<f64>::identity(2)).unwrap();
        assert_eq!(svd.sigma, vec![1.0, 1.0]);
    }

    #[test]
    fn diagonal_input_is_already_decomposed() {
        let svd = svd_small(&Matrix::diag(&[2.0, 0.5])).unwrap();
        assert_eq!(svd.sigma, vec![2.0, 0.5]);
        assert_eq!(svd.u, Matrix::identity(2));
        assert_eq!(svd.v, Matrix::identity(2));
    }

    #[test]
    fn rotation_has_unit_singular_values_and_uvt_recovers_it() {
        let r = rotation(30.0);
        let svd = svd_small(&r).unwrap();
        for s in &svd.sigma {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let uvt = svd.u.matmul(&svd.v.transpose()).unwrap();
        assert!(uvt.sub(&r).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn sigma_matches_eigenvalues_of_gram() {
        let s = Matrix::from_rows(&[
            [0.3, -1.2, 2.0, 0.1],
            [1.1, 0.4, -0.7, 0.9],
            [-0.2, 0.8, 0.5, -1.5],
            [0.6, 0.0, 1.3, 0.2],
        ]);
        let svd = svd_small(&s).unwrap();
        let ev = symmetric_eigenvalues(&s.t_matmul(&s).unwrap());
        for (sig, lam) in svd.sigma.iter().zip(&ev) {
            assert!((sig - lam.sqrt()).abs() < 1e-10, "{sig} vs {}", lam.sqrt());
        }
        let rel = svd.reconstruct().sub(&s).unwrap().frobenius_norm() / s.frobenius_norm();
        assert!(rel < 1e-10);
        assert!(svd.u.orthonormality_defect() < 1e-12);
        assert!(svd.v.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn rank_deficient_input_still_yields_orthogonal_u() {
        let s = Matrix::from_rows(&[[1.0f64, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]]);
        let svd = svd_small(&s).unwrap();
        assert!(svd.sigma[1].abs() < 1e-12);
        assert!(svd.u.orthonormality_defect() < 1e-12);
        let rel = svd.reconstruct().sub(&s).unwrap().frobenius_norm() / s.frobenius_norm();
        assert!(rel < 1e-10);
    }

    #[test]
    fn oversized_input_is_rejected() {
        let big = Matrix::<f64>::identity(65);
        assert!(matches!(svd_small(&big), Err(Error::BadShape(_))));
    }
}
