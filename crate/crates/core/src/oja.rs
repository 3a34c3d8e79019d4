//! Streaming principal-subspace estimation with Oja's update
//! `Q ← QR[(I + ηA)Q]`, warm-up, step-size schedules and freezing.

use std::io::Write;

use crate::error::{Error, Result};
use crate::rng::{CounterRng, Role};
use crate::scalar::Real;
use crate::streamgen::{BatchSource, MiniBatch};
use crate::tensor::{dot, orthonormalize, polar_rotation, Matrix};

/// Oja step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OjaSchedule<T> {
    /// `η_t = α / ((β + t)·ρ_k)` with a user-supplied eigengap `ρ_k`.
    Theoretical { alpha: T, beta: T, rho_k: T },
    /// `η_t = c / (c0 + t)`.
    Practical { c: T, c0: T },
}

impl<T: Real> OjaSchedule<T> {
    pub fn theoretical(alpha: T, beta: T, rho_k: T) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("rho_k", rho_k)] {
            positive(name, v)?;
        }
        Ok(OjaSchedule::Theoretical { alpha, beta, rho_k })
    }

    pub fn practical(c: T, c0: T) -> Result<Self> {
        positive("c", c)?;
        positive("c0", c0)?;
        Ok(OjaSchedule::Practical { c, c0 })
    }

    pub fn eta(&self, t: usize) -> T {
        oja_eta(self, t)
    }
}

fn positive<T: Real>(name: &str, v: T) -> Result<()> {
    if !(v > T::zero()) || !v.is_finite() {
        return Err(Error::validation(name, "must be strictly positive and finite"));
    }
    Ok(())
}

/// Step size at Stage-II iteration `t ≥ 0`; non-increasing in `t`.
pub fn oja_eta<T: Real>(schedule: &OjaSchedule<T>, t: usize) -> T {
    let t = T::of_usize(t);
    match *schedule {
        OjaSchedule::Theoretical { alpha, beta, rho_k } => alpha / ((beta + t) * rho_k),
        OjaSchedule::Practical { c, c0 } => c / (c0 + t),
    }
}

/// Outcome of the advisory step-size cap check
/// `η₀ ≤ 1 / (4(√2 + 1)·M_A·k²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapVerdict {
    pub pass: bool,
    pub cap: f64,
    pub eta0: f64,
}

pub fn cap_value(k: usize, m_a: f64) -> f64 {
    1.0 / (4.0 * (2f64.sqrt() + 1.0) * m_a * (k * k) as f64)
}

/// Checks an initial step size against the cap; `m_a` bounds `‖A_t‖_op`.
pub fn check_cap_eta(eta0: f64, k: usize, m_a: f64) -> CapVerdict {
    let cap = cap_value(k, m_a);
    CapVerdict {
        pass: eta0 <= cap,
        cap,
        eta0,
    }
}

pub fn check_cap<T: Real>(schedule: &OjaSchedule<T>, k: usize, m_a: f64) -> CapVerdict {
    check_cap_eta(oja_eta(schedule, 0).as_f64(), k, m_a)
}

/// A symmetric `d×d` operator applied to `d×k` frames.
pub trait CovarianceOp<T> {
    fn dim(&self) -> usize;
    /// `A·q`.
    fn apply(&self, q: &Matrix<T>) -> Result<Matrix<T>>;
}

impl<T: Real> CovarianceOp<T> for Matrix<T> {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, q: &Matrix<T>) -> Result<Matrix<T>> {
        self.matmul(q)
    }
}

/// The uncentered batch second moment `m⁻¹ Σ x xᵀ`, applied as
/// `m⁻¹ Xᵀ(Xq)` without forming the `d×d` matrix.
pub struct BatchCovariance<'a, T> {
    xs: &'a [Vec<T>],
}

impl<'a, T: Real> BatchCovariance<'a, T> {
    pub fn new(xs: &'a [Vec<T>]) -> Self {
        BatchCovariance { xs }
    }

    pub fn of(batch: &'a MiniBatch<T>) -> Self {
        Self::new(&batch.xs)
    }
}

impl<T: Real> CovarianceOp<T> for BatchCovariance<'_, T> {
    fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    fn apply(&self, q: &Matrix<T>) -> Result<Matrix<T>> {
        let (d, k) = q.shape();
        if self.dim() != d {
            return Err(Error::shape(format!("covariates of length {d}"), format!("{}", self.dim())));
        }
        let inv = T::one() / T::of_usize(self.xs.len().max(1));
        let mut out = Matrix::zeros(d, k);
        let mut w = vec![T::zero(); k];
        for x in self.xs {
            w.iter_mut().for_each(|v| *v = T::zero());
            for (i, &xi) in x.iter().enumerate() {
                for (wj, &qij) in w.iter_mut().zip(q.row(i)) {
                    *wj += xi * qij;
                }
            }
            w.iter_mut().for_each(|v| *v *= inv);
            for (i, &xi) in x.iter().enumerate() {
                for (o, &wj) in out.row_mut(i).iter_mut().zip(&w) {
                    *o += xi * wj;
                }
            }
        }
        Ok(out)
    }
}

/// Dense `m⁻¹ Σ x xᵀ` of a batch.
pub fn batch_covariance<T: Real>(batch: &MiniBatch<T>) -> Matrix<T> {
    let d = batch.dim();
    let inv = T::one() / T::of_usize(batch.len());
    let mut a = Matrix::zeros(d, d);
    for x in &batch.xs {
        for i in 0..d {
            let xi = x[i] * inv;
            for j in i..d {
                a[(i, j)] += xi * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    a
}

/// Current subspace estimate and update policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OjaState<T> {
    /// `d×k` with orthonormal columns.
    pub q: Matrix<T>,
    /// Stage-II updates applied so far.
    pub t: usize,
    pub schedule: OjaSchedule<T>,
    /// Updates stop once `t` reaches this index.
    pub frozen_after: Option<usize>,
    /// Procrustes-align each new frame to the previous one.
    pub align: bool,
}

impl<T: Real> OjaState<T> {
    pub fn new(q: Matrix<T>, schedule: OjaSchedule<T>) -> Result<Self> {
        let defect = q.orthonormality_defect();
        if !(defect <= T::tol(1e-8)) {
            return Err(Error::NotOrthonormal {
                deviation: defect.as_f64(),
            });
        }
        Ok(OjaState {
            q,
            t: 0,
            schedule,
            frozen_after: None,
            align: false,
        })
    }

    pub fn with_freeze(mut self, frozen_after: Option<usize>) -> Self {
        self.frozen_after = frozen_after;
        self
    }

    pub fn with_align(mut self, align: bool) -> Self {
        self.align = align;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen_after.is_some_and(|t1| self.t >= t1)
    }

    /// Step size the next update would use.
    pub fn next_eta(&self) -> T {
        oja_eta(&self.schedule, self.t)
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn rank(&self) -> usize {
        self.q.cols()
    }
}

/// One update `q' = QR[(I + η·A)q]`, optionally Procrustes-aligned to `q`.
/// A frozen state is returned unchanged.
pub fn oja_step<T: Real>(state: &OjaState<T>, a: &impl CovarianceOp<T>, eta: T) -> Result<OjaState<T>> {
    if state.is_frozen() {
        return Ok(state.clone());
    }
    if eta < T::zero() {
        return Err(Error::validation("eta", "must be non-negative"));
    }
    let q_next = advance(&state.q, a, eta, state.align)?;
    Ok(OjaState {
        q: q_next,
        t: state.t + 1,
        ..state.clone()
    })
}

fn advance<T: Real>(q: &Matrix<T>, a: &impl CovarianceOp<T>, eta: T, align: bool) -> Result<Matrix<T>> {
    let aq = a.apply(q)?;
    let mut z = q.clone();
    for (zi, &ai) in z.as_mut_slice().iter_mut().zip(aq.as_slice()) {
        *zi += eta * ai;
    }
    let q_next = orthonormalize(&z)?;
    if !align {
        return Ok(q_next);
    }
    let s = q_next.t_matmul(q)?;
    q_next.matmul(&polar_rotation(&s)?)
}

/// Random orthonormal `d×k` start from i.i.d. standard Gaussian entries.
pub fn random_start<T: Real>(d: usize, k: usize, seed: u64) -> Result<Matrix<T>> {
    if k == 0 || k > d {
        return Err(Error::BadShape(format!("need 1 <= k <= d, got d={d}, k={k}")));
    }
    let mut rng = CounterRng::new(seed, Role::OjaInit, 0, 0);
    orthonormalize(&Matrix::from_vec(d, k, rng.gaussian_vec(d * k))?)
}

/// Stage-I warm-up: Gaussian start followed by `t0` constant-step updates
/// on fresh batches from `source`.
pub fn warmup<T: Real, S: BatchSource<T> + ?Sized>(
    source: &mut S,
    t0: usize,
    eta0: T,
    k: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    if !(eta0 > T::zero()) {
        return Err(Error::validation("warmup_eta", "must be positive"));
    }
    let mut q = random_start(source.dim(), k, seed)?;
    for s in 0..t0 {
        let batch = source
            .next_batch()?
            .ok_or_else(|| Error::InsufficientData(format!("stream ended after {s} of {t0} warm-up batches")))?;
        q = advance(&q, &BatchCovariance::of(&batch), eta0, false).map_err(|e| e.at_step(s + 1))?;
    }
    Ok(q)
}

/// Orthogonal `R` minimizing `‖q − v·R‖_F`, the polar factor of `vᵀq`.
pub fn track_rotation<T: Real>(q: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    polar_rotation(&v.t_matmul(q)?)
}

/// Condition number of `vᵀq`; large values flag an ill-defined rotation.
pub fn rotation_condition<T: Real>(q: &Matrix<T>, v: &Matrix<T>) -> Result<T> {
    let svd = crate::tensor::svd_small(&v.t_matmul(q)?)?;
    Ok(svd.sigma_max() / svd.sigma_min())
}

/// Writes `q` as CSV: a header line `d,k,t` (values), then `d` rows of `k`
/// entries with 17 significant digits.
pub fn write_snapshot<T: Real>(state: &OjaState<T>, mut out: impl Write) -> Result<()> {
    let (d, k) = state.q.shape();
    writeln!(out, "{d},{k},{}", state.t)?;
    for i in 0..d {
        let row: Vec<String> = state.q.row(i).iter().map(|v| format!("{:.16e}", v.as_f64())).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses a snapshot written by [`write_snapshot`] into `(q, t)`.
pub fn read_snapshot<T: Real>(text: &str) -> Result<(Matrix<T>, usize)> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, msg: &str| Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (i, header) = lines.next().ok_or_else(|| parse_err(0, "empty snapshot"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(i, "header must be `d,k,t`"))?;
    let [d, k, t] = dims[..] else {
        return Err(parse_err(i, "header must be `d,k,t`"));
    };
    let mut data = Vec::with_capacity(d * k);
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(i, "bad number"))?;
        if row.len() != k {
            return Err(parse_err(i, &format!("expected {k} columns")));
        }
        data.extend(row.into_iter().map(T::lit));
    }
    Ok((Matrix::from_vec(d, k, data)?, t))
}

/// Unit-norm residual of `x` against the columns of `q` (for diagnostics).
pub fn projection_residual<T: Real>(q: &Matrix<T>, x: &[T]) -> Result<T> {
    let w = q.t_mul_vec(x)?;
    let back = q.mul_vec(&w)?;
    let r: Vec<T> = x.iter().zip(&back).map(|(&a, &b)| a - b).collect();
    Ok(dot(&r, &r).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streamgen::{FactorModelSpec, SyntheticStream};
    use crate::tensor::subspace_distance;
    use std::sync::Arc;

    fn practical() -> OjaSchedule<f64> {
        OjaSchedule::practical(0.1, 50.0).unwrap()
    }

    #[test]
    fn schedule_examples() {
        assert!((oja_eta(&practical(), 0) - 0.002).abs() < 1e-18);
        let th = OjaSchedule::theoretical(8.0, 100.0, 1.0).unwrap();
        assert!((oja_eta(&th, 0) - 0.08f64).abs() < 1e-17);
        for s in [practical(), th] {
            for t in 0..1000 {
                assert!(oja_eta(&s, t + 1) <= oja_eta(&s, t));
            }
        }
        assert!(OjaSchedule::practical(0.0, 50.0).is_err());
        assert!(OjaSchedule::theoretical(8.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn cap_examples() {
        assert!(check_cap_eta(0.0, 7, 3.0).pass);
        let v = check_cap_eta(0.2, 1, 1.0);
        assert!(!v.pass);
        assert!((v.cap - 0.103_553_390_593_273_8).abs() < 1e-12);
        let v2 = check_cap_eta(0.0, 2, 1.0);
        assert!((v2.cap - 0.025_888_347_648_318_44).abs() < 1e-12);
        assert!(check_cap(&practical(), 1, 1.0).pass);
    }

    #[test]
    fn covariance_examples() {
        let e1 = MiniBatch::new(vec![vec![1.0, 0.0, 0.0]], None, vec![0.0]).unwrap();
        let a = batch_covariance(&e1);
        let mut expect = Matrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        assert_eq!(a, expect);

        let v = vec![0.5, -1.0, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let pair = MiniBatch::new(vec![v.clone(), neg], None, vec![0.0, 0.0]).unwrap();
        let a = batch_covariance(&pair);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - v[i] * v[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn implicit_and_dense_covariance_agree() {
        let spec = FactorModelSpec::<f64>::linear_synthetic(9, 2, 4).unwrap();
        let batch = crate::streamgen::sample_batch(&spec, 6, 0).unwrap();
        let q = random_start::<f64>(9, 3, 1).unwrap();
        let dense = batch_covariance(&batch).matmul(&q).unwrap();
        let implicit = BatchCovariance::of(&batch).apply(&q).unwrap();
        assert!(dense.sub(&implicit).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn zero_step_is_identity_map() {
        let q = random_start::<f64>(7, 3, 2).unwrap();
        let state = OjaState::new(q.clone(), practical()).unwrap();
        let a = Matrix::identity(7);
        let next = oja_step(&state, &a, 0.0).unwrap();
        assert!(next.q.sub(&q).unwrap().max_abs() < 1e-15);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn invariant_subspace_is_a_fixed_point() {
        let a = Matrix::diag(&[5.0, 4.0, 1.0, 0.5]);
        // span{e1, e3} is invariant under a diagonal operator.
        let inv = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let state = OjaState::new(inv.clone(), practical()).unwrap();
        let next = oja_step(&state, &a, 0.3).unwrap();
        assert!(subspace_distance(&next.q, &inv).unwrap() < 1e-15);
    }

    #[test]
    fn frozen_state_never_changes() {
        let q = random_start::<f64>(5, 2, 3).unwrap();
        let state = OjaState::new(q, practical()).unwrap().with_freeze(Some(0));
        let next = oja_step(&state, &Matrix::diag(&[3.0, 2.0, 1.0, 1.0, 1.0]), 0.5).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn track_rotation_examples() {
        let v = random_start::<f64>(6, 2, 8).unwrap();
        let r = track_rotation(&v, &v).unwrap();
        assert!(r.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-14);

        let (s, c) = 1.1f64.sin_cos();
        let r0 = Matrix::from_rows(&[[c, -s], [s, c]]);
        let q = v.matmul(&r0).unwrap();
        assert!(track_rotation(&q, &v).unwrap().sub(&r0).unwrap().max_abs() < 1e-13);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let r = track_rotation(&Matrix::column_vector(&[h, h]), &Matrix::column_vector(&[1.0, 0.0])).unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-15);

        let orth = Matrix::column_vector(&[0.0, 1.0]);
        assert!(matches!(
            track_rotation(&orth, &Matrix::column_vector(&[1.0, 0.0])),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn warmup_without_steps_is_random_start() {
        let spec = Arc::new(FactorModelSpec::<f64>::linear_synthetic(10, 3, 0).unwrap());
        let mut stream = SyntheticStream::new(spec, 5);
        let q = warmup(&mut stream, 0, 0.01, 3, 42).unwrap();
        assert_eq!(q, random_start(10, 3, 42).unwrap());
        assert_eq!(stream.position, 0);
        let q10 = warmup(&mut stream, 10, 0.01, 3, 42).unwrap();
        assert_eq!(stream.position, 10);
        assert!(q10.orthonormality_defect() < 1e-12);
    }

    #[test]
    fn snapshot_roundtrip_is_exact() {
        let q = random_start::<f64>(5, 2, 13).unwrap();
        let mut state = OjaState::new(q, practical()).unwrap();
        state.t = 77;
        let mut buf = Vec::new();
        write_snapshot(&state, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("5,2,77\n"));
        let (q, t) = read_snapshot::<f64>(&text).unwrap();
        assert_eq!(q, state.q);
        assert_eq!(t, 77);
        assert!(read_snapshot::<f64>("5,2\n").is_err());
    }
}
