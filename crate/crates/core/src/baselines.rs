//! Comparison methods: raw-covariate SGD, a fixed random projection,
//! periodic offline PCA on a sliding window, training on the true factors,
//! and the two model-free forecasters (persistence, prevailing mean).

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fsgd::{drive, open_source, AnyModel, DataSource, FsgdConfig, Projection, RunRecord, SgdState, Trainer, Truth};
use crate::rng::{permutation, CounterRng, Role};
use crate::scalar::Real;
use crate::streamgen::{BatchSource, MiniBatch};
use crate::tensor::{dot, norm2, orthonormalize, polar_rotation, svd_small, Matrix, MAX_SMALL_DIM};

/// Residual tolerance of [`offline_pca`], relative to the top eigenvalue.
pub const PCA_TOL: f64 = 1e-10;
/// Iteration cap of [`offline_pca`].
pub const PCA_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PpcaConfig {
    pub k_hat: usize,
    /// Mini-batches between refreshes; `None` never refreshes after start.
    pub refresh_every: Option<usize>,
    /// Mini-batches kept in the window.
    pub window: usize,
    /// Rotate linear coefficients into the new frame after a refresh.
    pub rotate_coeffs: bool,
    /// Procrustes-align each refreshed frame to the previous one.
    pub align: bool,
}

impl PpcaConfig {
    pub fn new(k_hat: usize, refresh_every: Option<usize>, window: usize) -> Result<Self> {
        let cfg = PpcaConfig {
            k_hat,
            refresh_every,
            window,
            rotate_coeffs: true,
            align: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_hat == 0 {
            return Err(Error::validation("k_hat", "must be >= 1"));
        }
        if self.refresh_every == Some(0) {
            return Err(Error::validation("refresh_every", "must be >= 1"));
        }
        if self.window == 0 {
            return Err(Error::validation("window", "must be >= 1"));
        }
        Ok(())
    }
}

/// FIFO of the most recent mini-batches with an explicit storage counter.
#[derive(Debug, Clone)]
pub struct WindowBuffer<T> {
    batches: VecDeque<MiniBatch<T>>,
    capacity: usize,
    stored_values: usize,
}

impl<T: Real> WindowBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be >= 1");
        WindowBuffer {
            batches: VecDeque::with_capacity(capacity),
            capacity,
            stored_values: 0,
        }
    }

    fn values_of(batch: &MiniBatch<T>) -> usize {
        batch.len() * (batch.dim() + 1)
    }

    /// Appends `batch`, evicting the oldest one when full.
    pub fn push(&mut self, batch: MiniBatch<T>) {
        if self.batches.len() == self.capacity {
            let old = self.batches.pop_front().expect("full window is non-empty");
            self.stored_values -= Self::values_of(&old);
        }
        self.stored_values += Self::values_of(&batch);
        self.batches.push_back(batch);
    }

    /// Number of mini-batches held.
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(MiniBatch::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MiniBatch<T>> {
        self.batches.iter()
    }

    /// Bytes of covariates and responses currently stored.
    pub fn memory_bytes(&self) -> usize {
        self.stored_values * std::mem::size_of::<T>()
    }

    /// Pooled uncentered second moment `n⁻¹ Σ x xᵀ`.
    pub fn second_moment(&self) -> Result<Matrix<T>> {
        let n = self.samples();
        if n == 0 {
            return Err(Error::InsufficientData("window is empty".into()));
        }
        let d = self.batches[0].dim();
        let mut a = Matrix::zeros(d, d);
        for x in self.batches.iter().flat_map(|b| b.xs.iter()) {
            for i in 0..d {
                let xi = x[i];
                if xi == T::zero() {
                    continue;
                }
                let row = a.row_mut(i);
                for j in i..d {
                    row[j] += xi * x[j];
                }
            }
        }
        let inv = T::one() / T::of_usize(n);
        for i in 0..d {
            for j in i..d {
                let v = a[(i, j)] * inv;
                a.row_mut(i)[j] = v;
                a.row_mut(j)[i] = v;
            }
        }
        Ok(a)
    }
}

/// Top-`k_hat` eigenvectors of the window's second-moment matrix.
///
/// Block orthogonal iteration with oversampling and a Rayleigh–Ritz
/// extraction each sweep, stopped when every Ritz residual
/// `‖A y − λ y‖` is below `PCA_TOL·λ_1`. The start block is `start`
/// (padded with seeded Gaussian columns) or fully Gaussian. Columns are
/// signed to agree with `start`, else so that their largest entry is
/// positive.
pub fn offline_pca<T: Real>(window: &WindowBuffer<T>, k_hat: usize, start: Option<&Matrix<T>>, seed: u64) -> Result<Matrix<T>> {
    if window.is_empty() {
        return Err(Error::InsufficientData("window is empty".into()));
    }
    if window.samples() < k_hat {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot determine {k_hat} components",
            window.samples()
        )));
    }
    top_eigenvectors(&window.second_moment()?, k_hat, start, seed)
}

/// Top-`k` eigenvectors of a symmetric positive semidefinite matrix.
pub fn top_eigenvectors<T: Real>(a: &Matrix<T>, k: usize, start: Option<&Matrix<T>>, seed: u64) -> Result<Matrix<T>> {
    let d = a.rows();
    if a.cols() != d {
        return Err(Error::BadShape(format!("expected a square matrix, got {}x{}", d, a.cols())));
    }
    if k == 0 || k > d || k > MAX_SMALL_DIM {
        return Err(Error::BadShape(format!("need 1 <= k <= min(d, {MAX_SMALL_DIM}), got k={k}, d={d}")));
    }
    let block = (k + k.max(5)).min(d).min(MAX_SMALL_DIM);
    let mut rng = CounterRng::new(seed, Role::PpcaInit, 0, 0);

    let mut basis = Matrix::zeros(d, block);
    for j in 0..block {
        let col = match start {
            Some(s) if j < s.cols() && s.rows() == d => s.column(j),
            _ => rng.gaussian_vec(d),
        };
        basis.set_column(j, &col);
    }
    let mut q = orthonormalize_filling(&basis, &mut rng)?;
    let scale = a.max_abs().max(T::min_positive_value());
    for _ in 0..PCA_MAX_ITER {
        if block < d {
            q = orthonormalize_filling(&a.matmul(&q)?, &mut rng)?;
        }
        let aq = a.matmul(&q)?;
        let ritz = svd_small(&q.t_matmul(&aq)?)?;
        let y = q.matmul(&ritz.u)?;
        let ay = aq.matmul(&ritz.u)?;
        let lambda_1 = ritz.sigma_max().max(scale * T::epsilon());
        let converged = (0..k).all(|j| {
            let r: Vec<T> = ay.column(j).iter().zip(y.column(j)).map(|(&av, yv)| av - ritz.sigma[j] * yv).collect();
            norm2(&r) <= T::lit(PCA_TOL) * lambda_1
        });
        if converged || block == d {
            return Ok(sign_columns(y.leading_columns(k), start));
        }
        q = y;
    }
    Err(Error::NoConvergence {
        iterations: PCA_MAX_ITER,
    })
}

/// Gram–Schmidt with reorthogonalization; columns that collapse (the
/// input is rank deficient) are replaced by fresh Gaussian directions.
fn orthonormalize_filling<T: Real>(z: &Matrix<T>, rng: &mut CounterRng) -> Result<Matrix<T>> {
    match orthonormalize(z) {
        Ok(q) => return Ok(q),
        Err(Error::RankDeficient { .. }) => {}
        Err(e) => return Err(e),
    }
    let (d, l) = z.shape();
    let scale = (0..l).map(|j| norm2(&z.column(j))).fold(T::zero(), T::max);
    let mut q = Matrix::zeros(d, l);
    for j in 0..l {
        let mut v = z.column(j);
        let mut tries = 0;
        loop {
            let before = norm2(&v);
            for _ in 0..2 {
                for p in 0..j {
                    let qp = q.column(p);
                    let c = dot(&qp, &v);
                    v.iter_mut().zip(&qp).for_each(|(vi, &qi)| *vi -= c * qi);
                }
            }
            let after = norm2(&v);
            if after > T::lit(1e-10) * before.max(scale) && after > T::zero() {
                v.iter_mut().for_each(|vi| *vi /= after);
                break;
            }
            tries += 1;
            if tries > 8 {
                return Err(Error::RankDeficient { column: j });
            }
            v = rng.gaussian_vec(d);
        }
        q.set_column(j, &v);
    }
    Ok(q)
}

fn sign_columns<T: Real>(mut y: Matrix<T>, reference: Option<&Matrix<T>>) -> Matrix<T> {
    for j in 0..y.cols() {
        let col = y.column(j);
        let flip = match reference {
            Some(r) if j < r.cols() && r.rows() == y.rows() => dot(&col, &r.column(j)) < T::zero(),
            _ => {
                let pivot = col.iter().copied().fold(T::zero(), |m, v| if v.abs() > m.abs() { v } else { m });
                pivot < T::zero()
            }
        };
        if flip {
            let neg: Vec<T> = col.iter().map(|&v| -v).collect();
            y.set_column(j, &neg);
        }
    }
    y
}

/// Coefficients in the new frame: `R·θ` with `R = polar(q_newᵀ q_old)`, so
/// that predictions agree on the shared span.
pub fn rotate_coefficients<T: Real>(q_old: &Matrix<T>, q_new: &Matrix<T>, theta: &[T]) -> Result<Vec<T>> {
    polar_rotation(&q_new.t_matmul(q_old)?)?.mul_vec(theta)
}

/// State of the periodic-PCA baseline.
#[derive(Debug, Clone)]
pub struct PpcaState<T> {
    pub q: Matrix<T>,
    pub window: WindowBuffer<T>,
    pub config: PpcaConfig,
    /// Mini-batches observed since the start.
    pub t: usize,
    pub refreshes: usize,
    pub seed: u64,
}

impl<T: Real> PpcaState<T> {
    pub fn new(q: Matrix<T>, config: PpcaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if q.cols() != config.k_hat {
            return Err(Error::shape(format!("{} columns", config.k_hat), format!("{}", q.cols())));
        }
        Ok(PpcaState {
            q,
            window: WindowBuffer::new(config.window),
            config,
            t: 0,
            refreshes: 0,
            seed,
        })
    }

    /// Starts from offline PCA of `warmup` batches (also kept in the window).
    pub fn from_warmup(warmup: Vec<MiniBatch<T>>, config: PpcaConfig, seed: u64) -> Result<Self> {
        let mut window = WindowBuffer::new(config.window);
        warmup.into_iter().for_each(|b| window.push(b));
        let q = offline_pca(&window, config.k_hat, None, seed)?;
        let mut state = PpcaState::new(q, config, seed)?;
        state.window = window;
        Ok(state)
    }

    pub fn refresh_due(&self) -> bool {
        self.config.refresh_every.is_some_and(|m| self.t % m == 0)
    }

    /// Adds `batch` to the window and refreshes when due. Returns the
    /// rotated coefficients when `theta` is given and rotation is enabled.
    pub fn observe(&mut self, batch: &MiniBatch<T>, theta: Option<&[T]>) -> Result<Option<Vec<T>>> {
        self.window.push(batch.clone());
        self.t += 1;
        if !self.refresh_due() {
            return Ok(None);
        }
        let (next, theta) = ppca_refresh(self, theta)?;
        *self = next;
        Ok(theta)
    }
}

/// Recomputes the frame from the window, starting the iteration from the
/// current frame. With `rotate_coeffs`, linear coefficients are carried
/// into the new frame; a singular overlap leaves them unchanged.
pub fn ppca_refresh<T: Real>(state: &PpcaState<T>, theta: Option<&[T]>) -> Result<(PpcaState<T>, Option<Vec<T>>)> {
    let q_old = &state.q;
    let seed = state.seed.wrapping_add(state.refreshes as u64 + 1);
    let mut q_new = offline_pca(&state.window, state.config.k_hat, Some(q_old), seed)?;
    if state.config.align {
        if let Ok(r) = polar_rotation(&q_new.t_matmul(q_old)?) {
            q_new = q_new.matmul(&r)?;
        }
    }
    let theta_new = match theta {
        Some(th) if state.config.rotate_coeffs => match rotate_coefficients(q_old, &q_new, th) {
            Ok(v) => Some(v),
            Err(Error::Singular { .. }) => None,
            Err(e) => return Err(e),
        },
        _ => None,
    };
    let next = PpcaState {
        q: q_new,
        refreshes: state.refreshes + 1,
        ..state.clone()
    };
    Ok((next, theta_new))
}

/// Orthonormal frame from a seeded Gaussian matrix; never updated.
pub fn random_projection<T: Real>(d: usize, k_hat: usize, seed: u64) -> Result<Matrix<T>> {
    if k_hat == 0 || k_hat > d {
        return Err(Error::BadShape(format!("need 1 <= k <= d, got d={d}, k={k_hat}")));
    }
    let mut rng = CounterRng::new(seed, Role::RandomProjection, 0, 0);
    orthonormalize(&Matrix::from_vec(d, k_hat, rng.gaussian_vec(d * k_hat))?)
}

/// Last observed response.
pub fn persistence_predict<T: Real>(history: &[T]) -> Result<T> {
    history.last().copied().ok_or(Error::EmptyHistory)
}

/// Mean of all observed responses.
pub fn prevailing_mean_predict<T: Real>(history: &[T]) -> Result<T> {
    let mut acc = RunningMean::default();
    history.iter().for_each(|&y| acc.push(y));
    acc.mean()
}

/// Streaming mean over a compensated (Neumaier) running sum, so the
/// rounding error does not grow with the count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMean<T> {
    n: u64,
    sum: T,
    carry: T,
}

impl<T: Real> RunningMean<T> {
    pub fn push(&mut self, y: T) {
        self.n += 1;
        let t = self.sum + y;
        if self.sum.abs() >= y.abs() {
            self.carry += (self.sum - t) + y;
        } else {
            self.carry += (y - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> Result<T> {
        if self.n == 0 {
            Err(Error::EmptyHistory)
        } else {
            Ok((self.sum + self.carry) / T::lit(self.n as f64))
        }
    }
}

/// Model-free forecasters of the next response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forecaster {
    Persistence,
    PrevailingMean,
}

/// Streams `t_max` batches, predicting each response from all earlier ones.
/// `train_loss` is the batch-mean squared forecast error; the first
/// response of the stream has no forecast and is skipped.
pub fn forecast_run<T: Real>(kind: Forecaster, source: &mut dyn BatchSource<T>, t_max: usize) -> Result<Vec<RunRecord>> {
    let mut last: Option<T> = None;
    let mut mean = RunningMean::default();
    let mut records = Vec::new();
    for t in 1..=t_max {
        let Some(batch) = source.next_batch()? else { break };
        let (mut sum, mut n) = (0.0, 0usize);
        for &y in &batch.ys {
            let pred = match kind {
                Forecaster::Persistence => last,
                Forecaster::PrevailingMean => mean.mean().ok(),
            };
            if let Some(p) = pred {
                sum += (y - p).as_f64().powi(2);
                n += 1;
            }
            last = Some(y);
            mean.push(y);
        }
        records.push(RunRecord {
            t,
            eta_t: 0.0,
            eta_oja_t: 0.0,
            train_loss: if n == 0 { 0.0 } else { sum / n as f64 },
            dist_qv: None,
            rot_err_s: None,
            theta_drift: None,
        });
    }
    Ok(records)
}

/// Final trainer and kept records of a baseline run.
#[derive(Debug, Clone)]
pub struct BaselineOutput<T> {
    pub records: Vec<RunRecord>,
    pub trainer: Trainer<T, AnyModel<T>>,
}

fn truth_for<T: Real>(config: &FsgdConfig<T>) -> Result<Option<Truth<T>>> {
    match &config.source {
        DataSource::Synthetic(spec) => Truth::from_spec(spec, config.k_hat, config.norm_order),
        DataSource::Csv { .. } => Ok(None),
    }
}

fn run_with<T: Real>(
    config: &FsgdConfig<T>,
    source: &mut dyn BatchSource<T>,
    projection: Projection<T>,
    input_dim: usize,
    truth: Option<Truth<T>>,
) -> Result<BaselineOutput<T>> {
    config.validate()?;
    let model = config.model.build(input_dim, config.seed)?;
    let trainer = Trainer::new(SgdState::new(model, config.sgd), projection, truth);
    let (trainer, records) = drive(trainer, source, config.t_max)?;
    Ok(BaselineOutput { records, trainer })
}

/// SGD on `d^{-1/2}x` directly (model input dimension `d`). Unscaled `x`
/// diverges at the usual step sizes once `d` is moderate.
pub fn vanilla_run<T: Real>(config: &FsgdConfig<T>) -> Result<BaselineOutput<T>> {
    let mut source = open_source(&config.source, config.m)?;
    let d = source.dim();
    run_with(config, source.as_mut(), Projection::Raw, d, None)
}

/// FSGD with the subspace replaced by a fixed random frame.
pub fn randomproj_run<T: Real>(config: &FsgdConfig<T>) -> Result<BaselineOutput<T>> {
    let mut source = open_source(&config.source, config.m)?;
    let q = random_projection(source.dim(), config.k_hat, config.seed)?;
    run_with(config, source.as_mut(), Projection::Fixed(q), config.k_hat, truth_for(config)?)
}

/// Periodic offline PCA. The initial frame comes from offline PCA over the
/// config's warm-up batches (at least one).
pub fn ppca_run<T: Real>(config: &FsgdConfig<T>, ppca: &PpcaConfig) -> Result<BaselineOutput<T>> {
    if ppca.k_hat != config.k_hat {
        return Err(Error::validation("k_hat", "ppca and run configs disagree"));
    }
    let mut source = open_source(&config.source, config.m)?;
    let mut warm = Vec::new();
    for _ in 0..config.warmup_steps.max(1) {
        let batch = source
            .next_batch()?
            .ok_or_else(|| Error::InsufficientData("stream ended during warm-up".into()))?;
        warm.push(batch);
    }
    let state = PpcaState::from_warmup(warm, *ppca, config.seed)?;
    run_with(config, source.as_mut(), Projection::Ppca(state), config.k_hat, truth_for(config)?)
}

/// Training on the true factors. Needs a synthetic source or truth columns.
pub fn oracle_run<T: Real>(config: &FsgdConfig<T>) -> Result<BaselineOutput<T>> {
    let k = match &config.source {
        DataSource::Synthetic(spec) => spec.k,
        DataSource::Csv { schema, .. } if schema.truth_k > 0 => schema.truth_k,
        DataSource::Csv { .. } => {
            return Err(Error::Unsupported("oracle inputs need factor columns in the stream".into()))
        }
    };
    let mut source = open_source(&config.source, config.m)?;
    let truth = truth_for(config)?;
    run_with(config, source.as_mut(), Projection::Oracle, k, truth)
}

/// A fixed sample pool served as shuffled epochs of mini-batches. The last
/// batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct PoolSource<T> {
    pool: Arc<MiniBatch<T>>,
    m: usize,
    seed: u64,
    epochs: Option<usize>,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl<T: Real> PoolSource<T> {
    /// `epochs = None` cycles forever.
    pub fn new(pool: Arc<MiniBatch<T>>, m: usize, epochs: Option<usize>, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::BadShape("mini-batch size must be >= 1".into()));
        }
        if pool.is_empty() {
            return Err(Error::InsufficientData("empty sample pool".into()));
        }
        let mut src = PoolSource {
            pool,
            m,
            seed,
            epochs,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        src.shuffle();
        Ok(src)
    }

    fn shuffle(&mut self) {
        let mut rng = CounterRng::new(self.seed, Role::Shuffle, self.epoch as u64, 0);
        self.order = permutation(&mut rng, self.pool.len());
        self.cursor = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pool.len().div_ceil(self.m)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl<T: Real> BatchSource<T> for PoolSource<T> {
    fn dim(&self) -> usize {
        self.pool.dim()
    }

    fn next_batch(&mut self) -> Result<Option<MiniBatch<T>>> {
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        if self.epochs.is_some_and(|e| self.epoch >= e) {
            return Ok(None);
        }
        let end = (self.cursor + self.m).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let xs = idx.iter().map(|&i| self.pool.xs[i].clone()).collect();
        let fs = self.pool.fs.as_ref().map(|fs| idx.iter().map(|&i| fs[i].clone()).collect());
        let ys = idx.iter().map(|&i| self.pool.ys[i]).collect();
        MiniBatch::new(xs, fs, ys).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::subspace_distance;

    fn batch(rows: Vec<Vec<f64>>) -> MiniBatch<f64> {
        let n = rows.len();
        MiniBatch::new(rows, None, vec![0.0; n]).unwrap()
    }

    #[test]
    fn rank_one_window_recovers_the_direction() {
        let mut w = WindowBuffer::new(4);
        for _ in 0..4 {
            w.push(batch(vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]; 3]));
        }
        let q = offline_pca(&w, 1, None, 0).unwrap();
        assert!((q[(0, 0)].abs() - 1.0).abs() < 1e-12);
        let q2 = offline_pca(&w, 2, None, 0).unwrap();
        assert!(q2.orthonormality_defect() < 1e-12);
        assert!((q2[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offline_pca_matches_a_dense_eigenproblem() {
        // d = 12 so the blocked iteration (block 8) actually iterates.
        let d = 12;
        let mut rng = CounterRng::new(3, Role::Test, 0, 0);
        let scales: Vec<f64> = (0..d).map(|i| 2.0f64.powi(-(i as i32))).collect();
        let mut w = WindowBuffer::new(1);
        let rows = (0..400)
            .map(|_| scales.iter().map(|s| s.sqrt() * rng.gaussian()).collect())
            .collect();
        w.push(batch(rows));
        let a = w.second_moment().unwrap();
        let q = offline_pca(&w, 3, None, 1).unwrap();
        for j in 0..3 {
            let col = q.column(j);
            let ay = a.mul_vec(&col).unwrap();
            let lambda = dot(&col, &ay);
            let r: Vec<f64> = ay.iter().zip(&col).map(|(a, y)| a - lambda * y).collect();
            assert!(norm2(&r) < 1e-7 * a.max_abs());
        }
        let again = offline_pca(&w, 3, None, 1).unwrap();
        assert!(subspace_distance(&q, &again).unwrap() < 1e-8);
    }

    #[test]
    fn window_is_fifo_with_exact_accounting() {
        let mut w = WindowBuffer::<f64>::new(3);
        for t in 1..=7 {
            w.push(batch(vec![vec![t as f64, 0.0]; 2]));
            assert_eq!(w.len(), t.min(3));
            assert_eq!(w.memory_bytes(), t.min(3) * 2 * 3 * 8);
        }
        let firsts: Vec<f64> = w.iter().map(|b| b.xs[0][0]).collect();
        assert_eq!(firsts, vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn coefficient_rotation_cases() {
        let q = random_projection::<f64>(6, 2, 4).unwrap();
        let th = vec![0.7, -0.2];
        assert_eq!(
            rotate_coefficients(&q, &q, &th).unwrap().iter().map(|v| (v * 1e12).round()).collect::<Vec<_>>(),
            th.iter().map(|v| (v * 1e12).round()).collect::<Vec<_>>()
        );
        let q1 = random_projection::<f64>(6, 1, 4).unwrap();
        let neg = q1.scale(-1.0);
        assert!((rotate_coefficients(&q1, &neg, &[0.5]).unwrap()[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn forecasters() {
        assert_eq!(persistence_predict(&[1.0]).unwrap(), 1.0);
        assert_eq!(persistence_predict(&[1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert_eq!(prevailing_mean_predict(&[2.0]).unwrap(), 2.0);
        assert_eq!(prevailing_mean_predict(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(matches!(persistence_predict::<f64>(&[]), Err(Error::EmptyHistory)));
        assert!(matches!(prevailing_mean_predict::<f64>(&[]), Err(Error::EmptyHistory)));
    }

    #[test]
    fn pool_source_serves_each_sample_once_per_epoch() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let pool = Arc::new(MiniBatch::new(xs, None, ys).unwrap());
        let mut src = PoolSource::new(pool, 4, Some(2), 9).unwrap();
        assert_eq!(src.batches_per_epoch(), 3);
        let mut seen = Vec::new();
        while let Some(b) = src.next_batch().unwrap() {
            seen.push(b.ys);
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[2].len(), 2);
        let mut first: Vec<f64> = seen[..3].concat();
        first.sort_by(f64::total_cmp);
        assert_eq!(first, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }
}
