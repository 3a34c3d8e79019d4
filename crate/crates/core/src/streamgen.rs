//! Synthetic factor-model streams `x = Bf + u`, `y = M(f) + ε`, and CSV
//! ingestion of real streams.

use std::fs::File;
use std::io::{BufRead, BufReader, Lines, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::models::Component;
use crate::rng::{CounterRng, Role};
use crate::scalar::Real;
use crate::tensor::{dot, orthonormalize, Matrix};

/// Per-coordinate distribution of factors or idiosyncratic noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Zero,
}

impl Dist {
    pub fn variance(self) -> f64 {
        match self {
            Dist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Dist::Zero => 0.0,
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            Dist::Uniform { lo, hi } => 0.5 * (lo + hi),
            Dist::Zero => 0.0,
        }
    }

    fn sample(self, rng: &mut CounterRng) -> f64 {
        match self {
            Dist::Uniform { lo, hi } => rng.uniform(lo, hi),
            Dist::Zero => 0.0,
        }
    }
}

/// How the loading matrix `B` is generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadingKind {
    /// `√d ×` the Q-factor of a standard Gaussian `d×k` matrix, so that
    /// `BᵀB = d·I_k`.
    Orthogonalized,
    /// i.i.d. `Unif[−a, a]` entries; `d⁻¹BᵀB ≈ I_k` only when `a = √3`.
    Uniform { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResponseMap<T> {
    /// `M(f) = fᵀθ*`.
    Linear { theta_star: Vec<T> },
    /// `M(f) = Σ_j M_j(f_j)`.
    Additive { components: Vec<Component> },
}

impl<T: Real> ResponseMap<T> {
    pub fn eval(&self, f: &[T]) -> T {
        match self {
            ResponseMap::Linear { theta_star } => dot(theta_star, f),
            ResponseMap::Additive { components } => components
                .iter()
                .zip(f)
                .map(|(c, &fj)| c.eval(fj))
                .sum(),
        }
    }

    fn arity(&self) -> usize {
        match self {
            ResponseMap::Linear { theta_star } => theta_star.len(),
            ResponseMap::Additive { components } => components.len(),
        }
    }
}

/// Generative description of a factor-model stream.
#[derive(Debug, Clone)]
pub struct FactorModelSpec<T> {
    pub d: usize,
    pub k: usize,
    /// `d×k` loading matrix `B`.
    pub loading: Matrix<T>,
    pub loading_kind: LoadingKind,
    pub factor_dist: Dist,
    /// Optional per-factor scale multipliers; unequal scales make the
    /// factor covariance anisotropic.
    pub factor_scales: Option<Vec<f64>>,
    pub idio_dist: Dist,
    pub noise_sd: f64,
    pub response: ResponseMap<T>,
    pub seed: u64,
}

impl<T: Real> FactorModelSpec<T> {
    /// Linear synthetic task: orthogonalized `B`, `f, u ~ Unif[−0.5, 0.5]`,
    /// `θ* ~ Unif(0, 1)^k`, `ε ~ N(0, 0.3)`.
    pub fn linear_synthetic(d: usize, k: usize, seed: u64) -> Result<Self> {
        let loading = make_loading(d, k, seed, LoadingKind::Orthogonalized)?;
        let mut rng = CounterRng::new(seed, Role::ThetaStar, 0, 0);
        let theta_star = (0..k).map(|_| T::lit(rng.uniform(0.0, 1.0))).collect();
        Self::new(
            loading,
            LoadingKind::Orthogonalized,
            Dist::Uniform { lo: -0.5, hi: 0.5 },
            Dist::Uniform { lo: -0.5, hi: 0.5 },
            0.3f64.sqrt(),
            ResponseMap::Linear { theta_star },
            seed,
        )
    }

    /// Nonlinear task: `B ~ Unif[−√3, √3]`, `f, u ~ Unif[−1, 1]`,
    /// additive response with components drawn per seed, `ε ~ N(0, 0.3)`.
    pub fn additive_synthetic(d: usize, k: usize, seed: u64) -> Result<Self> {
        let kind = LoadingKind::Uniform {
            half_width: 3f64.sqrt(),
        };
        let loading = make_loading(d, k, seed, kind)?;
        Self::new(
            loading,
            kind,
            Dist::Uniform { lo: -1.0, hi: 1.0 },
            Dist::Uniform { lo: -1.0, hi: 1.0 },
            0.3f64.sqrt(),
            ResponseMap::Additive {
                components: random_components(k, seed),
            },
            seed,
        )
    }

    pub fn new(
        loading: Matrix<T>,
        loading_kind: LoadingKind,
        factor_dist: Dist,
        idio_dist: Dist,
        noise_sd: f64,
        response: ResponseMap<T>,
        seed: u64,
    ) -> Result<Self> {
        let (d, k) = loading.shape();
        let spec = FactorModelSpec {
            d,
            k,
            loading,
            loading_kind,
            factor_dist,
            factor_scales: None,
            idio_dist,
            noise_sd,
            response,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_factor_scales(mut self, scales: Vec<f64>) -> Result<Self> {
        self.factor_scales = Some(scales);
        self.validate()?;
        Ok(self)
    }

    pub fn with_noise_sd(mut self, sd: f64) -> Result<Self> {
        self.noise_sd = sd;
        self.validate()?;
        Ok(self)
    }

    pub fn with_idio(mut self, dist: Dist) -> Self {
        self.idio_dist = dist;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.d {
            return Err(Error::BadShape(format!(
                "need 1 <= k <= d, got d={}, k={}",
                self.d, self.k
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::validation("noise_sd", "must be non-negative"));
        }
        if self.response.arity() != self.k {
            return Err(Error::shape(
                format!("response over {} factors", self.k),
                format!("{}", self.response.arity()),
            ));
        }
        if let Some(s) = &self.factor_scales {
            if s.len() != self.k || s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::validation("factor_scales", "need k positive scales"));
            }
        }
        if self.loading_kind == LoadingKind::Orthogonalized {
            let defect = loading_defect(&self.loading);
            if !(defect < 1e-8) {
                return Err(Error::validation(
                    "loading",
                    format!("d⁻¹BᵀB deviates from I_k by {defect:e}"),
                ));
            }
        }
        Ok(())
    }

    pub fn factor_variances(&self) -> Vec<f64> {
        let base = self.factor_dist.variance();
        match &self.factor_scales {
            Some(s) => s.iter().map(|c| base * c * c).collect(),
            None => vec![base; self.k],
        }
    }

    pub fn is_isotropic(&self) -> bool {
        match &self.factor_scales {
            Some(s) => s.iter().all(|&c| c == s[0]),
            None => true,
        }
    }

    /// Eigengap `λ_k − λ_{k+1}` of the population covariance, available
    /// when `B` has orthogonal columns and `f` is isotropic.
    pub fn population_gap(&self) -> Option<f64> {
        (self.loading_kind == LoadingKind::Orthogonalized && self.is_isotropic())
            .then(|| self.d as f64 * self.factor_dist.variance())
    }

    /// Population covariance `B Σ_f Bᵀ + σ_u² I` (dense `d×d`).
    pub fn population_covariance(&self) -> Matrix<T> {
        let vars = self.factor_variances();
        let mut scaled = self.loading.clone();
        for i in 0..self.d {
            for j in 0..self.k {
                scaled[(i, j)] *= T::lit(vars[j]);
            }
        }
        let mut cov = scaled
            .matmul(&self.loading.transpose())
            .expect("conformant shapes");
        let su2 = T::lit(self.idio_dist.variance());
        for i in 0..self.d {
            cov[(i, i)] += su2;
        }
        cov
    }

    /// Noise-free response `M(f)`.
    pub fn mean_response(&self, f: &[T]) -> T {
        self.response.eval(f)
    }
}

fn loading_defect<T: Real>(b: &Matrix<T>) -> f64 {
    let d = b.rows() as f64;
    let gram = b.t_matmul(b).expect("same matrix").scale(T::lit(1.0 / d));
    gram.sub(&Matrix::identity(b.cols()))
        .expect("square")
        .frobenius_norm()
        .as_f64()
}

fn random_components(k: usize, seed: u64) -> Vec<Component> {
    let mut rng = CounterRng::new(seed, Role::Components, 0, 0);
    (0..k)
        .map(|_| Component::ALL[rng.below(Component::ALL.len())])
        .collect()
}

/// Generates a `d×k` loading matrix deterministically from `seed`.
pub fn make_loading<T: Real>(d: usize, k: usize, seed: u64, kind: LoadingKind) -> Result<Matrix<T>> {
    if k == 0 || k > d {
        return Err(Error::BadShape(format!("need 1 <= k <= d, got d={d}, k={k}")));
    }
    let mut rng = CounterRng::new(seed, Role::Loading, 0, 0);
    match kind {
        LoadingKind::Orthogonalized => {
            let z = Matrix::from_vec(d, k, rng.gaussian_vec(d * k))?;
            Ok(orthonormalize(&z)?.scale(T::lit((d as f64).sqrt())))
        }
        LoadingKind::Uniform { half_width } => {
            let data = (0..d * k)
                .map(|_| T::lit(rng.uniform(-half_width, half_width)))
                .collect();
            Matrix::from_vec(d, k, data)
        }
    }
}

/// A mini-batch of covariates, optional ground-truth factors and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch<T> {
    pub xs: Vec<Vec<T>>,
    pub fs: Option<Vec<Vec<T>>>,
    pub ys: Vec<T>,
}

impl<T: Real> MiniBatch<T> {
    pub fn new(xs: Vec<Vec<T>>, fs: Option<Vec<Vec<T>>>, ys: Vec<T>) -> Result<Self> {
        let m = xs.len();
        if m == 0 || ys.len() != m || fs.as_ref().is_some_and(|f| f.len() != m) {
            return Err(Error::shape(
                "equal-length non-empty xs, fs, ys",
                format!(
                    "xs={}, fs={:?}, ys={}",
                    m,
                    fs.as_ref().map(|f| f.len()),
                    ys.len()
                ),
            ));
        }
        Ok(MiniBatch { xs, fs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, Vec::len)
    }

    /// The batch as an `m×d` matrix.
    pub fn x_matrix(&self) -> Matrix<T> {
        let d = self.dim();
        let data = self.xs.iter().flat_map(|x| x.iter().copied()).collect();
        Matrix::from_vec(self.len(), d, data).expect("rows of equal length")
    }
}

/// Draws the mini-batch at `stream_position`. Pure in its arguments.
pub fn sample_batch<T: Real>(spec: &FactorModelSpec<T>, m: usize, stream_position: u64) -> Result<MiniBatch<T>> {
    if m == 0 {
        return Err(Error::BadShape("mini-batch size must be >= 1".into()));
    }
    let scales = spec.factor_scales.clone().unwrap_or_else(|| vec![1.0; spec.k]);
    let mut xs = Vec::with_capacity(m);
    let mut fs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m as u64 {
        let mut rf = CounterRng::new(spec.seed, Role::Factor, stream_position, i);
        let f: Vec<T> = scales
            .iter()
            .map(|&c| T::lit(c * spec.factor_dist.sample(&mut rf)))
            .collect();
        let mut x = spec.loading.mul_vec(&f)?;
        if spec.idio_dist != Dist::Zero {
            let mut ru = CounterRng::new(spec.seed, Role::Idiosyncratic, stream_position, i);
            for xi in &mut x {
                *xi += T::lit(spec.idio_dist.sample(&mut ru));
            }
        }
        let mut y = spec.response.eval(&f);
        if spec.noise_sd > 0.0 {
            let mut re = CounterRng::new(spec.seed, Role::Noise, stream_position, i);
            y += T::lit(spec.noise_sd * re.gaussian());
        }
        xs.push(x);
        fs.push(f);
        ys.push(y);
    }
    MiniBatch::new(xs, Some(fs), ys)
}

/// Orthonormal basis of the leading-`k` eigenspace of the population
/// covariance: the Q-factor of `B`. Valid for isotropic factor and
/// idiosyncratic covariances only.
pub fn oracle_subspace<T: Real>(spec: &FactorModelSpec<T>) -> Result<Matrix<T>> {
    if !spec.is_isotropic() {
        return Err(Error::Unsupported(
            "oracle subspace needs isotropic factors; use offline PCA on the population covariance".into(),
        ));
    }
    orthonormalize(&spec.loading)
}

/// A sequential source of mini-batches.
pub trait BatchSource<T> {
    /// Ambient dimension of the covariates.
    fn dim(&self) -> usize;
    /// The next batch, or `None` when the stream is exhausted.
    fn next_batch(&mut self) -> Result<Option<MiniBatch<T>>>;
}

/// Endless synthetic stream over consecutive positions.
#[derive(Debug, Clone)]
pub struct SyntheticStream<T> {
    pub spec: Arc<FactorModelSpec<T>>,
    pub m: usize,
    pub position: u64,
}

impl<T: Real> SyntheticStream<T> {
    pub fn new(spec: Arc<FactorModelSpec<T>>, m: usize) -> Self {
        SyntheticStream { spec, m, position: 0 }
    }
}

impl<T: Real> BatchSource<T> for SyntheticStream<T> {
    fn dim(&self) -> usize {
        self.spec.d
    }

    fn next_batch(&mut self) -> Result<Option<MiniBatch<T>>> {
        let b = sample_batch(&self.spec, self.m, self.position)?;
        self.position += 1;
        Ok(Some(b))
    }
}

/// Column layout of an ingested CSV stream: `y, x_1..x_d[, f_1..f_k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// Covariate count; inferred from the first data row when `None`.
    pub d: Option<usize>,
    /// Number of trailing ground-truth factor columns (0 for real data).
    pub truth_k: usize,
}

/// Reads `path` as a stream of mini-batches of size `m`.
pub fn stream_csv<T: Real>(path: impl AsRef<Path>, m: usize, schema: CsvSchema) -> Result<CsvStream<T>> {
    CsvStream::open(path.as_ref(), m, schema)
}

/// Mini-batch reader over a y-first CSV file. Single consumer.
pub struct CsvStream<T> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    m: usize,
    d: usize,
    truth_k: usize,
    pending: Option<(Vec<T>, T, Option<Vec<T>>)>,
    done: bool,
}

impl<T: Real> CsvStream<T> {
    fn open(path: &Path, m: usize, schema: CsvSchema) -> Result<Self> {
        if m == 0 {
            return Err(Error::BadShape("mini-batch size must be >= 1".into()));
        }
        let mut lines = BufReader::new(File::open(path)?).lines();
        let mut line_no = 0;
        let mut first = None;
        for line in lines.by_ref() {
            let line = line?;
            line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let numeric: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
            match numeric {
                Some(vals) => {
                    first = Some(vals);
                    break;
                }
                None if line_no == 1 => continue,
                None => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "non-numeric field".into(),
                    })
                }
            }
        }
        let first = first.ok_or_else(|| Error::EmptyStream(path.to_path_buf()))?;
        let d = match schema.d {
            Some(d) => d,
            None => first.len().checked_sub(1 + schema.truth_k).filter(|&d| d > 0).ok_or(Error::Parse {
                line: line_no,
                msg: format!("row has {} fields, too few for the schema", first.len()),
            })?,
        };
        let mut stream = CsvStream {
            path: path.to_path_buf(),
            lines,
            line_no,
            m,
            d,
            truth_k: schema.truth_k,
            pending: None,
            done: false,
        };
        stream.pending = Some(stream.split_row(&first, line_no)?);
        Ok(stream)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn split_row(&self, vals: &[f64], line: usize) -> Result<(Vec<T>, T, Option<Vec<T>>)> {
        let want = 1 + self.d + self.truth_k;
        if vals.len() != want {
            return Err(Error::Parse {
                line,
                msg: format!("expected {want} fields (y, {} covariates, {} factors), got {}", self.d, self.truth_k, vals.len()),
            });
        }
        let y = T::lit(vals[0]);
        let x = vals[1..1 + self.d].iter().map(|&v| T::lit(v)).collect();
        let f = (self.truth_k > 0).then(|| vals[1 + self.d..].iter().map(|&v| T::lit(v)).collect());
        Ok((x, y, f))
    }

    fn next_row(&mut self) -> Result<Option<(Vec<T>, T, Option<Vec<T>>)>> {
        if let Some(r) = self.pending.take() {
            return Ok(Some(r));
        }
        for line in self.lines.by_ref() {
            let line = line?;
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: self.line_no,
                    msg: e.to_string(),
                })?;
            return self.split_row(&vals, self.line_no).map(Some);
        }
        Ok(None)
    }
}

impl<T: Real> Iterator for CsvStream<T> {
    type Item = Result<MiniBatch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut xs = Vec::with_capacity(self.m);
        let mut ys = Vec::with_capacity(self.m);
        let mut fs = (self.truth_k > 0).then(|| Vec::with_capacity(self.m));
        while xs.len() < self.m {
            match self.next_row() {
                Ok(Some((x, y, f))) => {
                    xs.push(x);
                    ys.push(y);
                    if let (Some(fs), Some(f)) = (fs.as_mut(), f) {
                        fs.push(f);
                    }
                }
                Ok(None) => {
                    self.done = true;
                    break;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        if xs.is_empty() {
            return None;
        }
        Some(MiniBatch::new(xs, fs, ys))
    }
}

impl<T: Real> BatchSource<T> for CsvStream<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn next_batch(&mut self) -> Result<Option<MiniBatch<T>>> {
        self.next().transpose()
    }
}

/// Writes batches in the y-first CSV layout, appending the ground-truth
/// factors when `with_truth` is set.
pub fn write_csv<T: Real>(out: &mut impl Write, batches: &[MiniBatch<T>], with_truth: bool) -> Result<()> {
    for b in batches {
        for i in 0..b.len() {
            let mut row = vec![format!("{}", b.ys[i].as_f64())];
            row.extend(b.xs[i].iter().map(|v| format!("{}", v.as_f64())));
            if with_truth {
                if let Some(fs) = &b.fs {
                    row.extend(fs[i].iter().map(|v| format!("{}", v.as_f64())));
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}
