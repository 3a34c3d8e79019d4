//! Squared-loss models evaluated on (estimated) factors: a linear model and
//! a two-layer ReLU perceptron with analytic gradients.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::{CounterRng, Role};
use crate::scalar::Real;
use crate::tensor::{dot, Matrix};

/// Flat parameter-space gradient, laid out like [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T>(pub Vec<T>);

impl<T: Real> Gradient<T> {
    pub fn zeros(n: usize) -> Self {
        Gradient(vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

/// A differentiable regression model with a flat parameter vector.
pub trait Model<T: Real>: Clone + Send + Sync {
    fn kind(&self) -> String;
    fn input_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<T>;
    fn set_params(&mut self, params: &[T]) -> Result<()>;
    fn predict(&self, f: &[T]) -> Result<T>;

    /// Adds `scale · ∇loss` into `grad` and returns the squared loss.
    fn accumulate_grad(&self, f: &[T], y: T, scale: T, grad: &mut [T]) -> Result<T>;

    /// Squared loss `(ŷ − y)²` and its gradient.
    fn loss_grad(&self, f: &[T], y: T) -> Result<(T, Gradient<T>)> {
        let mut g = vec![T::zero(); self.param_count()];
        let loss = self.accumulate_grad(f, y, T::one(), &mut g)?;
        Ok((loss, Gradient(g)))
    }

    /// `θ ← θ − η·g`.
    fn step(&mut self, grad: &Gradient<T>, eta: T) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::shape(
                format!("gradient of length {}", self.param_count()),
                format!("{}", grad.len()),
            ));
        }
        let mut p = self.params();
        p.iter_mut().zip(&grad.0).for_each(|(w, &g)| *w -= eta * g);
        self.set_params(&p)
    }
}

/// Mean loss and mean gradient over a batch of `(input, target)` pairs.
pub fn batch_loss_grad<T: Real, M: Model<T>>(
    model: &M,
    inputs: &[Vec<T>],
    ys: &[T],
) -> Result<(T, Gradient<T>)> {
    if inputs.is_empty() || inputs.len() != ys.len() {
        return Err(Error::shape(
            "non-empty batch with one target per input",
            format!("{} inputs, {} targets", inputs.len(), ys.len()),
        ));
    }
    let inv = T::one() / T::of_usize(inputs.len());
    let mut g = vec![T::zero(); model.param_count()];
    let mut loss = T::zero();
    for (f, &y) in inputs.iter().zip(ys) {
        loss += model.accumulate_grad(f, y, inv, &mut g)?;
    }
    Ok((loss * inv, Gradient(g)))
}

/// Mean squared error of `model` against `targets`.
pub fn mean_squared_error<T: Real, M: Model<T>>(
    model: &M,
    inputs: &[Vec<T>],
    targets: &[T],
) -> Result<T> {
    if inputs.is_empty() {
        return Err(Error::InsufficientData("no evaluation samples".into()));
    }
    let mut total = T::zero();
    for (f, &y) in inputs.iter().zip(targets) {
        let r = model.predict(f)? - y;
        total += r * r;
    }
    Ok(total / T::of_usize(inputs.len()))
}

fn check_len<T>(f: &[T], k: usize) -> Result<()> {
    if f.len() != k {
        return Err(Error::shape(format!("input of length {k}"), format!("{}", f.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub theta: Vec<T>,
}

impl<T: Real> LinearModel<T> {
    pub fn new(theta: Vec<T>) -> Self {
        LinearModel { theta }
    }

    pub fn zeros(k: usize) -> Self {
        LinearModel {
            theta: vec![T::zero(); k],
        }
    }
}

/// `(fᵀθ − y)²` and `2f(fᵀθ − y)`.
pub fn linear_loss_grad<T: Real>(model: &LinearModel<T>, f: &[T], y: T) -> Result<(T, Gradient<T>)> {
    model.loss_grad(f, y)
}

impl<T: Real> Model<T> for LinearModel<T> {
    fn kind(&self) -> String {
        "linear".into()
    }

    fn input_dim(&self) -> usize {
        self.theta.len()
    }

    fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> Vec<T> {
        self.theta.clone()
    }

    fn set_params(&mut self, params: &[T]) -> Result<()> {
        check_len(params, self.theta.len())?;
        self.theta.copy_from_slice(params);
        Ok(())
    }

    fn predict(&self, f: &[T]) -> Result<T> {
        check_len(f, self.theta.len())?;
        Ok(dot(f, &self.theta))
    }

    fn accumulate_grad(&self, f: &[T], y: T, scale: T, grad: &mut [T]) -> Result<T> {
        let r = self.predict(f)? - y;
        let c = T::lit(2.0) * r * scale;
        grad.iter_mut().zip(f).for_each(|(g, &fi)| *g += c * fi);
        Ok(r * r)
    }
}

/// Two-layer ReLU network `w2ᵀ·relu(w1·f + b1) + b2` with scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    /// `width × k`.
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> MlpModel<T> {
    pub fn zeros(k: usize, width: usize) -> Self {
        MlpModel {
            w1: Matrix::zeros(width, k),
            b1: vec![T::zero(); width],
            w2: vec![T::zero(); width],
            b2: T::zero(),
        }
    }

    pub fn width(&self) -> usize {
        self.b1.len()
    }

    fn hidden(&self, f: &[T]) -> Result<Vec<T>> {
        check_len(f, self.w1.cols())?;
        Ok((0..self.width())
            .map(|j| dot(self.w1.row(j), f) + self.b1[j])
            .collect())
    }
}

/// Glorot-uniform weights (`±√(6/(fan_in+fan_out))`) and zero biases.
pub fn init_mlp<T: Real>(k: usize, width: usize, seed: u64) -> Result<MlpModel<T>> {
    if width == 0 || k == 0 {
        return Err(Error::BadShape(format!("mlp needs k >= 1 and width >= 1, got k={k}, width={width}")));
    }
    let mut rng = CounterRng::new(seed, Role::MlpInit, 0, 0);
    let mut model = MlpModel::zeros(k, width);
    let lim1 = (6.0 / (k + width) as f64).sqrt();
    for w in model.w1.as_mut_slice() {
        *w = T::lit(rng.uniform(-lim1, lim1));
    }
    let lim2 = (6.0 / (width + 1) as f64).sqrt();
    for w in &mut model.w2 {
        *w = T::lit(rng.uniform(-lim2, lim2));
    }
    Ok(model)
}

pub fn mlp_forward<T: Real>(model: &MlpModel<T>, f: &[T]) -> Result<T> {
    model.predict(f)
}

pub fn mlp_loss_grad<T: Real>(model: &MlpModel<T>, f: &[T], y: T) -> Result<(T, Gradient<T>)> {
    model.loss_grad(f, y)
}

impl<T: Real> Model<T> for MlpModel<T> {
    fn kind(&self) -> String {
        format!("mlp-{}x{}", self.w1.cols(), self.width())
    }

    fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    /// `w1` (row-major), `b1`, `w2`, `b2`.
    fn param_count(&self) -> usize {
        let n = self.width();
        n * self.w1.cols() + 2 * n + 1
    }

    fn params(&self) -> Vec<T> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, params: &[T]) -> Result<()> {
        check_len(params, self.param_count())?;
        let n = self.width();
        let nk = n * self.w1.cols();
        self.w1.as_mut_slice().copy_from_slice(&params[..nk]);
        self.b1.copy_from_slice(&params[nk..nk + n]);
        self.w2.copy_from_slice(&params[nk + n..nk + 2 * n]);
        self.b2 = params[nk + 2 * n];
        Ok(())
    }

    fn predict(&self, f: &[T]) -> Result<T> {
        let h = self.hidden(f)?;
        Ok(h
            .iter()
            .zip(&self.w2)
            .fold(self.b2, |acc, (&hj, &wj)| acc + wj * relu(hj)))
    }

    fn accumulate_grad(&self, f: &[T], y: T, scale: T, grad: &mut [T]) -> Result<T> {
        let h = self.hidden(f)?;
        let n = self.width();
        let k = self.w1.cols();
        let yhat = h
            .iter()
            .zip(&self.w2)
            .fold(self.b2, |acc, (&hj, &wj)| acc + wj * relu(hj));
        let r = yhat - y;
        let dy = T::lit(2.0) * r * scale;
        let (gw1, rest) = grad.split_at_mut(n * k);
        let (gb1, rest) = rest.split_at_mut(n);
        let (gw2, gb2) = rest.split_at_mut(n);
        gb2[0] += dy;
        for j in 0..n {
            gw2[j] += dy * relu(h[j]);
            // ReLU subgradient at exactly zero is taken as zero.
            if h[j] > T::zero() {
                let dh = dy * self.w2[j];
                gb1[j] += dh;
                for (g, &fi) in gw1[j * k..(j + 1) * k].iter_mut().zip(f) {
                    *g += dh * fi;
                }
            }
        }
        Ok(r * r)
    }
}

#[inline]
fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Additive response component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    /// `cos(πx)`
    CosPi,
    /// `sin(x)`
    Sin,
    /// `(1 − |x|)²`
    SqAbs,
    /// `1/(1 + e^{−x})`
    Sigmoid,
    /// `2√|x| − 1`
    SqrtAbs,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::CosPi,
        Component::Sin,
        Component::SqAbs,
        Component::Sigmoid,
        Component::SqrtAbs,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Component::CosPi => "cospi",
            Component::Sin => "sin",
            Component::SqAbs => "sqabs",
            Component::Sigmoid => "sigmoid",
            Component::SqrtAbs => "sqrtabs",
        }
    }

    pub fn eval<T: Real>(self, x: T) -> T {
        let one = T::one();
        match self {
            Component::CosPi => (T::PI() * x).cos(),
            Component::Sin => x.sin(),
            Component::SqAbs => (one - x.abs()).powi(2),
            Component::Sigmoid => one / (one + (-x).exp()),
            Component::SqrtAbs => T::lit(2.0) * x.abs().sqrt() - one,
        }
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.tag() == s)
            .ok_or_else(|| Error::UnknownTag(s.to_string()))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Evaluates the component named by `tag` at `x`.
pub fn eval_component<T: Real>(tag: &str, x: T) -> Result<T> {
    Ok(tag.parse::<Component>()?.eval(x))
}

/// Writes a checkpoint: header `model_kind,param_count`, one row with both
/// values, then one parameter per line.
pub fn write_checkpoint<T: Real, M: Model<T>>(model: &M, mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "model_kind,param_count")?;
    writeln!(out, "{},{}", model.kind(), model.param_count())?;
    for p in model.params() {
        writeln!(out, "{:.17e}", p.as_f64())?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`write_checkpoint`] into `model`, whose
/// kind and size must match.
pub fn read_checkpoint<T: Real, M: Model<T>>(model: &mut M, text: &str) -> Result<()> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "model_kind,param_count" => {}
        other => {
            return Err(Error::Parse {
                line: other.map_or(1, |(i, _)| i + 1),
                msg: "expected header `model_kind,param_count`".into(),
            })
        }
    }
    let (i, meta) = lines.next().ok_or(Error::Parse {
        line: 2,
        msg: "missing model description".into(),
    })?;
    let (kind, count) = meta.split_once(',').ok_or(Error::Parse {
        line: i + 1,
        msg: "expected `kind,count`".into(),
    })?;
    if kind.trim() != model.kind() {
        return Err(Error::shape(model.kind(), kind.trim()));
    }
    let count: usize = count.trim().parse().map_err(|_| Error::Parse {
        line: i + 1,
        msg: format!("bad parameter count `{count}`"),
    })?;
    let mut params = Vec::with_capacity(count);
    for (i, l) in lines {
        let v: f64 = l.trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad number `{l}`"),
        })?;
        params.push(T::lit(v));
    }
    if params.len() != count {
        return Err(Error::shape(format!("{count} parameters"), format!("{}", params.len())));
    }
    model.set_params(&params)
}
