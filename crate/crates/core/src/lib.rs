//! Streaming factor-augmented SGD.
//!
//! Covariates follow a factor model `x = Bf + u`. Oja's algorithm tracks
//! the span of `B` online, and a model is fitted by mini-batch SGD on the
//! estimated factors `f̂ = d^{-1/2} Qᵀx`. The crate also contains the
//! synthetic generators, comparison baselines and an experiment harness.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod baselines;
pub mod error;
pub mod fsgd;
pub mod harness;
pub mod models;
pub mod oja;
pub mod rng;
pub mod scalar;
pub mod streamgen;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mat = tensor::Matrix<f64>;
pub type Batch = streamgen::MiniBatch<f64>;
pub type Spec = streamgen::FactorModelSpec<f64>;
pub type Oja = oja::OjaState<f64>;
pub type Config = fsgd::FsgdConfig<f64>;
