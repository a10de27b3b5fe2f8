// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod quad;
pub mod random_kit;
pub mod real;
pub mod sampler;
pub mod slice;
pub mod stable_math;

pub use error::{PkError, Result};

/// Double-precision instantiations used by the binary.
pub type Prior = model::PriorSpec<f64>;
pub type Likelihood = model::LikelihoodSpec<f64>;
pub type State = model::SeatingState<f64>;
pub type Sampler = sampler::SamplerConfig<f64>;

/// Single-precision instantiations.
pub type Prior32 = model::PriorSpec<f32>;
pub type Likelihood32 = model::LikelihoodSpec<f32>;
pub type State32 = model::SeatingState<f32>;
pub type Sampler32 = sampler::SamplerConfig<f32>;
