//! Summary-guided decoding for vision-language captioning, together with the
//! language-prior analysis and hallucination metrics used to evaluate it.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI uses. Exact counts in metric
//! reports use [`num_rational::Ratio`].

pub mod analysis;
pub mod backend;
pub mod decoding;
pub mod dist;
pub mod linguistics;
pub mod metrics;
pub mod scalar;
pub mod schema;
pub mod summarizer;

pub use scalar::Scalar;

pub type Distribution = dist::TokenDistribution<f64>;
pub type Step = backend::StepResult<f64>;
pub type Scripted = backend::ScriptedBackend<f64>;
pub type Synthetic = backend::SyntheticHallucinationBackend<f64>;
pub type Ngram = backend::NgramBackend<f64>;
