//! Hidden Markov models of player action logs.
//!
//! Action tokens are filtered and encoded ([`ingest`]), modelled with discrete HMMs sized by
//! BIC ([`hmm`]), decoded into state paths whose visit frequencies become per-player features
//! ([`features`]), and those features are used to classify binary traits ([`classify`]) and
//! compared between high and low scorers ([`stats`]). [`synth`] generates persona datasets
//! with known ground truth.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`.

pub mod classify;
pub mod domain;
pub mod error;
pub mod features;
pub mod hmm;
pub mod ingest;
pub mod io;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod synth;

pub use domain::{ActionAlphabet, EncodedSequence, HmmModel, PlayerRecord, StatePath, TrainMeta};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = HmmModel<f64>;
pub type Model32 = HmmModel<f32>;
pub type Fit = hmm::FitResult<f64>;
pub type Features = domain::FeatureTable<f64>;
pub type Logistic = classify::LogisticModel<f64>;
pub type Anova = stats::AnovaResult<f64>;
