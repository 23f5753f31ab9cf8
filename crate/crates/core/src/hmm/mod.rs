//! Discrete HMM algorithms: likelihood, posteriors, Baum-Welch training, Viterbi decoding,
//! BIC model sizing, state labeling, sampling and canonical state ordering.

mod canonical;
mod forward;
mod label;
mod sample;
mod select;
mod train;
mod viterbi;

pub use canonical::{canonical_order, canonicalize};
pub use forward::{log_likelihood, path_log_prob, posteriors, total_log_likelihood, Posteriors};
pub use label::{default_label_map, label_states, StateLabel, DEFAULT_DOMINANCE};
pub use sample::{sample, sample_with_rng, stationary_distribution, stationary_symbol_marginal};
pub use select::{bic, select_model_size, select_model_size_with, BicRow, BicScore, SampleSize, Selection};
pub use train::{fit, FitResult, TrainConfig};
pub use viterbi::{viterbi, viterbi_with_score};
