//! Model-size selection by the Bayesian information criterion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionAlphabet, EncodedSequence};
use crate::error::{Error, Result};
use crate::hmm::train::{fit, FitResult, TrainConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicScore<T> {
    /// Free parameter count.
    pub d: usize,
    pub bic: T,
}

/// `D = (N-1) + N(M-1) + N(N-1)` and `BIC = -2 ℓ + D ln P` (natural log).
pub fn bic<T: Scalar>(total_loglik: T, n_states: usize, n_symbols: usize, n_obs: usize) -> Result<BicScore<T>> {
    if n_obs == 0 {
        return Err(Error::InvalidInput("BIC needs at least one observation".into()));
    }
    if n_states == 0 || n_symbols == 0 {
        return Err(Error::InvalidInput("BIC needs at least one state and one symbol".into()));
    }
    let (n, m) = (n_states, n_symbols);
    let d = (n - 1) + n * (m - 1) + n * (n - 1);
    let bic = T::of(-2.0) * total_loglik + T::of_usize(d) * T::of_usize(n_obs).ln();
    Ok(BicScore { d, bic })
}

/// What counts as the sample size `P` in the BIC penalty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSize {
    /// Total number of observed symbols across all sequences.
    #[default]
    Symbols,
    /// Number of sequences (players).
    Sequences,
}

impl std::str::FromStr for SampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symbols" => Ok(SampleSize::Symbols),
            "sequences" => Ok(SampleSize::Sequences),
            other => Err(Error::Config(format!("unknown sample size {other:?} (expected symbols or sequences)"))),
        }
    }
}

impl SampleSize {
    pub fn count(self, data: &[EncodedSequence]) -> usize {
        match self {
            SampleSize::Symbols => data.iter().map(EncodedSequence::len).sum(),
            SampleSize::Sequences => data.len(),
        }
    }
}

/// One row of the size sweep, as written to `bic.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicRow<T> {
    pub n_states: usize,
    pub loglik: T,
    pub d: usize,
    pub bic: T,
}

#[derive(Debug, Clone)]
pub struct Selection<T: Scalar> {
    pub best: FitResult<T>,
    pub table: Vec<BicRow<T>>,
}

impl<T: Scalar> Selection<T> {
    pub fn best_n_states(&self) -> usize {
        self.best.model.n_states()
    }
}

pub fn select_model_size<T: Scalar>(
    data: &[EncodedSequence],
    alphabet: &ActionAlphabet,
    sizes: &[usize],
    config: &TrainConfig,
) -> Result<Selection<T>> {
    select_model_size_with(data, alphabet, sizes, config, SampleSize::Symbols)
}

/// Fits every candidate size and keeps the BIC minimizer; ties go to fewer states.
pub fn select_model_size_with<T: Scalar>(
    data: &[EncodedSequence],
    alphabet: &ActionAlphabet,
    sizes: &[usize],
    config: &TrainConfig,
    sample_size: SampleSize,
) -> Result<Selection<T>> {
    if sizes.is_empty() {
        return Err(Error::InvalidInput("no candidate model sizes".into()));
    }
    if let Some(&bad) = sizes.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidInput(format!("candidate size {bad} must be at least 1")));
    }
    let p = sample_size.count(data);
    let fits: Vec<FitResult<T>> = sizes
        .par_iter()
        .map(|&n| fit(data, alphabet, n, config))
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(fits.len());
    for (f, &n) in fits.iter().zip(sizes) {
        let ll = f.loglik();
        let score = bic(ll, n, alphabet.len(), p)?;
        table.push(BicRow {
            n_states: n,
            loglik: ll,
            d: score.d,
            bic: score.bic,
        });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        let cur = &table[best];
        if row.bic < cur.bic || (row.bic == cur.bic && row.n_states < cur.n_states) {
            best = i;
        }
    }
    let best = fits.into_iter().nth(best).expect("index in range");
    Ok(Selection { best, table })
}
