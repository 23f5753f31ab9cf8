//! State-frequency and aggregate-count features, and mean-split trait binarization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionAlphabet, EncodedSequence, FeatureTable, PlayerRecord, StatePath};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn normalize_counts<T: Scalar>(counts: Vec<usize>, normalize: bool) -> Result<Vec<T>> {
    let total: usize = counts.iter().sum();
    if normalize && total == 0 {
        return Err(Error::ZeroLengthSequence);
    }
    let denom = if normalize { T::of_usize(total) } else { T::one() };
    Ok(counts.into_iter().map(|c| T::of_usize(c) / denom).collect())
}

/// Visits per state; with `normalize`, the fraction of time steps spent in each state.
pub fn state_frequencies<T: Scalar>(path: &StatePath, n_states: usize, normalize: bool) -> Result<Vec<T>> {
    if path.is_empty() {
        return Err(Error::ZeroLengthSequence);
    }
    let mut counts = vec![0usize; n_states];
    for &s in &path.states {
        *counts.get_mut(s).ok_or_else(|| {
            Error::InvalidInput(format!(
                "player {}: state {s} out of range for {n_states} states",
                path.player_id
            ))
        })? += 1;
    }
    normalize_counts(counts, normalize)
}

/// Per-action occurrence counts in alphabet order.
pub fn aggregate_counts<T: Scalar>(record: &PlayerRecord, alphabet: &ActionAlphabet, normalize: bool) -> Result<Vec<T>> {
    let mut counts = vec![0usize; alphabet.len()];
    for t in &record.tokens {
        let i = alphabet.index_of(t).ok_or_else(|| Error::UnknownToken {
            player_id: record.player_id.clone(),
            token: t.clone(),
        })?;
        counts[i] += 1;
    }
    normalize_counts(counts, normalize)
}

/// [`aggregate_counts`] for an already encoded sequence.
pub fn aggregate_symbol_counts<T: Scalar>(seq: &EncodedSequence, alphabet: &ActionAlphabet, normalize: bool) -> Result<Vec<T>> {
    let mut counts = vec![0usize; alphabet.len()];
    for &s in &seq.symbols {
        *counts.get_mut(s).ok_or_else(|| {
            Error::InvalidInput(format!("player {}: symbol {s} outside alphabet", seq.player_id))
        })? += 1;
    }
    normalize_counts(counts, normalize)
}

/// Column names `s1..sN`.
pub fn state_feature_names(n_states: usize) -> Vec<String> {
    (1..=n_states).map(|i| format!("s{i}")).collect()
}

/// Column names `a_<CODE>` in alphabet order.
pub fn aggregate_feature_names(alphabet: &ActionAlphabet) -> Vec<String> {
    alphabet.codes().iter().map(|c| format!("a_{c}")).collect()
}

pub fn state_feature_table<T: Scalar>(paths: &[StatePath], n_states: usize, normalize: bool) -> Result<FeatureTable<T>> {
    let mut table = FeatureTable::new(state_feature_names(n_states));
    for p in paths {
        table.push_row(p.player_id.clone(), state_frequencies(p, n_states, normalize)?)?;
    }
    Ok(table)
}

pub fn aggregate_feature_table<T: Scalar>(
    records: &[PlayerRecord],
    alphabet: &ActionAlphabet,
    normalize: bool,
) -> Result<FeatureTable<T>> {
    let mut table = FeatureTable::new(aggregate_feature_names(alphabet));
    for r in records {
        table.push_row(r.player_id.clone(), aggregate_counts(r, alphabet, normalize)?)?;
    }
    Ok(table)
}

/// Mean split of one trait: strictly above the mean is high (1), otherwise low (0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinarizationRule<T> {
    pub mean: T,
}

impl<T: Scalar> BinarizationRule<T> {
    /// Fits the mean; fails if fewer than two scores or all scores are equal.
    pub fn fit(category: &str, scores: &[T]) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "category {category}: need at least 2 scores to binarize, got {}",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("category {category}: non-finite score")));
        }
        if scores.iter().all(|&s| s == scores[0]) {
            return Err(Error::Degenerate(format!("category {category}: zero variance")));
        }
        let mean = scores.iter().copied().sum::<T>() / T::of_usize(scores.len());
        Ok(Self { mean })
    }

    pub fn apply(&self, score: T) -> u8 {
        u8::from(score > self.mean)
    }

    pub fn apply_all(&self, scores: &[T]) -> Vec<u8> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}

/// Labels every player high/low relative to the mean of the provided scores.
pub fn binarize<T: Scalar>(
    category: &str,
    scores: &BTreeMap<String, T>,
) -> Result<(BTreeMap<String, u8>, BinarizationRule<T>)> {
    let values: Vec<T> = scores.values().copied().collect();
    let rule = BinarizationRule::fit(category, &values)?;
    let labels = scores.iter().map(|(id, &s)| (id.clone(), rule.apply(s))).collect();
    Ok((labels, rule))
}
