//! Group comparison statistics: top/low splits and one-way ANOVA on state frequencies.

mod special;

pub use special::{f_survival, ln_beta, ln_gamma, reg_inc_beta};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::StatePath;
use crate::error::{Error, Result};
use crate::features::state_frequencies;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult<T> {
    /// `+inf` when groups differ but have no within-group spread.
    pub f_stat: T,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: T,
}

/// The `k` highest and `k` lowest scorers.
///
/// Players are ranked by descending score, ties by ascending id; top is the head of that
/// ranking and low its tail, so the two groups never overlap.
pub fn top_low_split<T: Scalar>(scores: &BTreeMap<String, T>, k: usize) -> Result<(Vec<String>, Vec<String>)> {
    if k == 0 {
        return Err(Error::InvalidInput("top/low group size must be at least 1".into()));
    }
    if scores.len() < 2 * k {
        return Err(Error::InvalidInput(format!(
            "need at least {} players for top/low {k}, got {}",
            2 * k,
            scores.len()
        )));
    }
    if scores.values().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN trait score".into()));
    }
    let mut ranked: Vec<(&String, T)> = scores.iter().map(|(id, &s)| (id, s)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("no NaN").then_with(|| a.0.cmp(b.0)));
    let top = ranked[..k].iter().map(|(id, _)| (*id).clone()).collect();
    let low = ranked[ranked.len() - k..].iter().rev().map(|(id, _)| (*id).clone()).collect();
    Ok((top, low))
}

/// One-way ANOVA F test across groups.
pub fn one_way_anova<T: Scalar>(groups: &[Vec<T>]) -> Result<AnovaResult<T>> {
    if groups.len() < 2 {
        return Err(Error::InvalidInput("ANOVA needs at least 2 groups".into()));
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::InvalidInput(format!("ANOVA group {g} has fewer than 2 samples")));
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().copied().sum::<T>() / T::of_usize(n);
    let mut ss_between = T::zero();
    let mut ss_within = T::zero();
    for g in groups {
        let mean = g.iter().copied().sum::<T>() / T::of_usize(g.len());
        ss_between += T::of_usize(g.len()) * (mean - grand) * (mean - grand);
        ss_within += g.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();

    // Rounding noise from mean subtraction counts as zero spread.
    let scale = groups.iter().flatten().fold(T::zero(), |m, x| m.max(x.abs()));
    let noise = T::of_usize(n) * (T::of(4.0) * T::epsilon() * scale).powi(2);
    let within_zero = ss_within <= noise;
    let between_zero = ss_between <= noise;
    if within_zero && between_zero {
        return Err(Error::Degenerate("degenerate groups: zero total variance".into()));
    }
    if within_zero {
        return Ok(AnovaResult {
            f_stat: T::infinity(),
            df_between,
            df_within,
            p_value: T::zero(),
        });
    }
    let f = (ss_between / T::of_usize(df_between)) / (ss_within / T::of_usize(df_within));
    let p = f_survival(f.as_f64(), df_between as f64, df_within as f64)?;
    Ok(AnovaResult {
        f_stat: f,
        df_between,
        df_within,
        p_value: T::of(p),
    })
}

/// One row of the per-state comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateAnovaRow<T> {
    pub state: usize,
    pub mean_top: T,
    pub mean_low: T,
    /// `None` when both groups are constant and equal on this state.
    pub result: Option<AnovaResult<T>>,
}

/// Compares state frequencies of the top-`k` and low-`k` scorers of a category, state by state.
pub fn state_frequency_anova<T: Scalar>(
    paths: &[StatePath],
    scores: &BTreeMap<String, T>,
    k: usize,
    normalize: bool,
) -> Result<Vec<StateAnovaRow<T>>> {
    let Some(first) = paths.first() else {
        return Err(Error::InvalidInput("no decoded paths".into()));
    };
    let n_states = first.n_states();
    let mut freq: BTreeMap<&str, Vec<T>> = BTreeMap::new();
    for p in paths {
        if !scores.contains_key(&p.player_id) {
            return Err(Error::InvalidInput(format!("no trait score for player {}", p.player_id)));
        }
        freq.insert(&p.player_id, state_frequencies(p, n_states, normalize)?);
    }
    let present: BTreeMap<String, T> = scores
        .iter()
        .filter(|(id, _)| freq.contains_key(id.as_str()))
        .map(|(id, &s)| (id.clone(), s))
        .collect();
    let (top, low) = top_low_split(&present, k)?;
    let column = |ids: &[String], s: usize| ids.iter().map(|id| freq[id.as_str()][s]).collect::<Vec<T>>();
    let mean = |v: &[T]| v.iter().copied().sum::<T>() / T::of_usize(v.len());
    (0..n_states)
        .map(|s| {
            let (t, l) = (column(&top, s), column(&low, s));
            let result = match one_way_anova(&[t.clone(), l.clone()]) {
                Ok(r) => Some(r),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(StateAnovaRow {
                state: s,
                mean_top: mean(&t),
                mean_low: mean(&l),
                result,
            })
        })
        .collect()
}
