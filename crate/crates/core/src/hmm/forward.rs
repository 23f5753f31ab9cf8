use crate::domain::{EncodedSequence, HmmModel};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, safe_ln, Scalar};

pub(crate) struct LogParams<T> {
    pub pi: Vec<T>,
    pub trans: Vec<Vec<T>>,
    pub emit: Vec<Vec<T>>,
}

impl<T: Scalar> LogParams<T> {
    pub fn of(model: &HmmModel<T>) -> Self {
        let ln_row = |r: &[T]| r.iter().map(|&p| safe_ln(p)).collect::<Vec<_>>();
        Self {
            pi: ln_row(model.pi()),
            trans: model.trans().iter().map(|r| ln_row(r)).collect(),
            emit: model.emit().iter().map(|r| ln_row(r)).collect(),
        }
    }
}

fn forward<T: Scalar>(lp: &LogParams<T>, obs: &[usize]) -> Vec<Vec<T>> {
    let n = lp.pi.len();
    let mut alpha = Vec::with_capacity(obs.len());
    alpha.push((0..n).map(|i| lp.pi[i] + lp.emit[i][obs[0]]).collect::<Vec<T>>());
    let mut terms = vec![T::zero(); n];
    for &o in &obs[1..] {
        let prev = alpha.last().expect("non-empty");
        let next = (0..n)
            .map(|j| {
                for i in 0..n {
                    terms[i] = prev[i] + lp.trans[i][j];
                }
                log_sum_exp(&terms) + lp.emit[j][o]
            })
            .collect();
        alpha.push(next);
    }
    alpha
}

fn backward<T: Scalar>(lp: &LogParams<T>, obs: &[usize]) -> Vec<Vec<T>> {
    let n = lp.pi.len();
    let len = obs.len();
    let mut beta = vec![vec![T::zero(); n]; len];
    let mut terms = vec![T::zero(); n];
    for t in (0..len - 1).rev() {
        let o = obs[t + 1];
        for i in 0..n {
            for j in 0..n {
                terms[j] = lp.trans[i][j] + lp.emit[j][o] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&terms);
        }
    }
    beta
}

/// Natural-log probability of the observations, `ln P(O | λ)`, by the log-space forward pass.
pub fn log_likelihood<T: Scalar>(model: &HmmModel<T>, seq: &EncodedSequence) -> Result<T> {
    model.check_sequence(seq)?;
    let lp = LogParams::of(model);
    let alpha = forward(&lp, &seq.symbols);
    Ok(log_sum_exp(alpha.last().expect("non-empty")))
}

/// Sum of per-sequence log-likelihoods.
pub fn total_log_likelihood<T: Scalar>(model: &HmmModel<T>, data: &[EncodedSequence]) -> Result<T> {
    data.iter().try_fold(T::zero(), |acc, s| Ok(acc + log_likelihood(model, s)?))
}

/// Smoothed state marginals for one sequence.
#[derive(Debug, Clone)]
pub struct Posteriors<T> {
    /// `gamma[t][i] = P(s_t = i | O)`.
    pub gamma: Vec<Vec<T>>,
    /// `xi[t][i][j] = P(s_t = i, s_{t+1} = j | O)`, `T - 1` slices.
    pub xi: Vec<Vec<Vec<T>>>,
    pub loglik: T,
}

/// Forward-backward in log space.
pub fn posteriors<T: Scalar>(model: &HmmModel<T>, seq: &EncodedSequence) -> Result<Posteriors<T>> {
    model.check_sequence(seq)?;
    let lp = LogParams::of(model);
    let obs = &seq.symbols;
    let n = model.n_states();
    let alpha = forward(&lp, obs);
    let beta = backward(&lp, obs);
    let loglik = log_sum_exp(alpha.last().expect("non-empty"));
    if loglik == T::neg_infinity() {
        return Err(Error::Degenerate(format!(
            "player {}: observations have zero probability under the model",
            seq.player_id
        )));
    }
    let gamma = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| (0..n).map(|i| (a[i] + b[i] - loglik).exp()).collect())
        .collect();
    let xi = (0..obs.len().saturating_sub(1))
        .map(|t| {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            (alpha[t][i] + lp.trans[i][j] + lp.emit[j][obs[t + 1]] + beta[t + 1][j] - loglik).exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(Posteriors { gamma, xi, loglik })
}

/// Joint log-probability `ln P(O, S | λ)` of a specific state path.
pub fn path_log_prob<T: Scalar>(model: &HmmModel<T>, states: &[usize], symbols: &[usize]) -> Result<T> {
    if states.len() != symbols.len() || states.is_empty() {
        return Err(Error::InvalidInput(format!(
            "path of length {} does not match {} observations",
            states.len(),
            symbols.len()
        )));
    }
    let (n, m) = (model.n_states(), model.n_symbols());
    if states.iter().any(|&s| s >= n) || symbols.iter().any(|&o| o >= m) {
        return Err(Error::InvalidInput("state or symbol index out of range".into()));
    }
    let mut lp = safe_ln(model.pi()[states[0]]) + safe_ln(model.emit()[states[0]][symbols[0]]);
    for t in 1..states.len() {
        lp += safe_ln(model.trans()[states[t - 1]][states[t]]) + safe_ln(model.emit()[states[t]][symbols[t]]);
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ActionAlphabet;

    fn alphabet(m: usize) -> ActionAlphabet {
        ActionAlphabet::new((0..m).map(|i| format!("c{i}"))).unwrap()
    }

    #[test]
    fn uniform_two_state_model_gives_minus_t_ln2() {
        let m = HmmModel::<f64>::uniform(2, alphabet(2)).unwrap();
        for len in 1..20 {
            let seq = EncodedSequence::new("x", (0..len).map(|t| t % 2).collect());
            let ll = log_likelihood(&m, &seq).unwrap();
            assert!((ll + len as f64 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_state_is_sum_of_log_emissions() {
        let m = HmmModel::new(vec![1.0], vec![vec![1.0]], vec![vec![0.2, 0.3, 0.5]], alphabet(3)).unwrap();
        let seq = EncodedSequence::new("x", vec![0, 2, 2, 1]);
        let expect = 0.2f64.ln() + 2.0 * 0.5f64.ln() + 0.3f64.ln();
        assert!((log_likelihood(&m, &seq).unwrap() - expect).abs() < 1e-14);
        let post = posteriors(&m, &seq).unwrap();
        assert!(post.gamma.iter().flatten().all(|&g| (g - 1.0).abs() < 1e-14));
    }

    #[test]
    fn deterministic_emissions_pin_gamma() {
        let m = HmmModel::new(
            vec![0.5, 0.5],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            alphabet(2),
        )
        .unwrap();
        let seq = EncodedSequence::new("x", vec![0, 1, 1, 0]);
        let post = posteriors::<f64>(&m, &seq).unwrap();
        for (t, &o) in seq.symbols.iter().enumerate() {
            for i in 0..2 {
                let want = if i == o { 1.0 } else { 0.0 };
                assert!((post.gamma[t][i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_and_out_of_range_sequences_rejected() {
        let m = HmmModel::<f64>::uniform(2, alphabet(2)).unwrap();
        let err = log_likelihood(&m, &EncodedSequence::new("x", vec![])).unwrap_err();
        assert_eq!(err.to_string(), "zero-length sequence");
        assert!(log_likelihood(&m, &EncodedSequence::new("x", vec![2])).is_err());
        assert!(posteriors(&m, &EncodedSequence::new("x", vec![])).is_err());
    }

    #[test]
    fn impossible_observation_is_neg_infinity() {
        let m = HmmModel::new(vec![1.0], vec![vec![1.0]], vec![vec![1.0, 0.0]], alphabet(2)).unwrap();
        let seq = EncodedSequence::new("x", vec![0, 1]);
        assert_eq!(log_likelihood(&m, &seq).unwrap(), f64::NEG_INFINITY);
        assert!(posteriors(&m, &seq).is_err());
    }
}
