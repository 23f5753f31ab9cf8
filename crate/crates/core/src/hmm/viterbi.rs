use crate::domain::{EncodedSequence, HmmModel, StatePath};
use crate::error::{Error, Result};
use crate::hmm::forward::LogParams;
use crate::scalar::Scalar;

/// Most probable state path and its joint log-probability `ln P(O, S* | λ)`.
///
/// Max-plus recursion in log space. Ties go to the lowest state index, both for the final
/// state and at every back-pointer.
pub fn viterbi_with_score<T: Scalar>(model: &HmmModel<T>, seq: &EncodedSequence) -> Result<(StatePath, T)> {
    model.check_sequence(seq)?;
    let lp = LogParams::of(model);
    let n = model.n_states();
    let obs = &seq.symbols;
    let len = obs.len();

    let mut score: Vec<T> = (0..n).map(|i| lp.pi[i] + lp.emit[i][obs[0]]).collect();
    let mut next = vec![T::zero(); n];
    let mut back = vec![0usize; len * n];
    for t in 1..len {
        for j in 0..n {
            let mut best_i = 0;
            let mut best = score[0] + lp.trans[0][j];
            for i in 1..n {
                let v = score[i] + lp.trans[i][j];
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            back[t * n + j] = best_i;
            next[j] = best + lp.emit[j][obs[t]];
        }
        std::mem::swap(&mut score, &mut next);
    }

    let mut last = 0;
    for i in 1..n {
        if score[i] > score[last] {
            last = i;
        }
    }
    let best = score[last];
    if best == T::neg_infinity() {
        return Err(Error::Degenerate(format!(
            "player {}: observations have zero probability under the model",
            seq.player_id
        )));
    }
    let mut states = vec![0usize; len];
    states[len - 1] = last;
    for t in (1..len).rev() {
        states[t - 1] = back[t * n + states[t]];
    }
    Ok((StatePath::new(seq.player_id.clone(), states, n)?, best))
}

/// Most probable hidden-state path for one sequence.
pub fn viterbi<T: Scalar>(model: &HmmModel<T>, seq: &EncodedSequence) -> Result<StatePath> {
    viterbi_with_score(model, seq).map(|(p, _)| p)
}
