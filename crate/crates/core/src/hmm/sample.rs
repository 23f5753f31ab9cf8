use rand::Rng;

use crate::domain::{EncodedSequence, HmmModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

fn draw<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws a state path and its emissions from the model using the given generator.
pub fn sample_with_rng<T: Scalar, R: Rng + ?Sized>(
    model: &HmmModel<T>,
    len: usize,
    player_id: impl Into<String>,
    rng: &mut R,
) -> Result<(Vec<usize>, EncodedSequence)> {
    if len == 0 {
        return Err(Error::InvalidInput("sample length must be at least 1".into()));
    }
    let mut states = Vec::with_capacity(len);
    let mut symbols = Vec::with_capacity(len);
    let mut s = draw(model.pi(), rng);
    for t in 0..len {
        if t > 0 {
            s = draw(&model.trans()[s], rng);
        }
        states.push(s);
        symbols.push(draw(&model.emit()[s], rng));
    }
    Ok((states, EncodedSequence::new(player_id, symbols)))
}

/// Generates `len` observations; identical seeds give identical output.
pub fn sample<T: Scalar>(model: &HmmModel<T>, len: usize, seed: u64) -> Result<(Vec<usize>, EncodedSequence)> {
    let mut rng = seed::rng(seed, &[]);
    sample_with_rng(model, len, format!("sample-{seed}"), &mut rng)
}

/// Stationary distribution of the transition matrix, by power iteration on the lazy chain
/// `(I + A) / 2` (same fixed point, no periodic oscillation).
pub fn stationary_distribution<T: Scalar>(model: &HmmModel<T>) -> Vec<f64> {
    let n = model.n_states();
    let a = model.trans();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            next[i] += 0.5 * p[i];
            for j in 0..n {
                next[j] += 0.5 * p[i] * a[i][j].as_f64();
            }
        }
        let delta: f64 = next.iter().zip(&p).map(|(x, y)| (x - y).abs()).sum();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    p
}

/// Long-run symbol frequencies: the stationary state mixture of the emission rows.
pub fn stationary_symbol_marginal<T: Scalar>(model: &HmmModel<T>) -> Vec<f64> {
    let st = stationary_distribution(model);
    (0..model.n_symbols())
        .map(|o| st.iter().zip(model.emit()).map(|(w, row)| w * row[o].as_f64()).sum())
        .collect()
}
