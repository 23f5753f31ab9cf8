//! Baum-Welch EM with seeded random restarts.
//!
//! The E-step uses the scaled forward-backward recursion: forward variables are renormalized
//! at every step and the log-likelihood is the sum of the log scale factors. This is the
//! log-space recursion with the per-step shift factored out, so it cannot underflow, and it
//! needs one logarithm per time step instead of one per state pair.

use log::warn;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionAlphabet, EncodedSequence, HmmModel, TrainMeta};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once `|Δℓ| / (|ℓ| + 1)` falls below this.
    pub tol: f64,
    pub seed: u64,
    /// Minimum probability of every matrix cell.
    pub floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
            floor: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n_states: usize, n_symbols: usize) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Config("restarts and max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        let limit = 1.0 / n_states.max(n_symbols) as f64;
        if !(self.floor >= 0.0 && self.floor < limit) {
            return Err(Error::Config(format!(
                "floor {} must lie in [0, {limit}) for {n_states} states and {n_symbols} symbols",
                self.floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Scalar> {
    pub model: HmmModel<T>,
    /// Total log-likelihood after each iteration of the winning restart, starting from its
    /// random initialization.
    pub loglik_trace: Vec<T>,
    pub per_restart_logliks: Vec<T>,
}

impl<T: Scalar> FitResult<T> {
    pub fn loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Maximizes `Σ c_k ln p_k` over the simplex subject to `p_k ≥ floor`.
///
/// Entries whose unconstrained share would fall below the floor are pinned to it and the rest
/// share the remaining mass in proportion to their counts. Because the previous iterate is
/// feasible, the constrained M-step never lowers the expected complete-data log-likelihood.
pub(crate) fn floored_distribution<T: Scalar>(counts: &[T], floor: T) -> Vec<T> {
    let k = counts.len();
    let total: T = counts.iter().copied().sum();
    if !(total > T::zero()) {
        return vec![T::one() / T::of_usize(k); k];
    }
    if floor <= T::zero() {
        return counts.iter().map(|&c| c / total).collect();
    }
    let mut pinned = vec![false; k];
    let mut n_pinned = 0usize;
    loop {
        let free_mass: T = counts.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(&c, _)| c).sum();
        let remaining = T::one() - floor * T::of_usize(n_pinned);
        if !(free_mass > T::zero()) {
            // Everything left has zero count: spread the remainder evenly.
            let share = remaining / T::of_usize(k - n_pinned);
            return pinned.iter().map(|&p| if p { floor } else { share }).collect();
        }
        let scale = remaining / free_mass;
        let mut changed = false;
        for i in 0..k {
            if !pinned[i] && counts[i] * scale < floor {
                pinned[i] = true;
                n_pinned += 1;
                changed = true;
            }
        }
        if !changed {
            return counts
                .iter()
                .zip(&pinned)
                .map(|(&c, &p)| if p { floor } else { c * scale })
                .collect();
        }
    }
}

/// Dense parameter copy used inside the EM loop.
#[derive(Clone)]
struct Params<T> {
    n: usize,
    m: usize,
    pi: Vec<T>,
    /// Row-major `n × n`.
    trans: Vec<T>,
    /// Symbol-major `m × n`: `emit_by_symbol[o * n + i] = B[i][o]`.
    emit_by_symbol: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn random(n: usize, m: usize, floor: T, rng: &mut seed::Rng) -> Self {
        let mut draw = |k: usize| {
            // Dirichlet(1) via normalized exponentials, then lifted above the floor.
            let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let s: f64 = e.iter().sum();
            let lift = T::one() - floor * T::of_usize(k);
            e.into_iter().map(|x| floor + lift * T::of(x / s)).collect::<Vec<T>>()
        };
        let pi = draw(n);
        let trans: Vec<T> = (0..n).flat_map(|_| draw(n)).collect();
        let emit_rows: Vec<Vec<T>> = (0..n).map(|_| draw(m)).collect();
        let mut emit_by_symbol = vec![T::zero(); m * n];
        for (i, row) in emit_rows.iter().enumerate() {
            for (o, &p) in row.iter().enumerate() {
                emit_by_symbol[o * n + i] = p;
            }
        }
        Self {
            n,
            m,
            pi,
            trans,
            emit_by_symbol,
        }
    }

    fn into_model(self, alphabet: &ActionAlphabet) -> Result<HmmModel<T>> {
        let (n, m) = (self.n, self.m);
        let trans = self.trans.chunks(n).map(<[T]>::to_vec).collect();
        let emit = (0..n)
            .map(|i| (0..m).map(|o| self.emit_by_symbol[o * n + i]).collect())
            .collect();
        HmmModel::new(self.pi, trans, emit, alphabet.clone())
    }
}

/// Expected sufficient statistics summed over sequences.
struct Counts<T> {
    pi: Vec<T>,
    trans: Vec<T>,
    emit_by_symbol: Vec<T>,
}

impl<T: Scalar> Counts<T> {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            pi: vec![T::zero(); n],
            trans: vec![T::zero(); n * n],
            emit_by_symbol: vec![T::zero(); m * n],
        }
    }
}

struct Scratch<T> {
    alpha: Vec<T>,
    beta: Vec<T>,
    scale: Vec<T>,
    tmp: Vec<T>,
}

/// Scaled forward-backward over one sequence, adding its expected counts. Returns its
/// log-likelihood.
/// State count known at compile time for small models so the inner loops unroll.
trait Width: Copy {
    fn get(self) -> usize;
}

#[derive(Clone, Copy)]
struct Fixed<const N: usize>;

impl<const N: usize> Width for Fixed<N> {
    #[inline(always)]
    fn get(self) -> usize {
        N
    }
}

#[derive(Clone, Copy)]
struct Dynamic(usize);

impl Width for Dynamic {
    #[inline(always)]
    fn get(self) -> usize {
        self.0
    }
}

fn accumulate<T: Scalar>(p: &Params<T>, obs: &[usize], acc: &mut Counts<T>, s: &mut Scratch<T>) -> T {
    match p.n {
        1 => accumulate_with(Fixed::<1>, p, obs, acc, s),
        2 => accumulate_with(Fixed::<2>, p, obs, acc, s),
        3 => accumulate_with(Fixed::<3>, p, obs, acc, s),
        4 => accumulate_with(Fixed::<4>, p, obs, acc, s),
        5 => accumulate_with(Fixed::<5>, p, obs, acc, s),
        6 => accumulate_with(Fixed::<6>, p, obs, acc, s),
        7 => accumulate_with(Fixed::<7>, p, obs, acc, s),
        8 => accumulate_with(Fixed::<8>, p, obs, acc, s),
        n => accumulate_with(Dynamic(n), p, obs, acc, s),
    }
}

#[inline(always)]
fn accumulate_with<T: Scalar, W: Width>(
    width: W,
    p: &Params<T>,
    obs: &[usize],
    acc: &mut Counts<T>,
    s: &mut Scratch<T>,
) -> T {
    let n = width.get();
    let len = obs.len();
    s.alpha.resize(len * n, T::zero());
    s.beta.resize(len * n, T::zero());
    s.scale.resize(len, T::zero());
    s.tmp.resize(n, T::zero());

    // Scale factors are multiplied together and the product's log taken only when it nears
    // underflow, which saves a logarithm per time step.
    let small = T::min_positive_value().sqrt();
    let mut loglik = T::zero();
    let mut prod = T::one();
    for t in 0..len {
        let b = &p.emit_by_symbol[obs[t] * n..obs[t] * n + n];
        let mut c = T::zero();
        if t == 0 {
            for i in 0..n {
                let v = p.pi[i] * b[i];
                s.alpha[i] = v;
                c += v;
            }
        } else {
            let (prev, cur) = s.alpha.split_at_mut(t * n);
            let prev = &prev[(t - 1) * n..];
            let cur = &mut cur[..n];
            cur.iter_mut().for_each(|x| *x = T::zero());
            for (&a_i, row) in prev.iter().zip(p.trans.chunks_exact(n)) {
                for (x, &a_ij) in cur.iter_mut().zip(row) {
                    *x += a_i * a_ij;
                }
            }
            for (x, &bj) in cur.iter_mut().zip(b) {
                *x *= bj;
                c += *x;
            }
        }
        if !(c > T::zero()) {
            return T::neg_infinity();
        }
        let inv = T::one() / c;
        s.alpha[t * n..t * n + n].iter_mut().for_each(|x| *x *= inv);
        s.scale[t] = c;
        if c < small {
            loglik += c.ln();
        } else {
            prod *= c;
            if prod < small {
                loglik += prod.ln();
                prod = T::one();
            }
        }
    }
    loglik += prod.ln();

    s.beta[(len - 1) * n..].iter_mut().for_each(|x| *x = T::one());
    add_gamma(acc, obs[len - 1], &s.alpha[(len - 1) * n..], &s.beta[(len - 1) * n..], n);
    for t in (0..len - 1).rev() {
        let b = &p.emit_by_symbol[obs[t + 1] * n..obs[t + 1] * n + n];
        let inv = T::one() / s.scale[t + 1];
        let (cur, next) = s.beta[t * n..t * n + 2 * n].split_at_mut(n);
        for ((x, &bj), &nb) in s.tmp.iter_mut().zip(b).zip(&*next) {
            *x = bj * nb * inv;
        }
        let alpha = &s.alpha[t * n..t * n + n];
        // xi_t(i, j) = alpha_t(i) a_ij b_j(o_{t+1}) beta_{t+1}(j) / c_{t+1}
        for (((row, acc_row), &a_i), beta_i) in p
            .trans
            .chunks_exact(n)
            .zip(acc.trans.chunks_exact_mut(n))
            .zip(alpha)
            .zip(cur.iter_mut())
        {
            let mut sum = T::zero();
            for ((&a_ij, &w_j), acc_ij) in row.iter().zip(&s.tmp).zip(acc_row.iter_mut()) {
                let w = a_ij * w_j;
                sum += w;
                *acc_ij += a_i * w;
            }
            *beta_i = sum;
        }
        add_gamma(acc, obs[t], alpha, cur, n);
    }
    for ((p0, &a), &b) in acc.pi.iter_mut().zip(&s.alpha[..n]).zip(&s.beta[..n]) {
        *p0 += a * b;
    }
    loglik
}

#[inline(always)]
fn add_gamma<T: Scalar>(acc: &mut Counts<T>, o: usize, alpha: &[T], beta: &[T], n: usize) {
    let e = &mut acc.emit_by_symbol[o * n..o * n + n];
    for ((x, &a), &b) in e.iter_mut().zip(alpha).zip(beta) {
        *x += a * b;
    }
}

fn e_step<T: Scalar>(p: &Params<T>, data: &[EncodedSequence], scratch: &mut Scratch<T>) -> (T, Counts<T>) {
    let mut counts = Counts::zeros(p.n, p.m);
    let mut total = T::zero();
    for seq in data {
        total += accumulate(p, &seq.symbols, &mut counts, scratch);
    }
    (total, counts)
}

fn m_step<T: Scalar>(counts: &Counts<T>, n: usize, m: usize, floor: T) -> Params<T> {
    let pi = floored_distribution(&counts.pi, floor);
    let trans = counts
        .trans
        .chunks(n)
        .flat_map(|row| floored_distribution(row, floor))
        .collect();
    let mut emit_by_symbol = vec![T::zero(); m * n];
    let mut row = vec![T::zero(); m];
    for i in 0..n {
        for o in 0..m {
            row[o] = counts.emit_by_symbol[o * n + i];
        }
        for (o, p) in floored_distribution(&row, floor).into_iter().enumerate() {
            emit_by_symbol[o * n + i] = p;
        }
    }
    Params {
        n,
        m,
        pi,
        trans,
        emit_by_symbol,
    }
}

struct RestartOutcome<T> {
    params: Params<T>,
    trace: Vec<T>,
    iterations: usize,
    converged: bool,
}

fn run_restart<T: Scalar>(
    data: &[EncodedSequence],
    n: usize,
    m: usize,
    config: &TrainConfig,
    restart: usize,
) -> RestartOutcome<T> {
    let floor = T::of(config.floor);
    let tol = T::of(config.tol);
    let mut rng = seed::rng(config.seed, &[restart as u64]);
    let mut params = Params::random(n, m, floor, &mut rng);
    let mut scratch = Scratch {
        alpha: Vec::new(),
        beta: Vec::new(),
        scale: Vec::new(),
        tmp: Vec::new(),
    };
    let mut trace = Vec::with_capacity(64);
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let (ll, counts) = e_step(&params, data, &mut scratch);
        if let Some(&prev) = trace.last() {
            let rel = (ll - prev).abs() / (ll.abs() + T::one());
            if rel < tol {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations == config.max_iters || !ll.is_finite() {
            break;
        }
        params = m_step(&counts, n, m, floor);
        iterations += 1;
    }
    RestartOutcome {
        params,
        trace,
        iterations,
        converged,
    }
}

/// Fits an `n_states` HMM to all sequences jointly by Baum-Welch, keeping the best of
/// `config.restarts` seeded random initializations.
///
/// Restart `r` draws from a stream derived from `(config.seed, r)`, so results do not depend on
/// thread scheduling; ties in final log-likelihood go to the lowest restart index.
pub fn fit<T: Scalar>(
    data: &[EncodedSequence],
    alphabet: &ActionAlphabet,
    n_states: usize,
    config: &TrainConfig,
) -> Result<FitResult<T>> {
    if n_states == 0 {
        return Err(Error::InvalidInput("n_states must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot fit an HMM to an empty dataset".into()));
    }
    let m = alphabet.len();
    config.validate(n_states, m)?;
    for seq in data {
        if seq.is_empty() {
            return Err(Error::ZeroLengthSequence);
        }
        if let Some(&bad) = seq.symbols.iter().find(|&&o| o >= m) {
            return Err(Error::InvalidInput(format!(
                "player {}: symbol {bad} out of range for {m} symbols",
                seq.player_id
            )));
        }
    }
    if n_states > 1 && data.iter().all(|s| s.len() == 1) {
        warn!("all sequences have length 1; transitions are unidentified and stay near uniform");
    }

    let outcomes: Vec<RestartOutcome<T>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(data, n_states, m, config, r))
        .collect();

    let per_restart_logliks: Vec<T> = outcomes.iter().map(|o| *o.trace.last().expect("non-empty")).collect();
    let mut best = 0;
    for (r, &ll) in per_restart_logliks.iter().enumerate() {
        if ll > per_restart_logliks[best] {
            best = r;
        }
    }
    let winner = outcomes.into_iter().nth(best).expect("best index in range");
    let final_ll = *winner.trace.last().expect("non-empty");
    if !final_ll.is_finite() {
        return Err(Error::Degenerate("every restart assigned zero probability to the data".into()));
    }
    let meta = TrainMeta {
        seed: config.seed,
        restarts: config.restarts,
        final_loglik: Some(final_ll.as_f64()),
        iterations: winner.iterations,
        converged: winner.converged,
    };
    Ok(FitResult {
        model: winner.params.into_model(alphabet)?.with_meta(meta),
        loglik_trace: winner.trace,
        per_restart_logliks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{log_likelihood, posteriors, sample};

    fn alphabet(m: usize) -> ActionAlphabet {
        ActionAlphabet::new((0..m).map(|i| format!("c{i}"))).unwrap()
    }

    #[test]
    fn floored_distribution_respects_floor_and_sum() {
        let p = floored_distribution(&[0.0f64, 5.0, 1e-12, 3.0], 1e-3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p[0], 1e-3);
        assert_eq!(p[2], 1e-3);
        assert!((p[1] / p[3] - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(floored_distribution(&[0.0f64; 4], 1e-3), vec![0.25; 4]);
        assert_eq!(floored_distribution(&[1.0f64, 3.0], 0.0), vec![0.25, 0.75]);
    }

    #[test]
    fn floored_distribution_is_constrained_optimum() {
        // Any feasible perturbation lowers Σ c ln p.
        let c = [0.0f64, 2.0, 0.001, 7.0, 1.0];
        let f = 0.01;
        let p = floored_distribution(&c, f);
        let obj = |q: &[f64]| c.iter().zip(q).map(|(c, q)| c * q.ln()).sum::<f64>();
        let best = obj(&p);
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let mut q = p.clone();
                let d = 1e-4;
                q[i] -= d;
                q[j] += d;
                if q[i] >= f {
                    assert!(obj(&q) <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn scaled_estep_matches_log_space_reference() {
        let ab = alphabet(3);
        let mut rng = seed::rng(3, &[]);
        let p = Params::<f64>::random(3, 3, 1e-8, &mut rng);
        let model = p.clone().into_model(&ab).unwrap();
        let seq = EncodedSequence::new("x", vec![0, 2, 1, 1, 0, 2, 2, 1]);
        let mut counts = Counts::zeros(3, 3);
        let mut s = Scratch {
            alpha: vec![],
            beta: vec![],
            scale: vec![],
            tmp: vec![],
        };
        let ll = accumulate(&p, &seq.symbols, &mut counts, &mut s);
        assert!((ll - log_likelihood(&model, &seq).unwrap()).abs() < 1e-12);
        let post = posteriors(&model, &seq).unwrap();
        for i in 0..3 {
            assert!((counts.pi[i] - post.gamma[0][i]).abs() < 1e-12);
            for j in 0..3 {
                let xs: f64 = post.xi.iter().map(|x| x[i][j]).sum();
                assert!((counts.trans[i * 3 + j] - xs).abs() < 1e-12);
            }
            for o in 0..3 {
                let gs: f64 = (0..seq.len()).filter(|&t| seq.symbols[t] == o).map(|t| post.gamma[t][i]).sum();
                assert!((counts.emit_by_symbol[o * 3 + i] - gs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_state_recovers_empirical_frequencies() {
        let data = vec![
            EncodedSequence::new("a", vec![0, 1, 1, 2, 1]),
            EncodedSequence::new("b", vec![2, 2, 1]),
        ];
        let fit = fit::<f64>(&data, &alphabet(4), 1, &TrainConfig::default()).unwrap();
        let want = [1.0 / 8.0, 4.0 / 8.0, 3.0 / 8.0, 0.0];
        for (got, want) in fit.model.emit()[0].iter().zip(want) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn loglik_trace_is_monotone_and_deterministic() {
        let truth = HmmModel::new(
            vec![0.6, 0.4],
            vec![vec![0.85, 0.15], vec![0.2, 0.8]],
            vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]],
            alphabet(3),
        )
        .unwrap();
        let data: Vec<_> = (0..20).map(|i| sample(&truth, 40, i).unwrap().1).collect();
        let cfg = TrainConfig {
            restarts: 3,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = fit::<f64>(&data, truth.alphabet(), 2, &cfg).unwrap();
        for w in a.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        let b = fit::<f64>(&data, truth.alphabet(), 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_restart_logliks.len(), 3);
        assert_eq!(a.model.meta.final_loglik, Some(a.loglik()));
        let reference: f64 = data.iter().map(|s| log_likelihood(&a.model, s).unwrap()).sum();
        assert!((reference - a.loglik()).abs() < 1e-8);
    }

    #[test]
    fn fitted_rows_stay_stochastic_and_floored() {
        let data = vec![EncodedSequence::new("a", vec![0, 0, 0, 1, 0, 0])];
        let cfg = TrainConfig {
            restarts: 2,
            floor: 1e-4,
            ..TrainConfig::default()
        };
        let fit = fit::<f64>(&data, &alphabet(5), 3, &cfg).unwrap();
        let m = &fit.model;
        let rows = std::iter::once(m.pi()).chain(m.trans().iter().map(Vec::as_slice)).chain(m.emit().iter().map(Vec::as_slice));
        for row in rows {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p >= 1e-4 * (1.0 - 5.0 * 1e-4)));
        }
    }

    #[test]
    fn argument_errors() {
        let data = vec![EncodedSequence::new("a", vec![0])];
        let ab = alphabet(2);
        assert!(fit::<f64>(&data, &ab, 0, &TrainConfig::default()).is_err());
        assert!(fit::<f64>(&[], &ab, 1, &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            floor: 0.6,
            ..TrainConfig::default()
        };
        assert!(matches!(fit::<f64>(&data, &ab, 1, &bad), Err(Error::Config(_))));
        assert!(fit::<f64>(&[EncodedSequence::new("a", vec![5])], &ab, 1, &TrainConfig::default()).is_err());
    }

    #[test]
    fn length_one_sequences_still_fit() {
        let data: Vec<_> = (0..10).map(|i| EncodedSequence::new(format!("p{i}"), vec![i % 2])).collect();
        let fit = fit::<f64>(&data, &alphabet(2), 2, &TrainConfig::default()).unwrap();
        for row in fit.model.trans() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn f32_training_runs() {
        let data = vec![EncodedSequence::new("a", vec![0, 1, 0, 1, 1, 0, 0])];
        let fit = fit::<f32>(&data, &alphabet(2), 2, &TrainConfig { restarts: 2, ..Default::default() }).unwrap();
        assert!(fit.loglik() < 0.0);
    }
}
