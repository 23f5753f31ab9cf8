use behavehmm::hmm::{
    bic, canonicalize, fit, log_likelihood, posteriors, select_model_size, total_log_likelihood, viterbi_with_score,
    TrainConfig,
};
use behavehmm::synth::dominant_emission_model;
use behavehmm::{seed, ActionAlphabet, EncodedSequence, HmmModel};
use rand::Rng;

fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn random_model(key: u64, n: usize, m: usize) -> HmmModel<f64> {
    let mut rng = seed::rng(1234, &[key]);
    let alphabet = ActionAlphabet::new((0..m).map(|i| format!("c{i}"))).unwrap();
    HmmModel::new(
        random_row(&mut rng, n),
        (0..n).map(|_| random_row(&mut rng, n)).collect(),
        (0..n).map(|_| random_row(&mut rng, m)).collect(),
        alphabet,
    )
    .unwrap()
}

fn random_obs(key: u64, len: usize, m: usize) -> EncodedSequence {
    let mut rng = seed::rng(99, &[key]);
    EncodedSequence::new("x", (0..len).map(|_| rng.random_range(0..m)).collect())
}

/// Every state path of length `len` with its joint probability, computed by direct products.
fn enumerate(model: &HmmModel<f64>, obs: &[usize]) -> Vec<(Vec<usize>, f64)> {
    let n = model.n_states();
    let total = n.pow(obs.len() as u32);
    (0..total)
        .map(|mut code| {
            let path: Vec<usize> = (0..obs.len())
                .map(|_| {
                    let s = code % n;
                    code /= n;
                    s
                })
                .collect();
            let mut p = model.pi()[path[0]] * model.emit()[path[0]][obs[0]];
            for t in 1..obs.len() {
                p *= model.trans()[path[t - 1]][path[t]] * model.emit()[path[t]][obs[t]];
            }
            (path, p)
        })
        .collect()
}

#[test]
fn likelihood_matches_path_enumeration() {
    for key in 0..30u64 {
        let n = 1 + (key as usize % 3);
        let len = 1 + (key as usize % 6);
        let model = random_model(key, n, 4);
        let obs = random_obs(key, len, 4);
        let brute: f64 = enumerate(&model, &obs.symbols).iter().map(|(_, p)| p).sum();
        let got = log_likelihood(&model, &obs).unwrap();
        assert!((got - brute.ln()).abs() <= 1e-12 * brute.ln().abs().max(1.0), "key {key}: {got} vs {}", brute.ln());
    }
}

#[test]
fn posteriors_match_enumerated_marginals() {
    for key in 0..15u64 {
        let model = random_model(100 + key, 3, 3);
        let obs = random_obs(key, 5, 3);
        let paths = enumerate(&model, &obs.symbols);
        let z: f64 = paths.iter().map(|(_, p)| p).sum();
        let post = posteriors(&model, &obs).unwrap();
        for t in 0..obs.len() {
            for i in 0..3 {
                let want: f64 = paths.iter().filter(|(s, _)| s[t] == i).map(|(_, p)| p).sum::<f64>() / z;
                assert!((post.gamma[t][i] - want).abs() < 1e-12, "gamma[{t}][{i}]");
            }
        }
        for t in 0..obs.len() - 1 {
            for i in 0..3 {
                for j in 0..3 {
                    let want: f64 =
                        paths.iter().filter(|(s, _)| s[t] == i && s[t + 1] == j).map(|(_, p)| p).sum::<f64>() / z;
                    assert!((post.xi[t][i][j] - want).abs() < 1e-12, "xi[{t}][{i}][{j}]");
                }
            }
        }
    }
}

#[test]
fn viterbi_finds_the_enumerated_argmax() {
    for key in 0..30u64 {
        let model = random_model(200 + key, 3, 4);
        let obs = random_obs(300 + key, 6, 4);
        let paths = enumerate(&model, &obs.symbols);
        let best = paths.iter().map(|(_, p)| *p).fold(0.0, f64::max);
        let (path, score) = viterbi_with_score(&model, &obs).unwrap();
        assert!((score - best.ln()).abs() < 1e-12, "key {key}");
        let (_, p) = paths.iter().find(|(s, _)| *s == path.states).unwrap();
        assert!((p.ln() - best.ln()).abs() < 1e-12, "returned path is not optimal");
        assert_eq!(path.frequencies.iter().sum::<usize>(), obs.len());
    }
}

#[test]
fn long_sequences_do_not_underflow() {
    let model = random_model(7, 4, 5);
    let obs = random_obs(7, 20_000, 5);
    let ll = log_likelihood(&model, &obs).unwrap();
    assert!(ll.is_finite() && ll < -10_000.0, "{ll}");
    let (_, score) = viterbi_with_score(&model, &obs).unwrap();
    assert!(score.is_finite() && score <= ll);
}

#[test]
fn single_precision_tracks_double_precision() {
    let model = random_model(8, 3, 4);
    let obs = random_obs(8, 300, 4);
    let ll64 = log_likelihood(&model, &obs).unwrap();
    let ll32 = log_likelihood(&model.cast::<f32>().unwrap(), &obs).unwrap() as f64;
    assert!((ll64 - ll32).abs() / ll64.abs() < 1e-4, "{ll64} vs {ll32}");
}

fn three_state_truth() -> HmmModel<f64> {
    dominant_emission_model(&ActionAlphabet::game_default(), &["D", "I", "A"], 0.8, 0.8).unwrap()
}

fn dataset(truth: &HmmModel<f64>, players: usize, len: usize, key: u64) -> Vec<EncodedSequence> {
    (0..players)
        .map(|p| behavehmm::hmm::sample(truth, len, seed::derive(key, &[p as u64])).unwrap().1)
        .collect()
}

#[test]
fn training_is_monotone_reproducible_and_reports_the_returned_model() {
    let truth = three_state_truth();
    let data = dataset(&truth, 40, 60, 5);
    let cfg = TrainConfig { restarts: 3, seed: 17, ..Default::default() };
    let a = fit::<f64>(&data, truth.alphabet(), 3, &cfg).unwrap();
    let b = fit::<f64>(&data, truth.alphabet(), 3, &cfg).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.per_restart_logliks, b.per_restart_logliks);
    for w in a.loglik_trace.windows(2) {
        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "log-likelihood fell from {} to {}", w[0], w[1]);
    }
    let best = a.per_restart_logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(a.loglik(), best);
    let recomputed = total_log_likelihood(&a.model, &data).unwrap();
    assert!((recomputed - a.loglik()).abs() < 1e-6 * recomputed.abs(), "{recomputed} vs {}", a.loglik());
    assert_eq!(a.model.meta.restarts, 3);
    assert_eq!(a.model.meta.seed, 17);

    let other = fit::<f64>(&data, truth.alphabet(), 3, &TrainConfig { seed: 18, ..cfg }).unwrap();
    assert_ne!(other.per_restart_logliks, a.per_restart_logliks);
}

#[test]
fn canonical_form_ignores_state_labels() {
    let truth = three_state_truth();
    let shuffled = truth.permute_states(&[2, 0, 1]).unwrap();
    assert_ne!(truth, shuffled);
    assert_eq!(canonicalize(&truth), canonicalize(&shuffled));
    let obs = random_obs(1, 50, truth.n_symbols());
    let d = log_likelihood(&truth, &obs).unwrap() - log_likelihood(&shuffled, &obs).unwrap();
    assert!(d.abs() < 1e-10);
}

#[test]
fn bic_penalty_counts_free_parameters() {
    // N = 2, M = 3: pi has 1, emissions 2 * 2, transitions 2 * 1 free entries.
    let score = bic(-100.0_f64, 2, 3, 50).unwrap();
    assert_eq!(score.d, 7);
    assert!((score.bic - (200.0 + 7.0 * 50f64.ln())).abs() < 1e-12);
}

#[test]
fn selection_prefers_the_generating_size() {
    let truth = three_state_truth();
    let data = dataset(&truth, 120, 100, 9);
    let cfg = TrainConfig { restarts: 4, seed: 2, ..Default::default() };
    let sel = select_model_size::<f64>(&data, truth.alphabet(), &[1, 2, 3, 4], &cfg).unwrap();
    assert_eq!(sel.best_n_states(), 3);
    assert_eq!(sel.table.iter().map(|r| r.n_states).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let min = sel.table.iter().min_by(|a, b| a.bic.partial_cmp(&b.bic).unwrap()).unwrap();
    assert_eq!(min.n_states, 3);
}
