//! Per-category binary logistic regression with stratified k-fold cross-validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureTable;
use crate::error::{Error, Result};
use crate::features::BinarizationRule;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Ridge penalty on the weights (not the bias).
    pub l2: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient max-norm.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iters: 1000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFitMeta {
    pub iterations: usize,
    pub final_loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub meta: LogisticFitMeta,
    /// Loss after every accepted step, starting from the zero model.
    pub loss_trace: Vec<T>,
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot<T: Scalar>(w: &[T], x: &[T]) -> T {
    w.iter().zip(x).map(|(&a, &b)| a * b).sum()
}

fn check_training_data<T: Scalar>(features: &[Vec<T>], labels: &[u8]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let width = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidInput("feature rows have unequal lengths".into()));
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Degenerate("degenerate labels: both classes are required".into()));
    }
    Ok(width)
}

/// Mean negative log-likelihood plus `l2/2 · |w|²`, and its gradient `(∂w, ∂b)`.
pub fn loss_and_gradient<T: Scalar>(
    features: &[Vec<T>],
    labels: &[u8],
    weights: &[T],
    bias: T,
    l2: T,
) -> (T, Vec<T>, T) {
    let n = T::of_usize(features.len());
    let mut loss = T::zero();
    let mut gw = vec![T::zero(); weights.len()];
    let mut gb = T::zero();
    for (x, &y) in features.iter().zip(labels) {
        let z = dot(weights, x) + bias;
        let y = if y == 1 { T::one() } else { T::zero() };
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, &xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    let half = T::of(0.5);
    for (g, &w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
        loss += half * l2 * w * w;
    }
    (loss, gw, gb)
}

/// Full-batch gradient descent from the zero model with Armijo backtracking.
///
/// The step is scaled per coordinate by the inverse of a curvature bound
/// (`mean(x_j²)/4 + l2` for weights, `1/4` for the bias), which keeps the descent well
/// conditioned when features have different scales or the ridge penalty is large.
pub fn fit_logistic<T: Scalar>(features: &[Vec<T>], labels: &[u8], config: &LogisticConfig) -> Result<LogisticModel<T>> {
    let width = check_training_data(features, labels)?;
    if !(config.l2 >= 0.0) || !(config.tol > 0.0) {
        return Err(Error::Config("l2 must be non-negative and tol positive".into()));
    }
    let l2 = T::of(config.l2);
    let tol = T::of(config.tol);
    let armijo = T::of(1e-4);
    let min_step = T::of(1e-30);
    let quarter = T::of(0.25);
    let n = T::of_usize(features.len());

    let precond_w: Vec<T> = (0..width)
        .map(|j| {
            let msq = features.iter().map(|r| r[j] * r[j]).sum::<T>() / n;
            T::one() / (quarter * msq + l2).max(T::of(1e-12))
        })
        .collect();
    let precond_b = T::one() / quarter;

    let mut w = vec![T::zero(); width];
    let mut b = T::zero();
    let (mut loss, mut gw, mut gb) = loss_and_gradient(features, labels, &w, b, l2);
    let mut trace = vec![loss];
    let mut step = T::one();
    let mut iterations = 0;
    let mut converged = false;
    let max_norm = |gw: &[T], gb: T| gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
    while iterations < config.max_iters {
        if max_norm(&gw, gb) < tol {
            converged = true;
            break;
        }
        let dw: Vec<T> = gw.iter().zip(&precond_w).map(|(&g, &p)| g * p).collect();
        let db = gb * precond_b;
        let decrease = gw.iter().zip(&dw).map(|(&g, &d)| g * d).sum::<T>() + gb * db;
        let mut accepted = None;
        while step > min_step {
            let cw: Vec<T> = w.iter().zip(&dw).map(|(&wi, &d)| wi - step * d).collect();
            let cb = b - step * db;
            let (cl, cgw, cgb) = loss_and_gradient(features, labels, &cw, cb, l2);
            if cl <= loss - armijo * step * decrease {
                accepted = Some((cw, cb, cl, cgw, cgb));
                break;
            }
            step *= T::of(0.5);
        }
        let Some((cw, cb, cl, cgw, cgb)) = accepted else {
            // no descent possible at machine precision
            converged = true;
            break;
        };
        w = cw;
        b = cb;
        loss = cl;
        gw = cgw;
        gb = cgb;
        trace.push(loss);
        iterations += 1;
        step = (step * T::of(2.0)).min(T::of(1e3));
    }
    if !converged {
        converged = max_norm(&gw, gb) < tol;
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        meta: LogisticFitMeta {
            iterations,
            final_loss: loss.as_f64(),
            converged,
        },
        loss_trace: trace,
    })
}

/// `P(y = 1 | x)`.
pub fn predict<T: Scalar>(model: &LogisticModel<T>, x: &[T]) -> Result<T> {
    if x.len() != model.weights.len() {
        return Err(Error::InvalidInput(format!(
            "feature vector has {} entries, model expects {}",
            x.len(),
            model.weights.len()
        )));
    }
    Ok(sigmoid(dot(&model.weights, x) + model.bias))
}

/// Label 1 when the predicted probability is at least 0.5.
pub fn predict_label<T: Scalar>(model: &LogisticModel<T>, x: &[T]) -> Result<u8> {
    Ok(u8::from(predict(model, x)? >= T::of(0.5)))
}

/// Which feature family a report was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Hmm,
    Aggregate,
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureFamily::Hmm => "hmm",
            FeatureFamily::Aggregate => "aggregate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub category: String,
    pub family: FeatureFamily,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub n: usize,
}

/// What is being predicted for one category.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a, T> {
    /// Fixed binary labels.
    Labels(&'a [u8]),
    /// Raw trait scores, mean-split inside each training fold.
    Scores(&'a [T]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub logistic: LogisticConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 3,
            seed: 0,
            logistic: LogisticConfig::default(),
        }
    }
}

fn stratification_labels<T: Scalar>(category: &str, target: Target<'_, T>) -> Result<Vec<u8>> {
    match target {
        Target::Labels(l) => Ok(l.to_vec()),
        Target::Scores(s) => Ok(BinarizationRule::fit(category, s)?.apply_all(s)),
    }
}

/// Fold index per sample. Each class is shuffled independently and dealt round-robin, the
/// deal continuing across classes so that fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut rng = seed::rng(seed, &[]);
    let mut folds = vec![0usize; labels.len()];
    let mut dealt = 0usize;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Degenerate(format!(
                "class {class} has {} members, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = dealt % k;
            dealt += 1;
        }
    }
    Ok(folds)
}

fn run_folds<T: Scalar>(
    category: &str,
    features: &[Vec<T>],
    target: Target<'_, T>,
    folds: &[usize],
    k: usize,
    logistic: &LogisticConfig,
) -> Result<Vec<f64>> {
    (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..features.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..features.len()).filter(|&i| folds[i] == f).collect();
            let (train_y, test_y) = match target {
                Target::Labels(l) => (train.iter().map(|&i| l[i]).collect(), test.iter().map(|&i| l[i]).collect()),
                Target::Scores(s) => {
                    let train_scores: Vec<T> = train.iter().map(|&i| s[i]).collect();
                    let rule = BinarizationRule::fit(category, &train_scores)?;
                    (
                        rule.apply_all(&train_scores),
                        test.iter().map(|&i| rule.apply(s[i])).collect::<Vec<u8>>(),
                    )
                }
            };
            let train_x: Vec<Vec<T>> = train.iter().map(|&i| features[i].clone()).collect();
            let model = fit_logistic(&train_x, &train_y, logistic)
                .map_err(|e| Error::Degenerate(format!("category {category}, fold {}: {e}", f + 1)))?;
            let mut correct = 0usize;
            for (&i, &y) in test.iter().zip(&test_y) {
                if predict_label(&model, &features[i])? == y {
                    correct += 1;
                }
            }
            Ok(correct as f64 / test.len() as f64)
        })
        .collect()
}

fn report(category: &str, family: FeatureFamily, fold_accuracies: Vec<f64>, n: usize) -> ClassificationReport {
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    ClassificationReport {
        category: category.to_string(),
        family,
        fold_accuracies,
        mean_accuracy,
        n,
    }
}

/// Stratified k-fold accuracy of a logistic model. With [`Target::Scores`], the mean split is
/// refit on each training portion and applied to its held-out portion.
pub fn cross_validate<T: Scalar>(
    category: &str,
    family: FeatureFamily,
    features: &[Vec<T>],
    target: Target<'_, T>,
    config: &CvConfig,
) -> Result<ClassificationReport> {
    let n = features.len();
    let len = match target {
        Target::Labels(l) => l.len(),
        Target::Scores(s) => s.len(),
    };
    if len != n {
        return Err(Error::InvalidInput(format!("{n} feature rows but {len} targets")));
    }
    let strat = stratification_labels(category, target)?;
    let folds = stratified_folds(&strat, config.k, config.seed)?;
    let accs = run_folds(category, features, target, &folds, config.k, &config.logistic)?;
    Ok(report(category, family, accs, n))
}

/// Per-player prediction target for one category.
#[derive(Debug, Clone, PartialEq)]
pub enum TraitTarget<T> {
    Labels(BTreeMap<String, u8>),
    Scores(BTreeMap<String, T>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub category: String,
    pub hmm: ClassificationReport,
    pub aggregate: ClassificationReport,
}

/// Cross-validates both feature families on identical folds per category.
///
/// Folds for a category come from a stream derived from `(config.seed, category)`.
pub fn compare_feature_families<T: Scalar>(
    hmm: &FeatureTable<T>,
    aggregate: &FeatureTable<T>,
    targets: &BTreeMap<String, TraitTarget<T>>,
    config: &CvConfig,
) -> Result<Vec<PairedReport>> {
    let hmm_ids: BTreeSet<&String> = hmm.ids().iter().collect();
    let agg_ids: BTreeSet<&String> = aggregate.ids().iter().collect();
    if hmm_ids != agg_ids || hmm_ids.len() != hmm.len() {
        let diff: Vec<&str> = hmm_ids.symmetric_difference(&agg_ids).map(|s| s.as_str()).collect();
        return Err(Error::InvalidInput(format!(
            "feature tables cover different players: {}",
            diff.join(", ")
        )));
    }
    let ids = hmm.ids();
    let agg_rows: Vec<Vec<T>> = ids
        .iter()
        .map(|id| aggregate.row_of(id).expect("checked above").to_vec())
        .collect();

    targets
        .iter()
        .map(|(category, target)| {
            let missing: Vec<&str> = ids
                .iter()
                .filter(|id| match target {
                    TraitTarget::Labels(m) => !m.contains_key(*id),
                    TraitTarget::Scores(m) => !m.contains_key(*id),
                })
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "category {category}: no target for {}",
                    missing.join(", ")
                )));
            }
            let labels: Vec<u8>;
            let scores: Vec<T>;
            let tgt = match target {
                TraitTarget::Labels(m) => {
                    labels = ids.iter().map(|id| m[id]).collect();
                    Target::Labels(&labels)
                }
                TraitTarget::Scores(m) => {
                    scores = ids.iter().map(|id| m[id]).collect();
                    Target::Scores(&scores)
                }
            };
            let strat = stratification_labels(category, tgt)?;
            let fold_seed = seed::derive(config.seed, &[seed::hash_str(category)]);
            let folds = stratified_folds(&strat, config.k, fold_seed)?;
            let hmm_acc = run_folds(category, hmm.rows(), tgt, &folds, config.k, &config.logistic)?;
            let agg_acc = run_folds(category, &agg_rows, tgt, &folds, config.k, &config.logistic)?;
            Ok(PairedReport {
                category: category.clone(),
                hmm: report(category, FeatureFamily::Hmm, hmm_acc, ids.len()),
                aggregate: report(category, FeatureFamily::Aggregate, agg_acc, ids.len()),
            })
        })
        .collect()
}
