//! The end-to-end `pipeline` command.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use behavehmm::classify::{compare_feature_families, CvConfig, LogisticConfig};
use behavehmm::features::state_feature_table;
use behavehmm::hmm::{canonicalize, default_label_map, label_states, select_model_size_with, StateLabel, DEFAULT_DOMINANCE};
use behavehmm::ingest::{encode, filter_rare_actions, ActionRate};
use behavehmm::io::{self, FeatureFile, RecordsFile};
use behavehmm::stats::state_frequency_anova;
use behavehmm::{Error, Result};
use log::{info, warn};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::{aggregate_table_for, decode_all, label_columns, score_targets};

pub const ARTIFACTS: [&str; 7] =
    ["model.json", "bic.csv", "paths.jsonl", "features.csv", "report.csv", "anova.csv", "manifest.json"];

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a PipelineConfig,
    seed: u64,
    n_players: usize,
    alphabet: &'a [String],
    dropped_actions: Vec<&'a ActionRate>,
    selected_states: usize,
    final_loglik: f64,
    states: &'a [StateLabel],
    categories: &'a [String],
    anova_k: usize,
    artifacts: [&'static str; 7],
    /// Excluded from reproducibility comparisons.
    wall_time_secs: f64,
}

/// A failed stage and its cause.
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

trait Stage<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage: name, error })
    }
}

/// Runs every stage, writing into `cfg.out_dir`. On failure, already written artifacts are
/// kept and a `FAILED` file names the stage.
pub fn run(cfg: &PipelineConfig) -> std::result::Result<(), StageError> {
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("setup")?;
    let marker = dir.join("FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e)).stage("setup")?;
    }
    let result = stages(cfg, dir);
    if let Err(f) = &result {
        let text = format!("stage: {}\nerror: {}\n", f.stage, f.error);
        if let Err(e) = std::fs::write(&marker, text) {
            warn!("could not write {}: {e}", marker.display());
        }
    }
    result
}

fn stages(cfg: &PipelineConfig, dir: &Path) -> std::result::Result<(), StageError> {
    let started = Instant::now();
    let seed = cfg.train.seed;

    let traits = io::read_traits(&cfg.traits).stage("ingest")?;
    let raw = io::read_log(&cfg.logs, cfg.format).stage("ingest")?;
    let outcome = filter_rare_actions(&raw, cfg.min_rate, cfg.rate_mode).stage("ingest")?;
    let records = RecordsFile {
        alphabet: outcome.alphabet.clone(),
        records: outcome.records.clone(),
    };
    info!(
        "ingest: {} players, {} of {} actions kept",
        records.records.len(),
        records.alphabet.len(),
        outcome.report.len()
    );

    let seqs = encode(&records.records, &records.alphabet).stage("select")?;
    let sel = select_model_size_with::<f64>(&seqs, &records.alphabet, &cfg.states, &cfg.train, cfg.bic_sample_size)
        .stage("select")?;
    let model = canonicalize(&sel.best.model);
    io::write_json(&dir.join("model.json"), &model).stage("select")?;
    io::write_bic(&dir.join("bic.csv"), &sel.table).stage("select")?;
    info!("select: {} states", model.n_states());

    let paths = decode_all(&model, &records).stage("decode")?;
    io::write_paths(&dir.join("paths.jsonl"), &paths).stage("decode")?;

    let normalize = !cfg.raw_counts;
    let hmm = state_feature_table::<f64>(&paths, model.n_states(), normalize).stage("features")?;
    let aggregate = aggregate_table_for(&records, hmm.ids(), normalize).stage("features")?;
    let categories = if cfg.categories.is_empty() { traits.categories.clone() } else { cfg.categories.clone() };
    let labels = label_columns(&traits, hmm.ids(), &categories).stage("features")?;
    let file = FeatureFile {
        hmm,
        aggregate: Some(aggregate),
        labels,
    };
    io::write_features(&dir.join("features.csv"), &file).stage("features")?;

    let cv = CvConfig {
        k: cfg.k_folds,
        seed,
        logistic: LogisticConfig {
            l2: cfg.l2,
            ..Default::default()
        },
    };
    let targets = score_targets(&traits, &categories).stage("classify")?;
    let paired = compare_feature_families(&file.hmm, file.aggregate.as_ref().expect("set above"), &targets, &cv)
        .stage("classify")?;
    for p in &paired {
        info!("classify: {} hmm {:.3} aggregate {:.3}", p.category, p.hmm.mean_accuracy, p.aggregate.mean_accuracy);
    }
    let reports: Vec<_> = paired.into_iter().flat_map(|p| [p.hmm, p.aggregate]).collect();
    io::write_report(&dir.join("report.csv"), &reports).stage("classify")?;

    let anova_k = cfg.anova_k.min(paths.len() / 2);
    if anova_k < cfg.anova_k {
        warn!("anova: only {} players; using groups of {anova_k}", paths.len());
    }
    let mut tables = Vec::new();
    for c in &categories {
        let scores: BTreeMap<String, f64> = traits.category(c).stage("anova")?.clone();
        tables.push((c.clone(), state_frequency_anova(&paths, &scores, anova_k, normalize).stage("anova")?));
    }
    io::write_anova(&dir.join("anova.csv"), &tables).stage("anova")?;

    let labels = label_states(&model, &default_label_map(), DEFAULT_DOMINANCE);
    let manifest = Manifest {
        tool: "behavehmm",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seed,
        n_players: records.records.len(),
        alphabet: records.alphabet.codes(),
        dropped_actions: outcome.dropped().collect(),
        selected_states: model.n_states(),
        final_loglik: sel.best.loglik(),
        states: &labels,
        categories: &categories,
        anova_k,
        artifacts: ARTIFACTS,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest).stage("manifest")?;
    Ok(())
}
