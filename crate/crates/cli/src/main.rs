mod config;
mod pipeline;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use behavehmm::classify::{compare_feature_families, cross_validate, CvConfig, FeatureFamily, LogisticConfig, Target, TraitTarget};
use behavehmm::features::{aggregate_feature_table, binarize, state_feature_table};
use behavehmm::hmm::{canonicalize, fit, select_model_size_with, viterbi, SampleSize, TrainConfig};
use behavehmm::ingest::{encode, filter_rare_actions, LogFormat, RateMode};
use behavehmm::io::{self, FeatureFile, RecordsFile};
use behavehmm::stats::state_frequency_anova;
use behavehmm::synth::{generate, order_sensitive_pair, PersonaSpec};
use behavehmm::{Error, Model, Result, StatePath};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use crate::config::{PipelineConfig, StateList};

#[derive(Parser)]
#[command(name = "behavehmm", version, about = "HMM behavior modeling of player action logs")]
struct Cli {
    /// Base random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print errors
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Minimum probability of every fitted matrix entry
    #[arg(long, default_value_t = 1e-8)]
    floor: f64,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
            floor: self.floor,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Two personas with equal action frequencies but different action order
    OrderPair,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw log, drop rare actions and write a records file
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: LogFormat,
        #[arg(long, default_value_t = 0.10)]
        min_rate: f64,
        #[arg(long, default_value = "players")]
        rate_mode: RateMode,
        /// Records output; the drop report goes next to it as `<stem>.drops.csv`
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic persona dataset
    Synth {
        /// Persona spec file (JSON list of personas)
        #[arg(long, required_unless_present = "preset")]
        spec: Option<PathBuf>,
        #[arg(long, conflicts_with = "spec")]
        preset: Option<Preset>,
        #[arg(long)]
        out_logs: PathBuf,
        #[arg(long)]
        out_traits: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
    },
    /// Fit one HMM by Baum-Welch
    Train {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        states: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep state counts and keep the BIC minimizer
    Select {
        #[arg(long)]
        records: PathBuf,
        /// e.g. `1..10` or `2,3,5`
        #[arg(long, default_value = "1..10")]
        states: StateList,
        #[arg(long, default_value = "symbols")]
        sample_size: SampleSize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Viterbi-decode every player
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the state-frequency feature table
    Features {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        raw_counts: bool,
        /// Adds `<category>_label` columns (mean split over all players)
        #[arg(long)]
        traits: Option<PathBuf>,
        /// Adds `a_<CODE>` aggregate-count columns
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated logistic regression per category
    Classify {
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated; default: every label column (or traits column)
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Aggregate-family features for a paired comparison
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Raw trait scores; binarized inside each training fold instead of using label columns
        #[arg(long)]
        traits: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-state ANOVA between the top and low scorers of a category
    Anova {
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        traits: PathBuf,
        /// Comma-separated categories
        #[arg(long, value_delimiter = ',', required = true)]
        category: Vec<String>,
        #[arg(long, default_value_t = 15)]
        k: usize,
        #[arg(long)]
        raw_counts: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run ingest → select → decode → features → classify → anova
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long)]
    traits: Option<PathBuf>,
    #[arg(long)]
    min_rate: Option<f64>,
    #[arg(long)]
    rate_mode: Option<RateMode>,
    #[arg(long)]
    states: Option<StateList>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    #[arg(long)]
    raw_counts: bool,
}

impl PipelineArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.logs {
            cfg.logs = v.clone();
        }
        if let Some(v) = &self.traits {
            cfg.traits = v.clone();
        }
        if let Some(v) = self.min_rate {
            cfg.min_rate = v;
        }
        if let Some(v) = self.rate_mode {
            cfg.rate_mode = v;
        }
        if let Some(v) = &self.states {
            cfg.states = v.0.clone();
        }
        if let Some(v) = self.restarts {
            cfg.train.restarts = v;
        }
        if let Some(v) = self.k {
            cfg.k_folds = v;
        }
        if let Some(v) = &self.categories {
            cfg.categories = v.clone();
        }
        if self.raw_counts {
            cfg.raw_counts = true;
        }
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn drops_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "records".into());
    out.with_file_name(format!("{stem}.drops.csv"))
}

fn decode_all(model: &Model, records: &RecordsFile) -> Result<Vec<StatePath>> {
    let seqs = encode(&records.records, model.alphabet())?;
    seqs.par_iter().map(|s| viterbi(model, s)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest { input, format, min_rate, rate_mode, out } => {
            let records = io::read_log(&input, format)?;
            let outcome = filter_rare_actions(&records, min_rate, rate_mode)?;
            for d in outcome.dropped() {
                info!("dropped {} (rate {:.4})", d.code, d.rate);
            }
            io::write_records(&out, &RecordsFile { alphabet: outcome.alphabet, records: outcome.records })?;
            io::write_drops(&drops_path(&out), &outcome.report)?;
        }
        Command::Synth { spec, preset, out_logs, out_traits, out_manifest } => {
            let specs: Vec<PersonaSpec> = match (spec, preset) {
                (Some(p), _) => io::read_json(&p)?,
                (None, Some(Preset::OrderPair)) => order_sensitive_pair(seed)?.to_vec(),
                (None, None) => unreachable!("clap requires one of --spec/--preset"),
            };
            let out = generate(&specs, seed)?;
            io::write_log(&out_logs, &out.records)?;
            io::write_traits(&out_traits, &io::Traits::from_records(&out.records))?;
            io::write_json(&out_manifest, &out.manifest)?;
            info!("{} players from {} personas", out.records.len(), specs.len());
        }
        Command::Train { records, states, train, out } => {
            let rec = io::read_records(&records)?;
            let seqs = encode(&rec.records, &rec.alphabet)?;
            let fit = fit::<f64>(&seqs, &rec.alphabet, states, &train.config(seed))?;
            info!("log-likelihood {:.6}", fit.loglik());
            io::write_json(&out, &canonicalize(&fit.model))?;
        }
        Command::Select { records, states, sample_size, train, out, report } => {
            let rec = io::read_records(&records)?;
            let seqs = encode(&rec.records, &rec.alphabet)?;
            let sel = select_model_size_with::<f64>(&seqs, &rec.alphabet, &states.0, &train.config(seed), sample_size)?;
            info!("selected {} states", sel.best_n_states());
            io::write_bic(&report, &sel.table)?;
            io::write_json(&out, &canonicalize(&sel.best.model))?;
        }
        Command::Decode { model, records, out } => {
            let model: Model = io::read_json(&model)?;
            let rec = io::read_records(&records)?;
            io::write_paths(&out, &decode_all(&model, &rec)?)?;
        }
        Command::Features { paths, model, raw_counts, traits, records, out } => {
            let model: Model = io::read_json(&model)?;
            let paths = io::read_paths(&paths)?;
            let hmm = state_feature_table::<f64>(&paths, model.n_states(), !raw_counts)?;
            let aggregate = match records {
                Some(p) => Some(aggregate_table_for(&io::read_records(&p)?, hmm.ids(), !raw_counts)?),
                None => None,
            };
            let labels = match traits {
                Some(p) => label_columns(&io::read_traits(&p)?, hmm.ids(), &[])?,
                None => BTreeMap::new(),
            };
            io::write_features(&out, &FeatureFile { hmm, aggregate, labels })?;
        }
        Command::Classify { features, categories, k, compare, traits, l2, out } => {
            let cfg = CvConfig { k, seed, logistic: LogisticConfig { l2, ..Default::default() } };
            let file = io::read_features::<f64>(&features)?;
            let aggregate = match compare {
                Some(p) => Some(
                    io::read_features::<f64>(&p)?
                        .aggregate
                        .ok_or_else(|| Error::Config(format!("{}: no a_<code> columns", p.display())))?,
                ),
                None => file.aggregate.clone(),
            };
            let targets = match &traits {
                Some(p) => score_targets(&io::read_traits(p)?, &categories)?,
                None => {
                    let cats: Vec<String> =
                        if categories.is_empty() { file.labels.keys().cloned().collect() } else { categories.clone() };
                    let mut t = BTreeMap::new();
                    for c in cats {
                        let l = file.labels.get(&c).ok_or_else(|| {
                            Error::Config(format!("no {c}_label column in {}; pass --traits", features.display()))
                        })?;
                        t.insert(c, TraitTarget::Labels(file.hmm.ids().iter().cloned().zip(l.iter().copied()).collect()));
                    }
                    t
                }
            };
            if targets.is_empty() {
                return Err(Error::Config("no categories to classify".into()));
            }
            let reports = match aggregate {
                Some(agg) => compare_feature_families(&file.hmm, &agg, &targets, &cfg)?
                    .into_iter()
                    .flat_map(|p| [p.hmm, p.aggregate])
                    .collect::<Vec<_>>(),
                None => single_family(&file.hmm, &targets, &cfg)?,
            };
            io::write_report(&out, &reports)?;
        }
        Command::Anova { paths, traits, category, k, raw_counts, out } => {
            let paths = io::read_paths(&paths)?;
            let traits = io::read_traits(&traits)?;
            let mut tables = Vec::new();
            for c in category {
                let rows = state_frequency_anova(&paths, traits.category(&c)?, k, !raw_counts)?;
                tables.push((c, rows));
            }
            io::write_anova(&out, &tables)?;
        }
        Command::Pipeline(args) => {
            let cfg = args.resolve(cli.seed)?;
            pipeline::run(&cfg).map_err(|f| {
                eprintln!("pipeline stage {} failed", f.stage);
                f.error
            })?;
        }
    }
    Ok(())
}

/// Aggregate counts for the players in `ids`, in that order.
pub(crate) fn aggregate_table_for(
    rec: &RecordsFile,
    ids: &[String],
    normalize: bool,
) -> Result<behavehmm::Features> {
    let by_id: BTreeMap<&str, &behavehmm::PlayerRecord> = rec.records.iter().map(|r| (r.player_id.as_str(), r)).collect();
    let ordered = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| (*r).clone())
                .ok_or_else(|| Error::InvalidInput(format!("player {id} has a path but no record")))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_feature_table(&ordered, &rec.alphabet, normalize)
}

/// Mean-split labels over the players in `ids` for the chosen (or all) categories.
pub(crate) fn label_columns(
    traits: &io::Traits,
    ids: &[String],
    categories: &[String],
) -> Result<BTreeMap<String, Vec<u8>>> {
    let cats = if categories.is_empty() { traits.categories.clone() } else { categories.to_vec() };
    let mut out = BTreeMap::new();
    for c in cats {
        let all = traits.category(&c)?;
        let present: BTreeMap<String, f64> = ids
            .iter()
            .map(|id| {
                all.get(id)
                    .map(|&s| (id.clone(), s))
                    .ok_or_else(|| Error::InvalidInput(format!("category {c}: no score for player {id}")))
            })
            .collect::<Result<_>>()?;
        let (labels, rule) = binarize(&c, &present)?;
        info!("{c}: mean {:.4}", rule.mean);
        out.insert(c, ids.iter().map(|id| labels[id]).collect());
    }
    Ok(out)
}

pub(crate) fn score_targets(
    traits: &io::Traits,
    categories: &[String],
) -> Result<BTreeMap<String, TraitTarget<f64>>> {
    let cats = if categories.is_empty() { traits.categories.clone() } else { categories.to_vec() };
    cats.into_iter()
        .map(|c| Ok((c.clone(), TraitTarget::Scores(traits.category(&c)?.clone()))))
        .collect()
}

fn single_family(
    table: &behavehmm::Features,
    targets: &BTreeMap<String, TraitTarget<f64>>,
    cfg: &CvConfig,
) -> Result<Vec<behavehmm::classify::ClassificationReport>> {
    let ids = table.ids();
    targets
        .iter()
        .map(|(c, t)| {
            let fold_cfg = CvConfig { seed: behavehmm::seed::derive(cfg.seed, &[behavehmm::seed::hash_str(c)]), ..*cfg };
            let missing = |id: &String| Error::InvalidInput(format!("category {c}: no target for {id}"));
            match t {
                TraitTarget::Labels(m) => {
                    let y = ids.iter().map(|id| m.get(id).copied().ok_or_else(|| missing(id))).collect::<Result<Vec<u8>>>()?;
                    cross_validate(c, FeatureFamily::Hmm, table.rows(), Target::Labels(&y), &fold_cfg)
                }
                TraitTarget::Scores(m) => {
                    let s = ids.iter().map(|id| m.get(id).copied().ok_or_else(|| missing(id))).collect::<Result<Vec<f64>>>()?;
                    cross_validate(c, FeatureFamily::Hmm, table.rows(), Target::Scores(&s), &fold_cfg)
                }
            }
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_config() { 2 } else { 1 })
        }
    }
}
