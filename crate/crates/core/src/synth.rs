//! Synthetic persona datasets drawn from ground-truth HMMs.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionAlphabet, HmmModel, PlayerRecord};
use crate::error::{Error, Result};
use crate::hmm::{sample_with_rng, stationary_symbol_marginal};
use crate::ingest::decode;
use crate::seed;

/// A synthetic player class: a truth model plus a trait-score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    /// Generating model; its alphabet must match every other persona's.
    pub model: HmmModel<f64>,
    /// Mean trait score per category.
    #[serde(default)]
    pub trait_means: BTreeMap<String, f64>,
    /// Standard deviation shared by all categories.
    #[serde(default)]
    pub trait_sd: f64,
    pub n_players: usize,
    /// Inclusive `[min, max]` sequence length; each player draws uniformly from it.
    pub length_range: (usize, usize),
}

impl PersonaSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!(
                "persona {}: length range ({lo}, {hi}) must satisfy 1 <= min <= max",
                self.name
            )));
        }
        if self.n_players == 0 {
            return Err(Error::Config(format!("persona {}: n_players must be at least 1", self.name)));
        }
        if !(self.trait_sd >= 0.0 && self.trait_sd.is_finite()) {
            return Err(Error::Config(format!("persona {}: trait_sd must be finite and >= 0", self.name)));
        }
        if self.trait_means.values().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("persona {}: trait means must be finite", self.name)));
        }
        Ok(())
    }
}

/// Ground truth of one generated player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPlayer {
    pub player_id: String,
    pub persona: String,
    /// Generating state indices, 0-based, in the persona's own model.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub seed: u64,
    pub alphabet: ActionAlphabet,
    pub personas: Vec<String>,
    /// Sum of the personas' state counts.
    pub combined_states: usize,
    pub players: Vec<TruthPlayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Records in persona order, traits attached.
    pub records: Vec<PlayerRecord>,
    pub manifest: TruthManifest,
}

impl SynthOutput {
    /// Trait categories present in any record, sorted.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.records.iter().flat_map(|r| r.traits.keys()).collect();
        set.into_iter().cloned().collect()
    }

    /// `player_id → score` for one category.
    pub fn scores(&self, category: &str) -> BTreeMap<String, f64> {
        self.records
            .iter()
            .filter_map(|r| r.traits.get(category).map(|&s| (r.player_id.clone(), s)))
            .collect()
    }
}

/// Samples every persona's players. Player `j` of persona `p` draws from the stream
/// `(seed, p, j)`, so output does not depend on thread count.
pub fn generate(specs: &[PersonaSpec], seed: u64) -> Result<SynthOutput> {
    let first = specs.first().ok_or_else(|| Error::Config("at least one persona is required".into()))?;
    let alphabet = first.model.alphabet().clone();
    let mut names = BTreeSet::new();
    for s in specs {
        s.validate()?;
        if s.model.alphabet() != &alphabet {
            return Err(Error::Config(format!(
                "persona {} uses alphabet {:?}, expected {:?}",
                s.name,
                s.model.alphabet().codes(),
                alphabet.codes()
            )));
        }
        if !names.insert(s.name.as_str()) {
            return Err(Error::Config(format!("duplicate persona name {:?}", s.name)));
        }
    }

    let jobs: Vec<(usize, usize)> =
        specs.iter().enumerate().flat_map(|(p, s)| (0..s.n_players).map(move |j| (p, j))).collect();
    let width = specs.iter().map(|s| s.n_players).max().unwrap_or(1).to_string().len().max(3);
    let generated: Vec<(PlayerRecord, TruthPlayer)> = jobs
        .par_iter()
        .map(|&(p, j)| {
            let spec = &specs[p];
            let mut rng = seed::rng(seed, &[p as u64, j as u64]);
            let id = format!("{}-{:0width$}", spec.name, j + 1);
            let len = rng.random_range(spec.length_range.0..=spec.length_range.1);
            let (states, seq) = sample_with_rng(&spec.model, len, id.clone(), &mut rng)?;
            let mut record = PlayerRecord::new(id.clone(), decode(&seq, &alphabet)?);
            for (cat, &mean) in &spec.trait_means {
                let score = if spec.trait_sd > 0.0 {
                    Normal::new(mean, spec.trait_sd)
                        .map_err(|e| Error::Config(format!("persona {}: {e}", spec.name)))?
                        .sample(&mut rng)
                } else {
                    mean
                };
                record.traits.insert(cat.clone(), score);
            }
            let truth = TruthPlayer {
                player_id: id,
                persona: spec.name.clone(),
                states,
            };
            Ok((record, truth))
        })
        .collect::<Result<_>>()?;

    let (records, players) = generated.into_iter().unzip();
    Ok(SynthOutput {
        records,
        manifest: TruthManifest {
            seed,
            alphabet,
            personas: specs.iter().map(|s| s.name.clone()).collect(),
            combined_states: specs.iter().map(|s| s.model.n_states()).sum(),
            players,
        },
    })
}

/// A sticky model whose state `i` emits `codes[i]` with probability `dominance` and spreads
/// the rest uniformly over the other symbols.
pub fn dominant_emission_model(
    alphabet: &ActionAlphabet,
    codes: &[&str],
    dominance: f64,
    stay: f64,
) -> Result<HmmModel<f64>> {
    let n = codes.len();
    let m = alphabet.len();
    if n == 0 || m < 2 || !(0.0..=1.0).contains(&dominance) || !(0.0..=1.0).contains(&stay) {
        return Err(Error::Config("dominant_emission_model: invalid arguments".into()));
    }
    let mut emit = vec![vec![(1.0 - dominance) / (m - 1) as f64; m]; n];
    for (i, code) in codes.iter().enumerate() {
        let o = alphabet
            .index_of(code)
            .ok_or_else(|| Error::Config(format!("code {code} not in alphabet")))?;
        emit[i][o] = dominance;
    }
    let leave = if n > 1 { (1.0 - stay) / (n - 1) as f64 } else { 0.0 };
    let trans = (0..n)
        .map(|i| (0..n).map(|j| if i == j && n > 1 { stay } else if n == 1 { 1.0 } else { leave }).collect())
        .collect();
    HmmModel::new(vec![1.0 / n as f64; n], trans, emit, alphabet.clone())
}

/// Largest absolute gap between two models' long-run symbol frequencies.
pub fn marginal_gap(a: &HmmModel<f64>, b: &HmmModel<f64>) -> f64 {
    stationary_symbol_marginal(a)
        .iter()
        .zip(stationary_symbol_marginal(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Total-variation distance between corresponding transition rows.
pub fn transition_row_tv(a: &HmmModel<f64>, b: &HmmModel<f64>) -> Vec<f64> {
    a.trans()
        .iter()
        .zip(b.trans())
        .map(|(r, s)| 0.5 * r.iter().zip(s).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .collect()
}

/// Two personas with the same long-run action frequencies that differ only in how actions
/// are ordered.
///
/// Four codes `a, b, c, d` are drawn from the default alphabet. Both personas have two
/// states and uniform start. The `steady` persona pairs `{a, b}` and `{c, d}` in its states
/// and rarely switches; the `restless` persona pairs `{a, d}` and `{c, b}` and almost always
/// switches. With weight `w` on the first code of each pair, every persona emits
/// `a, c` at rate `w / 2` and `b, d` at `(1 - w) / 2`. Trait `expertise` separates the
/// personas; `extraversion` is pure noise.
pub fn order_sensitive_pair(seed: u64) -> Result<[PersonaSpec; 2]> {
    let mut rng = seed::rng(seed, &[u64::from_le_bytes(*b"ordpair\0")]);
    let alphabet = ActionAlphabet::game_default();
    let mut idx: Vec<usize> = (0..alphabet.len()).collect();
    idx.shuffle(&mut rng);
    let (a, b, c, d) = (idx[0], idx[1], idx[2], idx[3]);
    let stay: f64 = rng.random_range(0.85..=0.95);
    let w: f64 = rng.random_range(0.4..=0.6);

    let m = alphabet.len();
    let row = |hi: usize, lo: usize| {
        let mut r = vec![0.0; m];
        r[hi] = w;
        r[lo] = 1.0 - w;
        r
    };
    let steady = HmmModel::new(
        vec![0.5, 0.5],
        vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
        vec![row(a, b), row(c, d)],
        alphabet.clone(),
    )?;
    let restless = HmmModel::new(
        vec![0.5, 0.5],
        vec![vec![1.0 - stay, stay], vec![stay, 1.0 - stay]],
        vec![row(a, d), row(c, b)],
        alphabet,
    )?;
    let persona = |name: &str, model, expertise: f64| PersonaSpec {
        name: name.to_string(),
        model,
        trait_means: BTreeMap::from([("expertise".to_string(), expertise), ("extraversion".to_string(), 50.0)]),
        trait_sd: 5.0,
        n_players: 60,
        length_range: (200, 200),
    };
    Ok([persona("steady", steady, 70.0), persona("restless", restless, 30.0)])
}
