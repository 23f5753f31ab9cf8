//! Core data types shared across the pipeline.

use std::collections::{BTreeMap, HashMap};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Action codes of the role-playing game testbed, in canonical order.
pub const DEFAULT_ACTION_CODES: [&str; 13] = [
    "SQ", "CQ", "D", "DT", "DR", "A", "AQ", "I", "IN", "U", "E", "K", "L",
];

/// Human-readable names for [`DEFAULT_ACTION_CODES`].
pub const DEFAULT_ACTION_NAMES: [&str; 13] = [
    "Start Quest",
    "Complete Quest",
    "Normal Dialogue",
    "Dialogues with soliciting behavior",
    "Dialogues with Rude behavior",
    "Random Attack (Unmotivated, Friendly NPC)",
    "Quest Related Attack",
    "Interaction with environment's Objects",
    "Interaction with NPC",
    "Use Weapon/Item",
    "Equip Weapon/Item",
    "Kill",
    "Loot Item/Player",
];

/// Ordered observation symbol space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionAlphabet {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl ActionAlphabet {
    pub fn new<S: Into<String>>(codes: impl IntoIterator<Item = S>) -> Result<Self> {
        let codes: Vec<String> = codes.into_iter().map(Into::into).collect();
        if codes.is_empty() {
            return Err(Error::InvalidInput("alphabet must contain at least one code".into()));
        }
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidInput(format!("alphabet code #{i} is empty")));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate alphabet code {c:?}")));
            }
        }
        Ok(Self { codes, index })
    }

    /// The 13-code game alphabet.
    pub fn game_default() -> Self {
        Self::new(DEFAULT_ACTION_CODES).expect("default alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn code(&self, i: usize) -> &str {
        &self.codes[i]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }
}

impl Serialize for ActionAlphabet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionAlphabet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<String>::deserialize(d)?;
        ActionAlphabet::new(codes).map_err(D::Error::custom)
    }
}

/// One player's ordered action tokens plus optional trait scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub player_id: String,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub traits: BTreeMap<String, f64>,
}

impl PlayerRecord {
    pub fn new<S: Into<String>>(player_id: impl Into<String>, tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            player_id: player_id.into(),
            tokens: tokens.into_iter().map(Into::into).collect(),
            traits: BTreeMap::new(),
        }
    }
}

/// A player's tokens mapped to 0-based symbol indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub player_id: String,
    pub symbols: Vec<usize>,
}

impl EncodedSequence {
    pub fn new(player_id: impl Into<String>, symbols: Vec<usize>) -> Self {
        Self {
            player_id: player_id.into(),
            symbols,
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Provenance of a fitted model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub restarts: usize,
    pub final_loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Row-sum tolerance for stochastic vectors at precision `T`.
pub fn stochastic_tol<T: Scalar>() -> T {
    T::of(1e-9).max(T::epsilon() * T::of(64.0))
}

fn check_distribution<T: Scalar>(what: &str, row: &[T]) -> Result<()> {
    let mut sum = T::zero();
    for &p in row {
        if !p.is_finite() || p < T::zero() || p > T::one() + stochastic_tol::<T>() {
            return Err(Error::InvalidModel(format!("{what} has entry {p} outside [0, 1]")));
        }
        sum += p;
    }
    if (sum - T::one()).abs() > stochastic_tol::<T>() {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Discrete hidden Markov model λ = (π, A, B) over an action alphabet.
///
/// Probabilities are kept in linear space. Rows of `trans` and `emit` are distributions over
/// next states and symbols respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel<T: Scalar> {
    pi: Vec<T>,
    trans: Vec<Vec<T>>,
    emit: Vec<Vec<T>>,
    alphabet: ActionAlphabet,
    pub meta: TrainMeta,
}

impl<T: Scalar> HmmModel<T> {
    pub fn new(pi: Vec<T>, trans: Vec<Vec<T>>, emit: Vec<Vec<T>>, alphabet: ActionAlphabet) -> Result<Self> {
        let n = pi.len();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        if trans.len() != n || trans.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!("transition matrix must be {n}x{n}")));
        }
        let m = alphabet.len();
        if emit.len() != n || emit.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidModel(format!("emission matrix must be {n}x{m}")));
        }
        check_distribution("pi", &pi)?;
        for (i, row) in trans.iter().enumerate() {
            check_distribution(&format!("transition row {i}"), row)?;
        }
        for (i, row) in emit.iter().enumerate() {
            check_distribution(&format!("emission row {i}"), row)?;
        }
        Ok(Self {
            pi,
            trans,
            emit,
            alphabet,
            meta: TrainMeta::default(),
        })
    }

    /// Every parameter uniform.
    pub fn uniform(n_states: usize, alphabet: ActionAlphabet) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        let m = alphabet.len();
        let pn = T::one() / T::of_usize(n_states);
        let pm = T::one() / T::of_usize(m);
        Self::new(
            vec![pn; n_states],
            vec![vec![pn; n_states]; n_states],
            vec![vec![pm; m]; n_states],
            alphabet,
        )
    }

    pub fn with_meta(mut self, meta: TrainMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn pi(&self) -> &[T] {
        &self.pi
    }

    pub fn trans(&self) -> &[Vec<T>] {
        &self.trans
    }

    pub fn emit(&self) -> &[Vec<T>] {
        &self.emit
    }

    pub fn alphabet(&self) -> &ActionAlphabet {
        &self.alphabet
    }

    /// Relabels states: new state `k` is old state `order[k]`.
    pub fn permute_states(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&o| o >= n || std::mem::replace(&mut seen[o], true)) {
            return Err(Error::InvalidInput(format!("{order:?} is not a permutation of 0..{n}")));
        }
        let pi = order.iter().map(|&o| self.pi[o]).collect();
        let trans = order
            .iter()
            .map(|&oi| order.iter().map(|&oj| self.trans[oi][oj]).collect())
            .collect();
        let emit = order.iter().map(|&o| self.emit[o].clone()).collect();
        Ok(Self {
            pi,
            trans,
            emit,
            alphabet: self.alphabet.clone(),
            meta: self.meta.clone(),
        })
    }

    /// Validates that every symbol of `seq` is inside this model's alphabet.
    pub fn check_sequence(&self, seq: &EncodedSequence) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::ZeroLengthSequence);
        }
        let m = self.n_symbols();
        if let Some(&bad) = seq.symbols.iter().find(|&&s| s >= m) {
            return Err(Error::InvalidInput(format!(
                "player {}: symbol {bad} out of range for {m} symbols",
                seq.player_id
            )));
        }
        Ok(())
    }

    /// Converts to another precision, re-validating the result.
    pub fn cast<U: Scalar>(&self) -> Result<HmmModel<U>> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        Ok(HmmModel::new(
            conv(&self.pi),
            self.trans.iter().map(|r| conv(r)).collect(),
            self.emit.iter().map(|r| conv(r)).collect(),
            self.alphabet.clone(),
        )?
        .with_meta(self.meta.clone()))
    }
}

fn raw_prob<T: Scalar>(x: T) -> Box<RawValue> {
    // 17 significant digits: enough to round-trip any f64 exactly.
    RawValue::from_string(format!("{:.16e}", x.as_f64())).expect("formatted float is valid JSON")
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    n_states: usize,
    n_symbols: usize,
    alphabet: &'a ActionAlphabet,
    pi: Vec<Box<RawValue>>,
    trans: Vec<Vec<Box<RawValue>>>,
    emit: Vec<Vec<Box<RawValue>>>,
    meta: &'a TrainMeta,
}

#[derive(Deserialize)]
struct ModelFileIn {
    n_states: usize,
    n_symbols: usize,
    alphabet: ActionAlphabet,
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    emit: Vec<Vec<f64>>,
    #[serde(default)]
    meta: TrainMeta,
}

impl<T: Scalar> Serialize for HmmModel<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let row = |r: &[T]| r.iter().map(|&x| raw_prob(x)).collect::<Vec<_>>();
        ModelFileOut {
            n_states: self.n_states(),
            n_symbols: self.n_symbols(),
            alphabet: &self.alphabet,
            pi: row(&self.pi),
            trans: self.trans.iter().map(|r| row(r)).collect(),
            emit: self.emit.iter().map(|r| row(r)).collect(),
            meta: &self.meta,
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for HmmModel<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ModelFileIn::deserialize(d)?;
        if f.n_states != f.pi.len() {
            return Err(D::Error::custom(format!(
                "n_states is {} but pi has {} entries",
                f.n_states,
                f.pi.len()
            )));
        }
        if f.n_symbols != f.alphabet.len() {
            return Err(D::Error::custom(format!(
                "n_symbols is {} but alphabet has {} codes",
                f.n_symbols,
                f.alphabet.len()
            )));
        }
        let conv = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        HmmModel::new(
            conv(f.pi),
            f.trans.into_iter().map(conv).collect(),
            f.emit.into_iter().map(conv).collect(),
            f.alphabet,
        )
        .map(|m| m.with_meta(f.meta))
        .map_err(D::Error::custom)
    }
}

/// Decoded hidden-state path of one player with its visit counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePath {
    pub player_id: String,
    pub states: Vec<usize>,
    pub frequencies: Vec<usize>,
}

impl StatePath {
    pub fn new(player_id: impl Into<String>, states: Vec<usize>, n_states: usize) -> Result<Self> {
        let mut frequencies = vec![0usize; n_states];
        for &s in &states {
            *frequencies
                .get_mut(s)
                .ok_or_else(|| Error::InvalidInput(format!("state {s} out of range for {n_states} states")))? += 1;
        }
        Ok(Self {
            player_id: player_id.into(),
            states,
            frequencies,
        })
    }

    pub fn n_states(&self) -> usize {
        self.frequencies.len()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Re-checks the invariants after deserialization.
    pub fn validate(&self) -> Result<()> {
        let n = self.frequencies.len();
        let rebuilt = Self::new(self.player_id.clone(), self.states.clone(), n)?;
        if rebuilt.frequencies != self.frequencies {
            return Err(Error::InvalidInput(format!(
                "player {}: frequencies do not match states",
                self.player_id
            )));
        }
        Ok(())
    }
}

/// 1-based state name as printed to users, e.g. `S1`.
pub fn state_name(i: usize) -> String {
    format!("S{}", i + 1)
}

/// Per-player feature rows with optional binary labels per category.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T: Scalar> {
    names: Vec<String>,
    ids: Vec<String>,
    rows: Vec<Vec<T>>,
    labels: BTreeMap<String, Vec<u8>>,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            ids: Vec::new(),
            rows: Vec::new(),
            labels: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, id: impl Into<String>, row: Vec<T>) -> Result<()> {
        let id = id.into();
        if row.len() != self.names.len() {
            return Err(Error::InvalidInput(format!(
                "player {id}: {} features, expected {}",
                row.len(),
                self.names.len()
            )));
        }
        self.ids.push(id);
        self.rows.push(row);
        Ok(())
    }

    /// Attaches labels aligned with the current row order.
    pub fn set_labels(&mut self, category: impl Into<String>, labels: Vec<u8>) -> Result<()> {
        let category = category.into();
        if labels.len() != self.ids.len() {
            return Err(Error::InvalidInput(format!(
                "category {category}: {} labels for {} rows",
                labels.len(),
                self.ids.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidInput(format!("category {category}: labels must be 0 or 1")));
        }
        self.labels.insert(category, labels);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<&[T]> {
        self.ids.iter().position(|x| x == id).map(|i| self.rows[i].as_slice())
    }
}
