//! Play-log parsing, rare-action filtering and symbol encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionAlphabet, EncodedSequence, PlayerRecord, DEFAULT_ACTION_CODES};
use crate::error::{Error, Result};

/// Raw log layouts accepted by [`parse_log`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    /// One JSON object per line: `{"player_id": "...", "actions": ["SQ", ...]}`.
    Jsonl,
    /// `player_id<TAB>space separated tokens`.
    Tsv,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(LogFormat::Jsonl),
            "tsv" => Ok(LogFormat::Tsv),
            other => Err(Error::Config(format!("unknown log format {other:?} (expected jsonl or tsv)"))),
        }
    }
}

/// How the occurrence rate of an action is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    /// Fraction of players who perform the action at least once.
    #[default]
    Players,
    /// Fraction of all tokens that are this action.
    Tokens,
}

impl FromStr for RateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "players" => Ok(RateMode::Players),
            "tokens" => Ok(RateMode::Tokens),
            other => Err(Error::Config(format!("unknown rate mode {other:?} (expected players or tokens)"))),
        }
    }
}

#[derive(Deserialize)]
struct JsonLine {
    player_id: String,
    actions: Vec<String>,
    #[serde(default)]
    traits: BTreeMap<String, f64>,
}

fn malformed(line: usize, content: &str, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        line,
        content: content.to_string(),
        reason: reason.into(),
    }
}

fn parse_line(format: LogFormat, lineno: usize, line: &str) -> Result<Option<JsonLine>> {
    let trimmed = line.trim();
    if trimmed.is_empty() || trimmed.starts_with('#') {
        return Ok(None);
    }
    let parsed = match format {
        LogFormat::Jsonl => {
            serde_json::from_str::<JsonLine>(trimmed).map_err(|e| malformed(lineno, line, e.to_string()))?
        }
        LogFormat::Tsv => {
            let (id, rest) = line
                .split_once('\t')
                .ok_or_else(|| malformed(lineno, line, "expected <player_id><TAB><tokens>"))?;
            let id = id.trim();
            if lineno == 1 && id == "player_id" {
                return Ok(None);
            }
            JsonLine {
                player_id: id.to_string(),
                actions: rest.split_whitespace().map(str::to_string).collect(),
                traits: BTreeMap::new(),
            }
        }
    };
    if parsed.player_id.is_empty() {
        return Err(malformed(lineno, line, "empty player_id"));
    }
    if parsed.actions.iter().any(|a| a.trim().is_empty()) {
        return Err(malformed(lineno, line, "empty action token"));
    }
    Ok(Some(parsed))
}

/// Reads one record per line. Records sharing a player id are concatenated in file order.
pub fn parse_log<R: BufRead>(input: R, format: LogFormat) -> Result<Vec<PlayerRecord>> {
    let mut records: Vec<PlayerRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| malformed(lineno, "", e.to_string()))?;
        let Some(parsed) = parse_line(format, lineno, &line)? else {
            continue;
        };
        match by_id.get(&parsed.player_id) {
            Some(&idx) => {
                warn!(
                    "line {lineno}: duplicate player_id {:?}; appending to earlier record",
                    parsed.player_id
                );
                let rec = &mut records[idx];
                rec.tokens.extend(parsed.actions);
                rec.traits.extend(parsed.traits);
            }
            None => {
                by_id.insert(parsed.player_id.clone(), records.len());
                records.push(PlayerRecord {
                    player_id: parsed.player_id,
                    tokens: parsed.actions,
                    traits: parsed.traits,
                });
            }
        }
    }
    Ok(drop_empty(records))
}

fn drop_empty(records: Vec<PlayerRecord>) -> Vec<PlayerRecord> {
    records
        .into_iter()
        .filter(|r| {
            if r.tokens.is_empty() {
                warn!("player {:?} has no valid tokens; omitted", r.player_id);
                false
            } else {
                true
            }
        })
        .collect()
}

/// Occurrence statistics of one action code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRate {
    pub code: String,
    /// Players performing the action at least once.
    pub players: usize,
    /// Total occurrences across all players.
    pub tokens: usize,
    pub rate: f64,
    pub kept: bool,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub records: Vec<PlayerRecord>,
    pub alphabet: ActionAlphabet,
    /// One row per observed code, in alphabet order of the unfiltered data.
    pub report: Vec<ActionRate>,
}

impl FilterOutcome {
    pub fn dropped(&self) -> impl Iterator<Item = &ActionRate> {
        self.report.iter().filter(|r| !r.kept)
    }
}

/// Known game codes first in canonical order, then unseen codes by first appearance.
pub fn observed_alphabet_order(records: &[PlayerRecord]) -> Vec<String> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut novel = Vec::new();
    for tok in records.iter().flat_map(|r| r.tokens.iter()) {
        if seen.insert(tok) && !DEFAULT_ACTION_CODES.contains(&tok.as_str()) {
            novel.push(tok.clone());
        }
    }
    DEFAULT_ACTION_CODES
        .iter()
        .filter(|c| seen.contains(**c))
        .map(|c| c.to_string())
        .chain(novel)
        .collect()
}

/// Drops action codes whose occurrence rate is below `threshold`.
pub fn filter_rare_actions(records: &[PlayerRecord], threshold: f64, mode: RateMode) -> Result<FilterOutcome> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no player records to filter".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!("rate threshold {threshold} outside [0, 1]")));
    }
    let order = observed_alphabet_order(records);
    let mut players: HashMap<&str, usize> = HashMap::new();
    let mut tokens: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let mut mine: HashSet<&str> = HashSet::new();
        for t in &r.tokens {
            *tokens.entry(t).or_default() += 1;
            mine.insert(t);
        }
        for t in mine {
            *players.entry(t).or_default() += 1;
        }
    }
    let n_players = records.len() as f64;
    let n_tokens: usize = records.iter().map(|r| r.tokens.len()).sum();

    let report: Vec<ActionRate> = order
        .iter()
        .map(|code| {
            let p = players[code.as_str()];
            let t = tokens[code.as_str()];
            let rate = match mode {
                RateMode::Players => p as f64 / n_players,
                RateMode::Tokens => t as f64 / n_tokens as f64,
            };
            ActionRate {
                code: code.clone(),
                players: p,
                tokens: t,
                rate,
                kept: rate >= threshold - 1e-12,
            }
        })
        .collect();

    let kept: Vec<&str> = report.iter().filter(|r| r.kept).map(|r| r.code.as_str()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyAlphabet);
    }
    let alphabet = ActionAlphabet::new(kept.iter().copied())?;
    let filtered = records
        .iter()
        .map(|r| PlayerRecord {
            player_id: r.player_id.clone(),
            tokens: r.tokens.iter().filter(|t| alphabet.contains(t)).cloned().collect(),
            traits: r.traits.clone(),
        })
        .collect();
    Ok(FilterOutcome {
        records: drop_empty(filtered),
        alphabet,
        report,
    })
}

pub fn encode_one(record: &PlayerRecord, alphabet: &ActionAlphabet) -> Result<EncodedSequence> {
    let symbols = record
        .tokens
        .iter()
        .map(|t| {
            alphabet.index_of(t).ok_or_else(|| Error::UnknownToken {
                player_id: record.player_id.clone(),
                token: t.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSequence::new(record.player_id.clone(), symbols))
}

/// Maps tokens to their 0-based alphabet positions.
pub fn encode(records: &[PlayerRecord], alphabet: &ActionAlphabet) -> Result<Vec<EncodedSequence>> {
    records.iter().map(|r| encode_one(r, alphabet)).collect()
}

/// Inverse of [`encode_one`].
pub fn decode(seq: &EncodedSequence, alphabet: &ActionAlphabet) -> Result<Vec<String>> {
    seq.symbols
        .iter()
        .map(|&s| {
            (s < alphabet.len())
                .then(|| alphabet.code(s).to_string())
                .ok_or_else(|| Error::InvalidInput(format!("symbol {s} outside alphabet of {}", alphabet.len())))
        })
        .collect()
}
