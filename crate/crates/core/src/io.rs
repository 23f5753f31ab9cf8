//! Reading and writing the on-disk artifacts.
//!
//! Every CSV has a header row. Floats are written in shortest round-trip form, so equal values always produce
//! equal bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::ClassificationReport;
use crate::domain::{ActionAlphabet, FeatureTable, PlayerRecord, StatePath};
use crate::error::{Error, Result};
use crate::hmm::BicRow;
use crate::ingest::{parse_log, ActionRate, LogFormat};
use crate::scalar::Scalar;
use crate::stats::StateAnovaRow;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?))
}

fn flush<W: Write>(mut w: W, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest round-trip form, switching to exponent notation for very small or large values.
fn num<T: Scalar>(x: T) -> String {
    fmt_f64(x.as_f64())
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::MalformedLine {
        line: line as usize,
        content: field.to_string(),
        reason: format!("{}: expected a number", path.display()),
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<V: Serialize + ?Sized>(path: &Path, value: &V) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    flush(w, path)
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let r = open(path)?;
    serde_json::from_reader(r).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn read_log(path: &Path, format: LogFormat) -> Result<Vec<PlayerRecord>> {
    parse_log(open(path)?, format).map_err(|e| match e {
        Error::MalformedLine { line, content, reason } => Error::MalformedLine {
            line,
            content,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    })
}

#[derive(Serialize)]
struct LogLine<'a> {
    player_id: &'a str,
    actions: &'a [String],
}

/// One `{"player_id", "actions"}` object per line; trait scores go to the traits file.
pub fn write_log(path: &Path, records: &[PlayerRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(
            &mut w,
            &LogLine {
                player_id: &r.player_id,
                actions: &r.tokens,
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    flush(w, path)
}

/// Filtered, ingested records together with the alphabet they are encoded against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsFile {
    pub alphabet: ActionAlphabet,
    pub records: Vec<PlayerRecord>,
}

pub fn write_records(path: &Path, file: &RecordsFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_records(path: &Path) -> Result<RecordsFile> {
    read_json(path)
}

/// `code,players,rate,kept`.
pub fn write_drops(path: &Path, report: &[ActionRate]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["code", "players", "rate", "kept"])?;
    for r in report {
        w.write_record([r.code.clone(), r.players.to_string(), fmt_f64(r.rate), r.kept.to_string()])?;
    }
    finish(w, path)
}

/// `n_states,loglik,D,bic`.
pub fn write_bic<T: Scalar>(path: &Path, rows: &[BicRow<T>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["n_states", "loglik", "D", "bic"])?;
    for r in rows {
        w.write_record([r.n_states.to_string(), num(r.loglik), r.d.to_string(), num(r.bic)])?;
    }
    finish(w, path)
}

pub fn write_paths(path: &Path, paths: &[StatePath]) -> Result<()> {
    let mut w = create(path)?;
    for p in paths {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    flush(w, path)
}

pub fn read_paths(path: &Path) -> Result<Vec<StatePath>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: StatePath = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            content: line.clone(),
            reason: format!("{}: {e}", path.display()),
        })?;
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

/// Trait scores by category, then player. Missing cells are simply absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traits {
    /// Column order of the file.
    pub categories: Vec<String>,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Traits {
    pub fn from_records(records: &[PlayerRecord]) -> Self {
        let cats: BTreeSet<&String> = records.iter().flat_map(|r| r.traits.keys()).collect();
        let mut scores: BTreeMap<String, BTreeMap<String, f64>> =
            cats.iter().map(|c| ((*c).clone(), BTreeMap::new())).collect();
        for r in records {
            for (c, &s) in &r.traits {
                scores.get_mut(c).expect("collected above").insert(r.player_id.clone(), s);
            }
        }
        Self {
            categories: cats.into_iter().cloned().collect(),
            scores,
        }
    }

    pub fn category(&self, name: &str) -> Result<&BTreeMap<String, f64>> {
        self.scores.get(name).ok_or_else(|| {
            Error::Config(format!("category {name:?} not in traits file (have: {})", self.categories.join(", ")))
        })
    }
}

pub fn read_traits(path: &Path) -> Result<Traits> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("player_id") {
        return Err(Error::Config(format!("{}: first column must be player_id", path.display())));
    }
    let categories: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut scores: BTreeMap<String, BTreeMap<String, f64>> =
        categories.iter().map(|c| (c.clone(), BTreeMap::new())).collect();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default().to_string();
        for (cat, field) in categories.iter().zip(rec.iter().skip(1)) {
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                continue;
            }
            scores.get_mut(cat).expect("built from header").insert(id.clone(), parse_f64(path, line, field)?);
        }
    }
    Ok(Traits { categories, scores })
}

pub fn write_traits(path: &Path, traits: &Traits) -> Result<()> {
    let ids: BTreeSet<&String> = traits.scores.values().flat_map(|m| m.keys()).collect();
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("player_id").chain(traits.categories.iter().map(String::as_str)))?;
    for id in ids {
        let mut row = vec![id.clone()];
        for c in &traits.categories {
            row.push(traits.scores[c].get(id).map_or_else(String::new, |&s| fmt_f64(s)));
        }
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// Contents of `features.csv`: `player_id,s1..sN[,a_<CODE>...][,<category>_label...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile<T: Scalar> {
    pub hmm: FeatureTable<T>,
    pub aggregate: Option<FeatureTable<T>>,
    /// Label columns, category → per-row labels in file order.
    pub labels: BTreeMap<String, Vec<u8>>,
}

pub fn write_features<T: Scalar>(path: &Path, file: &FeatureFile<T>) -> Result<()> {
    let hmm = &file.hmm;
    if let Some(agg) = &file.aggregate {
        if agg.ids() != hmm.ids() {
            return Err(Error::InvalidInput("aggregate and hmm feature rows are not aligned".into()));
        }
    }
    let mut header = vec!["player_id".to_string()];
    header.extend(hmm.names().iter().cloned());
    if let Some(agg) = &file.aggregate {
        header.extend(agg.names().iter().cloned());
    }
    header.extend(file.labels.keys().map(|c| format!("{c}_label")));
    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for (i, id) in hmm.ids().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(hmm.rows()[i].iter().map(|&x| num(x)));
        if let Some(agg) = &file.aggregate {
            row.extend(agg.rows()[i].iter().map(|&x| num(x)));
        }
        row.extend(file.labels.values().map(|l| l[i].to_string()));
        w.write_record(&row)?;
    }
    finish(w, path)
}

fn is_state_column(name: &str) -> bool {
    name.len() > 1 && name.starts_with('s') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Splits columns by name: `s<k>` are hmm features, `a_*` aggregate features,
/// `*_label` binary labels. Other columns are ignored.
pub fn read_features<T: Scalar>(path: &Path) -> Result<FeatureFile<T>> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("player_id") {
        return Err(Error::Config(format!("{}: first column must be player_id", path.display())));
    }
    let cols: Vec<(usize, &str)> = header.iter().enumerate().skip(1).collect();
    let pick = |f: &dyn Fn(&str) -> bool| cols.iter().filter(|(_, n)| f(n)).map(|&(i, _)| i).collect::<Vec<_>>();
    let s_cols = pick(&|n| is_state_column(n));
    let a_cols = pick(&|n| n.starts_with("a_"));
    let l_cols = pick(&|n| n.ends_with("_label"));
    if s_cols.is_empty() && a_cols.is_empty() {
        return Err(Error::Config(format!("{}: no s<k> or a_<code> feature columns", path.display())));
    }
    let names = |idx: &[usize]| idx.iter().map(|&i| header[i].to_string()).collect::<Vec<_>>();
    let mut hmm = FeatureTable::new(names(&s_cols));
    let mut agg = FeatureTable::new(names(&a_cols));
    let mut labels: BTreeMap<String, Vec<u8>> =
        l_cols.iter().map(|&i| (header[i].trim_end_matches("_label").to_string(), Vec::new())).collect();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        let row = |idx: &[usize]| -> Result<Vec<T>> {
            idx.iter().map(|&i| parse_f64(path, line, rec.get(i).unwrap_or("")).map(T::of)).collect()
        };
        hmm.push_row(id, row(&s_cols)?)?;
        agg.push_row(id, row(&a_cols)?)?;
        for &i in &l_cols {
            let cat = header[i].trim_end_matches("_label");
            let v = match rec.get(i).unwrap_or("") {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::MalformedLine {
                        line: line as usize,
                        content: other.to_string(),
                        reason: format!("{}: label must be 0 or 1", path.display()),
                    })
                }
            };
            labels.get_mut(cat).expect("built from header").push(v);
        }
    }
    for (cat, l) in &labels {
        hmm.set_labels(cat.clone(), l.clone())?;
    }
    Ok(FeatureFile {
        hmm,
        aggregate: (!a_cols.is_empty()).then_some(agg),
        labels,
    })
}

/// `category,family,fold_1..fold_k,mean_accuracy,n`.
pub fn write_report(path: &Path, reports: &[ClassificationReport]) -> Result<()> {
    let k = reports.iter().map(|r| r.fold_accuracies.len()).max().unwrap_or(0);
    let mut w = csv_writer(path)?;
    let mut header = vec!["category".to_string(), "family".to_string()];
    header.extend((1..=k).map(|i| format!("fold_{i}")));
    header.extend(["mean_accuracy".to_string(), "n".to_string()]);
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.category.clone(), r.family.to_string()];
        row.extend((0..k).map(|i| r.fold_accuracies.get(i).map_or_else(String::new, |&a| fmt_f64(a))));
        row.extend([fmt_f64(r.mean_accuracy), r.n.to_string()]);
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// `category,state,mean_top,mean_low,f_stat,df_between,df_within,p_value`; states are
/// 1-based and untestable rows carry `NA`.
pub fn write_anova<T: Scalar>(path: &Path, tables: &[(String, Vec<StateAnovaRow<T>>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["category", "state", "mean_top", "mean_low", "f_stat", "df_between", "df_within", "p_value"])?;
    for (cat, rows) in tables {
        for r in rows {
            let na = || "NA".to_string();
            let (f, d1, d2, p) = match &r.result {
                Some(a) => (num(a.f_stat), a.df_between.to_string(), a.df_within.to_string(), num(a.p_value)),
                None => (na(), na(), na(), na()),
            };
            w.write_record([cat.clone(), (r.state + 1).to_string(), num(r.mean_top), num(r.mean_low), f, d1, d2, p])?;
        }
    }
    finish(w, path)
}
