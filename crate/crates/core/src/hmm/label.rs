use std::collections::BTreeMap;

use serde::Serialize;

use crate::domain::{state_name, HmmModel};
use crate::scalar::Scalar;

pub const DEFAULT_DOMINANCE: f64 = 0.2;

/// Semantic behavior label for each game action code.
pub fn default_label_map() -> BTreeMap<String, String> {
    [
        ("D", "Social"),
        ("DT", "Social"),
        ("DR", "Social"),
        ("IN", "Engaging"),
        ("A", "Aggressive"),
        ("U", "Achieving"),
        ("AQ", "Achieving"),
        ("SQ", "Achieving"),
        ("CQ", "Achieving"),
        ("I", "Exploring"),
        ("L", "Exploring"),
        ("E", "Exploring"),
        ("K", "Exploring"),
    ]
    .into_iter()
    .map(|(c, l)| (c.to_string(), l.to_string()))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateLabel {
    pub state: usize,
    pub name: String,
    /// Dominant action codes, most probable first.
    pub codes: Vec<String>,
    pub label: String,
}

/// Names each state after its dominant emissions: codes with probability at least
/// `threshold`, or the single most probable code when none reaches it.
///
/// Codes missing from `labels` are labeled by the code itself.
pub fn label_states<T: Scalar>(
    model: &HmmModel<T>,
    labels: &BTreeMap<String, String>,
    threshold: f64,
) -> Vec<StateLabel> {
    let alphabet = model.alphabet();
    let threshold = T::of(threshold);
    model
        .emit()
        .iter()
        .enumerate()
        .map(|(state, row)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            // stable sort keeps lower symbol indices first among equal probabilities
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("probabilities are finite"));
            let mut dominant: Vec<usize> = order.iter().copied().filter(|&o| row[o] >= threshold).collect();
            if dominant.is_empty() {
                dominant.push(order[0]);
            }
            let codes: Vec<String> = dominant.iter().map(|&o| alphabet.code(o).to_string()).collect();
            let mut parts: Vec<&str> = Vec::new();
            for c in &codes {
                let l = labels.get(c).map(String::as_str).unwrap_or(c.as_str());
                if !parts.contains(&l) {
                    parts.push(l);
                }
            }
            StateLabel {
                state,
                name: state_name(state),
                label: parts.join("/"),
                codes,
            }
        })
        .collect()
}
