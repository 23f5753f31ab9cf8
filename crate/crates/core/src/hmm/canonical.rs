use std::cmp::Ordering;

use crate::domain::HmmModel;
use crate::scalar::Scalar;

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// State order used by [`canonicalize`]: descending argmax-emission symbol, then descending
/// initial probability, then descending emission row (lexicographic).
pub fn canonical_order<T: Scalar>(model: &HmmModel<T>) -> Vec<usize> {
    let keys: Vec<usize> = model.emit().iter().map(|r| argmax(r)).collect();
    let mut order: Vec<usize> = (0..model.n_states()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .cmp(&keys[a])
            .then_with(|| model.pi()[b].partial_cmp(&model.pi()[a]).unwrap_or(Ordering::Equal))
            .then_with(|| {
                model.emit()[b]
                    .iter()
                    .zip(&model.emit()[a])
                    .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    order
}

/// Reorders states into the canonical order so that permuted copies of a model compare equal.
pub fn canonicalize<T: Scalar>(model: &HmmModel<T>) -> HmmModel<T> {
    model
        .permute_states(&canonical_order(model))
        .expect("canonical order is a permutation")
}
