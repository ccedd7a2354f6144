//! Batch-predictability score: cross-validated kNN classification of the
//! batch label, reported as 1 − macro-F1 so that 1 means indistinguishable
//! batches.

use super::graph::euclidean_sq;
use crate::{CoreError, Result};

/// Deterministic stratified folds: within each class, samples are dealt
/// round-robin in index order. Errors when any class is smaller than the
/// fold count.
pub fn stratified_folds(labels: &[String], n_folds: usize) -> Result<Vec<usize>> {
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    let mut fold_of = vec![0usize; labels.len()];
    for class in classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| &labels[i] == class).collect();
        if members.len() < n_folds {
            return Err(CoreError::invalid(format!(
                "class {:?} has {} samples, fewer than {} folds",
                class,
                members.len(),
                n_folds
            )));
        }
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = pos % n_folds;
        }
    }
    Ok(fold_of)
}

/// Majority vote over the k nearest training samples; ties break toward the
/// lexicographically smaller label.
fn knn_predict(
    matrix: &[Vec<f64>],
    labels: &[String],
    train: &[usize],
    query: usize,
    k: usize,
) -> String {
    let mut dists: Vec<(f64, usize)> = train
        .iter()
        .map(|&j| (euclidean_sq(&matrix[query], &matrix[j]), j))
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut votes: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for (_, j) in dists.iter().take(k.min(dists.len())) {
        *votes.entry(labels[*j].as_str()).or_default() += 1;
    }
    votes
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))
        .map(|(l, _)| l.to_string())
        .expect("non-empty training set")
}

/// Macro-averaged F1 over all classes present in the truth.
pub fn macro_f1(truth: &[String], predicted: &[String]) -> f64 {
    let mut classes: Vec<&String> = truth.iter().collect();
    classes.sort();
    classes.dedup();
    let mut total = 0.0;
    for class in &classes {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (t, p) in truth.iter().zip(predicted) {
            let is_t = &t == class;
            let is_p = &p == class;
            match (is_t, is_p) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        total += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    total / classes.len() as f64
}

/// 1 − macro-F1 of a k-NN classifier (default k 15) predicting the batch
/// label under stratified cross-validation (predictions pooled across
/// folds). 1 means the batches are indistinguishable.
pub fn batch_classifier_score(
    matrix: &[Vec<f64>],
    batch_labels: &[String],
    k: usize,
    n_folds: usize,
) -> Result<f64> {
    if matrix.len() != batch_labels.len() {
        return Err(CoreError::invalid("one batch label per sample required"));
    }
    let mut classes: Vec<&String> = batch_labels.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CoreError::invalid("batch classifier needs at least two batches"));
    }
    let fold_of = stratified_folds(batch_labels, n_folds)?;
    let mut predictions = vec![String::new(); matrix.len()];
    for fold in 0..n_folds {
        let train: Vec<usize> = (0..matrix.len()).filter(|&i| fold_of[i] != fold).collect();
        for i in (0..matrix.len()).filter(|&i| fold_of[i] == fold) {
            predictions[i] = knn_predict(matrix, batch_labels, &train, i, k);
        }
    }
    Ok(1.0 - macro_f1(batch_labels, &predictions))
}
