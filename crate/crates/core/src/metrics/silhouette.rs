//! Silhouette coefficients and their normalized batch/label variants.

use super::graph::euclidean_sq;
use crate::{CoreError, Result};

/// Per-sample silhouette coefficients: `s = (b - a) / max(a, b)` with `a`
/// the mean distance to the own cluster (self excluded) and `b` the smallest
/// mean distance to any other cluster. Singleton clusters score 0.
pub fn silhouette_samples(matrix: &[Vec<f64>], labels: &[String]) -> Result<Vec<f64>> {
    let n = matrix.len();
    if labels.len() != n {
        return Err(CoreError::invalid("one label per sample required"));
    }
    let mut classes: Vec<&String> = labels.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CoreError::invalid("silhouette needs at least two clusters"));
    }
    let class_of: Vec<usize> = labels
        .iter()
        .map(|l| classes.iter().position(|c| *c == l).unwrap())
        .collect();
    let counts: Vec<usize> = (0..classes.len())
        .map(|c| class_of.iter().filter(|&&x| x == c).count())
        .collect();

    let mut scores = vec![0.0; n];
    for i in 0..n {
        let mut sums = vec![0.0; classes.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[class_of[j]] += euclidean_sq(&matrix[i], &matrix[j]).sqrt();
        }
        let own = class_of[i];
        if counts[own] <= 1 {
            scores[i] = 0.0;
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        scores[i] = if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }
    Ok(scores)
}

/// Batch and label silhouettes rescaled to [0,1]:
/// batch = mean(1 - |s_i|) against batch labels (1 ⇒ batches indistinguishable),
/// label = (mean s_i + 1)/2 against biological labels (1 ⇒ perfect separation).
pub fn silhouette_scores(
    matrix: &[Vec<f64>],
    batch_labels: &[String],
    bio_labels: &[String],
) -> Result<(f64, f64)> {
    let batch = silhouette_samples(matrix, batch_labels)?;
    let bio = silhouette_samples(matrix, bio_labels)?;
    let n = matrix.len() as f64;
    let silh_batch = batch.iter().map(|s| 1.0 - s.abs()).sum::<f64>() / n;
    let silh_label = (bio.iter().sum::<f64>() / n + 1.0) / 2.0;
    Ok((silh_batch, silh_label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfectly_mixed_batches_score_near_one() {
        // Two batches interleaved on the same grid: zero separation.
        let mut matrix = Vec::new();
        let mut batches = Vec::new();
        for i in 0..30 {
            matrix.push(vec![(i / 2) as f64 * 0.5, ((i * 7) % 5) as f64]);
            batches.push(if i % 2 == 0 { "a".to_string() } else { "b".to_string() });
        }
        let bio = vec!["x".to_string(); 15]
            .into_iter()
            .chain(vec!["y".to_string(); 15])
            .collect::<Vec<_>>();
        let (silh_batch, _) = silhouette_scores(&matrix, &batches, &bio).unwrap();
        assert!(silh_batch > 0.9, "batch silhouette {silh_batch}");
    }

    #[test]
    fn distant_bio_labels_score_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut matrix = Vec::new();
        let mut bio = Vec::new();
        for i in 0..24 {
            let center = if i < 12 { 0.0 } else { 1000.0 };
            matrix.push(vec![center + rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]);
            bio.push(if i < 12 { "x".to_string() } else { "y".to_string() });
        }
        let batches: Vec<String> = (0..24).map(|i| format!("b{}", i % 2)).collect();
        let (_, silh_label) = silhouette_scores(&matrix, &batches, &bio).unwrap();
        assert!(silh_label > 0.99, "label silhouette {silh_label}");
    }

    /// Textbook O(n²) silhouette, written independently of the implementation.
    fn oracle(matrix: &[Vec<f64>], labels: &[String]) -> Vec<f64> {
        let n = matrix.len();
        let dist = |i: usize, j: usize| -> f64 {
            matrix[i]
                .iter()
                .zip(&matrix[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        (0..n)
            .map(|i| {
                let own: Vec<usize> = (0..n)
                    .filter(|&j| j != i && labels[j] == labels[i])
                    .collect();
                if own.is_empty() {
                    return 0.0;
                }
                let a = own.iter().map(|&j| dist(i, j)).sum::<f64>() / own.len() as f64;
                let mut others: Vec<&String> = labels.iter().filter(|l| **l != labels[i]).collect();
                others.sort();
                others.dedup();
                let b = others
                    .iter()
                    .map(|l| {
                        let members: Vec<usize> =
                            (0..n).filter(|&j| &labels[j] == *l).collect();
                        members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
                    })
                    .fold(f64::INFINITY, f64::min);
                (b - a) / a.max(b)
            })
            .collect()
    }

    #[test]
    fn matches_textbook_oracle_on_a_30_point_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let matrix: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let labels: Vec<String> = (0..30).map(|_| format!("c{}", rng.gen_range(0..3))).collect();
        let got = silhouette_samples(&matrix, &labels).unwrap();
        let want = oracle(&matrix, &labels);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn single_cluster_is_rejected() {
        let matrix = vec![vec![0.0], vec![1.0]];
        let labels = vec!["a".to_string(), "a".to_string()];
        assert!(silhouette_samples(&matrix, &labels).is_err());
    }
}
