//! Replicate-retrieval mean average precision under cosine similarity.

use super::EmbeddingTable;
use crate::{CoreError, Result};

/// Which wells count as negatives for a query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapMode {
    /// Negative-control wells from the query's plate.
    Control,
    /// Same-plate wells treated with other compounds (controls excluded).
    NoRep,
}

/// Retrieval outcome; `skipped` counts queries without admissible negatives
/// or without any replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map: f64,
    pub queries: usize,
    pub skipped: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-300)
}

/// For every treated well whose compound has replicates: rank its
/// replicates (positives, any plate) against the mode's same-plate
/// negatives by cosine similarity and average the precision at each
/// positive's rank; the result is the mean over queries.
pub fn mean_average_precision(table: &EmbeddingTable, mode: MapMode) -> Result<MapResult> {
    let n = table.len();
    let mut aps = Vec::new();
    let mut skipped = 0usize;

    for q in 0..n {
        if table.control[q] {
            continue;
        }
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != q && !table.control[j] && table.compound[j] == table.compound[q])
            .collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        let negatives: Vec<usize> = (0..n)
            .filter(|&j| {
                j != q
                    && table.plate[j] == table.plate[q]
                    && match mode {
                        MapMode::Control => table.control[j],
                        MapMode::NoRep => {
                            !table.control[j] && table.compound[j] != table.compound[q]
                        }
                    }
            })
            .collect();
        if negatives.is_empty() {
            skipped += 1;
            continue;
        }

        let mut candidates: Vec<(f64, usize, bool)> = positives
            .iter()
            .map(|&j| (cosine(&table.matrix[q], &table.matrix[j]), j, true))
            .chain(
                negatives
                    .iter()
                    .map(|&j| (cosine(&table.matrix[q], &table.matrix[j]), j, false)),
            )
            .collect();
        candidates
            .sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, (_, _, is_pos)) in candidates.iter().enumerate() {
            if *is_pos {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        aps.push(precision_sum / positives.len() as f64);
    }

    if aps.is_empty() {
        return Err(CoreError::invalid(
            "retrieval needs at least one query with replicates and negatives",
        ));
    }
    Ok(MapResult {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        queries: aps.len(),
        skipped,
    })
}
