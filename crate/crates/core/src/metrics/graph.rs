//! k-nearest-neighbor graphs and the graph-connectivity metric.

use rayon::prelude::*;

use crate::{CoreError, Result};

pub(crate) fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the k nearest neighbors of every sample (self excluded),
/// Euclidean metric, ties broken by index.
pub fn knn_indices(matrix: &[Vec<f64>], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = matrix.len();
    if k == 0 || k >= n {
        return Err(CoreError::invalid(format!(
            "k must satisfy 1 <= k < n, got k={k} n={n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (euclidean_sq(&matrix[i], &matrix[j]), j))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists.truncate(k);
            dists.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

/// Undirected kNN adjacency: edge {i,j} whenever either lists the other.
pub fn knn_adjacency(matrix: &[Vec<f64>], k: usize) -> Result<Vec<Vec<usize>>> {
    let knn = knn_indices(matrix, k)?;
    let n = matrix.len();
    let mut adj = vec![Vec::new(); n];
    for (i, neighbors) in knn.iter().enumerate() {
        for &j in neighbors {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for nbrs in &mut adj {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    Ok(adj)
}

/// For each biological label (with ≥ 2 samples), the fraction of its samples
/// in the largest connected component of the label-induced subgraph of the
/// kNN graph; averaged over labels. 1.0 means every label's samples form a
/// single connected neighborhood.
pub fn graph_connectivity(matrix: &[Vec<f64>], bio_labels: &[String], k: usize) -> Result<f64> {
    if matrix.len() != bio_labels.len() {
        return Err(CoreError::invalid("one label per sample required"));
    }
    let adj = knn_adjacency(matrix, k)?;

    let mut labels: Vec<&String> = bio_labels.iter().collect();
    labels.sort();
    labels.dedup();

    let mut scores = Vec::new();
    for label in labels {
        let members: Vec<usize> = (0..matrix.len())
            .filter(|&i| &bio_labels[i] == label)
            .collect();
        if members.len() < 2 {
            continue;
        }
        scores.push(largest_component_fraction(&adj, &members));
    }
    if scores.is_empty() {
        return Err(CoreError::invalid(
            "graph connectivity needs at least one label with 2+ samples",
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Size fraction of the largest connected component of the subgraph induced
/// on `members`, found by breadth-first search.
fn largest_component_fraction(adj: &[Vec<usize>], members: &[usize]) -> f64 {
    let member_set: std::collections::HashSet<usize> = members.iter().copied().collect();
    let mut visited = std::collections::HashSet::new();
    let mut largest = 0usize;
    for &start in members {
        if visited.contains(&start) {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        visited.insert(start);
        let mut size = 0usize;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in &adj[u] {
                if member_set.contains(&v) && visited.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        largest = largest.max(size);
    }
    largest as f64 / members.len() as f64
}
