//! Community detection on the kNN graph and the clustering-agreement
//! measures (NMI, ARI).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::knn_adjacency;
use crate::{CoreError, Result};

/// Leiden-style modularity clustering: seeded local moving with a
/// connectivity refinement step, repeated over aggregated graphs until the
/// partition stabilizes. Resolution scales the null-model term; communities
/// are guaranteed internally connected.
pub fn leiden_communities(adjacency: &[Vec<usize>], resolution: f64, seed: u64) -> Vec<usize> {
    let n = adjacency.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Working graph with edge weights; nodes carry the original indices they
    // aggregate.
    let mut graph: Vec<Vec<(usize, f64)>> = adjacency
        .iter()
        .map(|nbrs| nbrs.iter().map(|&j| (j, 1.0)).collect())
        .collect();
    let mut membership_of_original: Vec<usize> = (0..n).collect();

    loop {
        let communities = local_moving(&graph, resolution, &mut rng);
        let communities = split_disconnected(&graph, &communities);
        let n_comms = 1 + communities.iter().copied().max().unwrap_or(0);

        // Map original nodes through this level's assignment.
        for m in membership_of_original.iter_mut() {
            *m = communities[*m];
        }
        if n_comms == graph.len() {
            break;
        }

        // Aggregate communities into super-nodes.
        let mut agg: Vec<std::collections::BTreeMap<usize, f64>> =
            vec![std::collections::BTreeMap::new(); n_comms];
        for (u, nbrs) in graph.iter().enumerate() {
            for &(v, w) in nbrs {
                let (cu, cv) = (communities[u], communities[v]);
                *agg[cu].entry(cv).or_insert(0.0) += w;
            }
        }
        graph = agg
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect();
    }

    renumber(&membership_of_original)
}

/// One pass of modularity local moving until no node improves.
fn local_moving(
    graph: &[Vec<(usize, f64)>],
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = graph.len();
    let degree: Vec<f64> = graph
        .iter()
        .enumerate()
        .map(|(u, nbrs)| {
            nbrs.iter()
                .map(|&(v, w)| if v == u { 2.0 * w } else { w })
                .sum()
        })
        .collect();
    let two_m: f64 = degree.iter().sum::<f64>().max(1.0);

    let mut community: Vec<usize> = (0..n).collect();
    let mut comm_degree = degree.clone();

    let mut order: Vec<usize> = (0..n).collect();
    let mut improved = true;
    while improved {
        improved = false;
        order.shuffle(rng);
        for &u in &order {
            let current = community[u];
            comm_degree[current] -= degree[u];

            // Edge weight from u into each neighboring community.
            let mut weight_to: std::collections::BTreeMap<usize, f64> =
                std::collections::BTreeMap::new();
            for &(v, w) in &graph[u] {
                if v != u {
                    *weight_to.entry(community[v]).or_insert(0.0) += w;
                }
            }
            // Staying alone scores zero by construction.
            let mut best = (current, weight_to.get(&current).copied().unwrap_or(0.0));
            let mut best_gain =
                best.1 - resolution * degree[u] * comm_degree[current] / two_m;
            for (&c, &w_in) in &weight_to {
                let gain = w_in - resolution * degree[u] * comm_degree[c] / two_m;
                if gain > best_gain + 1e-12 {
                    best_gain = gain;
                    best = (c, w_in);
                }
            }
            if best.0 != current {
                improved = true;
            }
            community[u] = best.0;
            comm_degree[best.0] += degree[u];
        }
    }
    renumber(&community)
}

/// Refinement: every community is split into its connected components, so
/// no returned community is internally disconnected.
fn split_disconnected(graph: &[Vec<(usize, f64)>], community: &[usize]) -> Vec<usize> {
    let n = graph.len();
    let mut out = vec![usize::MAX; n];
    let mut next = 0usize;
    for start in 0..n {
        if out[start] != usize::MAX {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        out[start] = next;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &graph[u] {
                if community[v] == community[u] && out[v] == usize::MAX {
                    out[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    out
}

fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Contingency table of two partitions over the same samples.
fn contingency(a: &[usize], b: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let ka = 1 + a.iter().copied().max().unwrap_or(0);
    let kb = 1 + b.iter().copied().max().unwrap_or(0);
    let mut table = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, rows, cols)
}

/// Normalized mutual information, arithmetic-mean normalization
/// `2·I / (H(a) + H(b))`. Two trivial single-cluster partitions score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (table, rows, cols) = contingency(a, b);
    let entropy = |marginal: &[f64]| -> f64 {
        marginal
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum::<f64>()
    };
    let (ha, hb) = (entropy(&rows), entropy(&cols));
    if ha + hb == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0.0 {
                mi += (c / n) * ((n * c) / (rows[i] * cols[j])).ln();
            }
        }
    }
    2.0 * mi / (ha + hb)
}

/// Adjusted Rand index via the pair-counting formula on the contingency
/// table.
pub fn ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let (table, rows, cols) = contingency(a, b);
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return 0.0;
    }
    (sum_cells - expected) / (max_index - expected)
}

/// NMI and ARI of Leiden communities on the kNN graph against biological
/// labels.
pub fn cluster_agreement(
    matrix: &[Vec<f64>],
    bio_labels: &[String],
    k: usize,
    resolution: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if matrix.len() != bio_labels.len() {
        return Err(CoreError::invalid("one label per sample required"));
    }
    let mut classes: Vec<&String> = bio_labels.iter().collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CoreError::invalid("clustering agreement needs at least two labels"));
    }
    let truth: Vec<usize> = bio_labels
        .iter()
        .map(|l| classes.iter().position(|c| *c == l).unwrap())
        .collect();
    let adj = knn_adjacency(matrix, k)?;
    let clusters = leiden_communities(&adj, resolution, seed);
    Ok((nmi(&clusters, &truth), ari(&clusters, &truth)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_partitions_score_one() {
        let labels = vec![0, 0, 1, 1, 2, 2, 2];
        assert!((nmi(&labels, &labels) - 1.0).abs() < 1e-12);
        assert!((ari(&labels, &labels) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_partitions_have_near_zero_ari() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 2000;
        let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let score = ari(&a, &b);
        assert!(score.abs() < 0.02, "ari {score}");
    }

    /// Independent evaluation of NMI/ARI for a hand-checkable instance, via
    /// explicit probability sums (NMI) and pair counting over all sample
    /// pairs (ARI).
    fn oracle_nmi_ari(a: &[usize], b: &[usize]) -> (f64, f64) {
        let n = a.len();
        // ARI by brute-force pair counting.
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                let same_a = a[i] == a[j];
                let same_b = b[i] == b[j];
                match (same_a, same_b) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total = both + only_a + only_b + neither;
        let expected = (both + only_a) * (both + only_b) / total;
        let max_index = 0.5 * ((both + only_a) + (both + only_b));
        let ari = (both - expected) / (max_index - expected);

        // NMI from joint probabilities.
        let ka = 1 + a.iter().copied().max().unwrap();
        let kb = 1 + b.iter().copied().max().unwrap();
        let mut joint = vec![vec![0.0; kb]; ka];
        for (&x, &y) in a.iter().zip(b) {
            joint[x][y] += 1.0 / n as f64;
        }
        let pa: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pb: Vec<f64> = (0..kb).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
        let mut mi = 0.0;
        for x in 0..ka {
            for y in 0..kb {
                if joint[x][y] > 0.0 {
                    mi += joint[x][y] * (joint[x][y] / (pa[x] * pb[y])).ln();
                }
            }
        }
        let h = |p: &[f64]| -> f64 {
            p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
        };
        let nmi = 2.0 * mi / (h(&pa) + h(&pb));
        (nmi, ari)
    }

    #[test]
    fn nmi_and_ari_match_the_contingency_oracle() {
        let a = vec![0, 0, 0, 1, 1, 1, 2, 2, 0, 1, 2, 2, 0, 1, 1, 2, 0, 0, 2, 1];
        let b = vec![1, 1, 0, 1, 2, 2, 2, 0, 0, 1, 2, 2, 1, 0, 1, 2, 0, 1, 0, 1];
        let (want_nmi, want_ari) = oracle_nmi_ari(&a, &b);
        assert!((nmi(&a, &b) - want_nmi).abs() < 1e-9);
        assert!((ari(&a, &b) - want_ari).abs() < 1e-9);
    }

    #[test]
    fn leiden_recovers_well_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut matrix = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in [(0.0, 0.0), (60.0, 0.0), (0.0, 60.0)].iter().enumerate() {
            for _ in 0..15 {
                matrix.push(vec![
                    center.0 + rng.gen_range(-1.0..1.0),
                    center.1 + rng.gen_range(-1.0..1.0),
                ]);
                truth.push(format!("blob_{c}"));
            }
        }
        let (nmi_score, ari_score) = cluster_agreement(&matrix, &truth, 10, 1.0, 7).unwrap();
        assert!((nmi_score - 1.0).abs() < 1e-9, "nmi {nmi_score}");
        assert!((ari_score - 1.0).abs() < 1e-9, "ari {ari_score}");
    }

    #[test]
    fn leiden_communities_are_internally_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let matrix: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let adj = knn_adjacency(&matrix, 4).unwrap();
        let clusters = leiden_communities(&adj, 1.0, 9);
        let n_comms = 1 + clusters.iter().copied().max().unwrap();
        for c in 0..n_comms {
            let members: Vec<usize> = (0..50).filter(|&i| clusters[i] == c).collect();
            // BFS within the community must reach every member.
            let set: std::collections::HashSet<usize> = members.iter().copied().collect();
            let mut seen = std::collections::HashSet::from([members[0]]);
            let mut queue = std::collections::VecDeque::from([members[0]]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if set.contains(&v) && seen.insert(v) {
                        queue.push_back(v);
                    }
                }
            }
            assert_eq!(seen.len(), members.len(), "community {c} disconnected");
        }
    }

    #[test]
    fn clustering_is_deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let matrix: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let adj = knn_adjacency(&matrix, 5).unwrap();
        assert_eq!(
            leiden_communities(&adj, 1.0, 11),
            leiden_communities(&adj, 1.0, 11)
        );
    }
}
