//! Simplified Harmony: PCA followed by rounds of diversity-regularized soft
//! k-means and ridge-shrunk per-cluster batch-offset removal.
//!
//! Assignments are computed on the L2-normalized embedding (cosine
//! geometry), where distances are bounded and the diversity penalty can
//! out-compete batch-pure clusters; corrections are applied in the raw
//! embedding. The linear correction is offset-only: within each cluster the
//! batch coefficient of a one-hot design is ridge-penalized while the
//! cluster mean stays free, so a single batch regresses to exactly zero
//! correction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch_index;
use crate::linalg::pca;
use crate::{CoreError, Result};

#[derive(Clone, Debug)]
pub struct HarmonyConfig {
    pub n_components: usize,
    pub n_clusters: usize,
    pub max_iters: usize,
    /// Soft-assignment bandwidth on the unit sphere.
    pub sigma: f64,
    /// Diversity penalty strength.
    pub theta: f64,
    /// Ridge penalty on the per-cluster batch offsets.
    pub ridge_lambda: f64,
    /// Stop when the mean absolute assignment change falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for HarmonyConfig {
    fn default() -> Self {
        HarmonyConfig {
            n_components: 10,
            n_clusters: 8,
            max_iters: 10,
            sigma: 0.3,
            theta: 2.0,
            ridge_lambda: 1.0,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Converged state of the correction.
#[derive(Clone, Debug)]
pub struct HarmonyState {
    /// Corrected embedding, samples × n_components.
    pub embedding: Vec<Vec<f64>>,
    /// Soft cluster assignments, samples × n_clusters (rows sum to 1).
    pub assignments: Vec<Vec<f64>>,
    /// Per-cluster, per-batch offset vectors removed in the final round.
    pub offsets: Vec<Vec<Vec<f64>>>,
    /// Batch-composition entropy of the clustering after each iteration.
    pub diversity_trace: Vec<f64>,
    pub batches: Vec<String>,
    pub iterations: usize,
}

/// Corrects batch structure in a low-dimensional embedding.
pub fn harmony_transform(
    x: &[Vec<f64>],
    batches: &[String],
    config: &HarmonyConfig,
) -> Result<HarmonyState> {
    let n = x.len();
    if n == 0 || batches.len() != n {
        return Err(CoreError::invalid("one batch label per sample required"));
    }
    let (batch_ids, idx) = batch_index(batches);
    let n_batches = batch_ids.len();
    let k = config.n_components;
    let c = config.n_clusters.max(1).min(n);

    let mut z = pca(x, k)?;
    let mut state = HarmonyState {
        embedding: Vec::new(),
        assignments: vec![vec![0.0; c]; n],
        offsets: vec![vec![vec![0.0; k]; n_batches]; c],
        diversity_trace: Vec::new(),
        batches: batch_ids,
        iterations: 0,
    };
    if config.max_iters == 0 {
        state.embedding = z;
        return Ok(state);
    }

    let batch_freq: Vec<f64> = {
        let mut counts = vec![0.0; n_batches];
        for &b in &idx {
            counts[b] += 1.0;
        }
        counts.iter().map(|&x| x / n as f64).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zn0 = normalize_rows(&z);
    let mut centroids = kmeans_pp_init(&zn0, c, &mut rng);
    // Assignments start uniform; cluster-batch occupancy is maintained
    // online while samples are reassigned, which keeps the diversity
    // penalty current and avoids the oscillation a one-iteration lag causes.
    let mut r = vec![vec![1.0 / c as f64; c]; n];
    let mut occ = vec![vec![0.0; n_batches]; c];
    for (i, ri) in r.iter().enumerate() {
        for cc in 0..c {
            occ[cc][idx[i]] += ri[cc];
        }
    }
    let mut r_prev: Option<Vec<Vec<f64>>> = None;

    for iter in 0..config.max_iters {
        let zn = normalize_rows(&z);

        // Soft assignment on the sphere with the diversity ratio, occupancy
        // updated sample by sample in fixed order.
        for (i, zi) in zn.iter().enumerate() {
            let b = idx[i];
            for cc in 0..c {
                occ[cc][b] -= r[i][cc];
            }
            let mut logits = vec![0.0; c];
            for (cc, centroid) in centroids.iter().enumerate() {
                let d2: f64 = zi
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let mass: f64 = occ[cc].iter().sum();
                let expected = (batch_freq[b] * mass).max(1e-6);
                let observed = occ[cc][b].max(1e-6);
                logits[cc] =
                    -d2 / config.sigma + config.theta * (expected.ln() - observed.ln());
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (rc, l) in r[i].iter_mut().zip(&logits) {
                *rc = (l - m).exp();
                total += *rc;
            }
            for rc in &mut r[i] {
                *rc /= total;
            }
            for cc in 0..c {
                occ[cc][b] += r[i][cc];
            }
        }
        state.diversity_trace.push(diversity_entropy(&occ, n as f64));
        for cc in 0..c {
            let mass: f64 = occ[cc].iter().sum();
            if mass < 1e-9 {
                let far = farthest_point(&zn, &centroids);
                centroids[cc] = zn[far].clone();
                continue;
            }
            let mut mu = vec![0.0; k];
            for (i, zi) in zn.iter().enumerate() {
                for (m, v) in mu.iter_mut().zip(zi) {
                    *m += r[i][cc] * v;
                }
            }
            let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for m in &mut mu {
                *m /= norm;
            }
            centroids[cc] = mu;
        }

        // Raw-space cluster means and ridge-shrunk batch offsets.
        let mut offsets = vec![vec![vec![0.0; k]; n_batches]; c];
        for cc in 0..c {
            let mass: f64 = (0..n).map(|i| r[i][cc]).sum();
            if mass < 1e-12 {
                continue;
            }
            let mut nu = vec![0.0; k];
            for (i, zi) in z.iter().enumerate() {
                for (m, v) in nu.iter_mut().zip(zi) {
                    *m += r[i][cc] * v;
                }
            }
            for m in &mut nu {
                *m /= mass;
            }
            for b in 0..n_batches {
                let weight: f64 = (0..n).filter(|&i| idx[i] == b).map(|i| r[i][cc]).sum();
                if weight < 1e-12 {
                    continue;
                }
                let mut num = vec![0.0; k];
                for (i, zi) in z.iter().enumerate() {
                    if idx[i] != b {
                        continue;
                    }
                    for (nv, (v, m)) in num.iter_mut().zip(zi.iter().zip(&nu)) {
                        *nv += r[i][cc] * (v - m);
                    }
                }
                for (o, nv) in offsets[cc][b].iter_mut().zip(num) {
                    *o = nv / (weight + config.ridge_lambda);
                }
            }
        }
        for (i, zi) in z.iter_mut().enumerate() {
            for cc in 0..c {
                let w = r[i][cc];
                if w < 1e-12 {
                    continue;
                }
                for (v, o) in zi.iter_mut().zip(&offsets[cc][idx[i]]) {
                    *v -= w * o;
                }
            }
        }

        state.offsets = offsets;
        state.iterations = iter + 1;
        state.assignments = r.clone();

        if let Some(prev) = &r_prev {
            let change: f64 = r
                .iter()
                .zip(prev)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .sum::<f64>()
                / (n * c) as f64;
            if change < config.tol {
                break;
            }
        }
        r_prev = Some(r.clone());
    }

    state.embedding = z;
    Ok(state)
}

fn normalize_rows(z: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|row| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter().map(|v| v / norm).collect()
        })
        .collect()
}

/// Weighted mean over clusters of the batch-composition entropy.
fn diversity_entropy(occupancy: &[Vec<f64>], n: f64) -> f64 {
    let mut total = 0.0;
    for occ in occupancy {
        let mass: f64 = occ.iter().sum();
        if mass < 1e-12 {
            continue;
        }
        let mut h = 0.0;
        for &o in occ {
            if o > 1e-12 {
                let p = o / mass;
                h -= p * p.ln();
            }
        }
        total += (mass / n) * h;
    }
    total
}

fn kmeans_pp_init(z: &[Vec<f64>], c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = z.len();
    let mut centroids = vec![z[rng.gen_range(0..n)].clone()];
    while centroids.len() < c {
        let dists: Vec<f64> = z
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|m| p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            centroids.push(z[centroids.len() % n].clone());
            continue;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = n - 1;
        for (i, d) in dists.iter().enumerate() {
            pick -= d;
            if pick <= 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push(z[chosen].clone());
    }
    centroids
}

fn farthest_point(z: &[Vec<f64>], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0usize, -1.0f64);
    for (i, p) in z.iter().enumerate() {
        let d = centroids
            .iter()
            .map(|m| p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if d > best.1 {
            best = (i, d);
        }
    }
    best.0
}
