//! Small dense linear-algebra helpers shared by the baselines and reports.
//!
//! Eigendecompositions go through nalgebra's symmetric solver; everything
//! here operates on plain `Vec<Vec<f64>>` sample-major matrices.

use nalgebra::DMatrix;

use crate::{CoreError, Result};

/// Column means of a samples × features matrix.
pub fn column_means(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let d = x.first().map_or(0, |r| r.len());
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Covariance matrix (features × features) of the data, 1/(n-1) scaling.
pub fn covariance(x: &[Vec<f64>], mean: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let d = mean.len();
    let mut cov = DMatrix::zeros(d, d);
    for row in x {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += ci * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

/// Principal-component projection of samples × features data.
///
/// Components are ordered by decreasing eigenvalue. Each component's sign is
/// fixed so its largest-magnitude loading is positive, making the projection
/// deterministic.
pub fn pca(x: &[Vec<f64>], n_components: usize) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let d = x.first().map_or(0, |r| r.len());
    if n == 0 || d == 0 {
        return Err(CoreError::invalid("pca on empty matrix"));
    }
    if n_components > d.min(n) {
        return Err(CoreError::invalid(format!(
            "pca requested {} components from {} samples x {} features",
            n_components, n, d
        )));
    }
    let mean = column_means(x);
    let cov = covariance(x, &mean);
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(n_components);
    for &k in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let (mut best_idx, mut best_abs) = (0usize, -1.0f64);
        for (i, &c) in v.iter().enumerate() {
            if c.abs() > best_abs {
                best_abs = c.abs();
                best_idx = i;
            }
        }
        if v[best_idx] < 0.0 {
            for c in &mut v {
                *c = -*c;
            }
        }
        components.push(v);
    }

    let mut out = vec![vec![0.0; n_components]; n];
    for (i, row) in x.iter().enumerate() {
        for (k, comp) in components.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                s += (row[j] - mean[j]) * comp[j];
            }
            out[i][k] = s;
        }
    }
    Ok(out)
}

/// Inverse square root of a symmetric positive-definite matrix via its
/// eigendecomposition; eigenvalues are floored at `floor` first.
pub fn inverse_sqrt_spd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = m.nrows();
    let mut out = DMatrix::zeros(d, d);
    for k in 0..d {
        let lam = eig.eigenvalues[k].max(floor);
        let scale = 1.0 / lam.sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] += scale * v[i] * v[j];
            }
        }
    }
    out
}

/// Solves the weighted ridge system (AᵀWA + λI)x = AᵀWb for small dense
/// systems via Gaussian elimination with partial pivoting.
pub fn ridge_solve(
    rows: &[Vec<f64>],
    weights: &[f64],
    targets: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut ata = vec![vec![0.0; d]; d];
    let mut atb = vec![0.0; d];
    for ((row, &w), &t) in rows.iter().zip(weights).zip(targets) {
        for i in 0..d {
            atb[i] += w * row[i] * t;
            for j in i..d {
                ata[i][j] += w * row[i] * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            ata[i][j] = ata[j][i];
        }
        ata[i][i] += lambda;
    }
    solve_dense(ata, atb)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-12 {
            return Err(CoreError::invalid("singular system in ridge solve"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Ok(x)
}
