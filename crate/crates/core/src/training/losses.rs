//! The two training objectives: channel-wise masked-morphology
//! reconstruction and supervised contrastive learning on CLS states.

use crate::embedding::PREFIX_TOKENS;
use crate::tensor::{Array, Graph, Var};
use crate::training::MaskPlan;
use crate::{CoreError, Result};

/// Masked-reconstruction loss: squared errors averaged within each
/// channel–compartment group, then across the groups that have masked
/// features. `predictions[k]` corresponds to `plan.masked_indices()[k]`.
pub fn loss_cwmm(f_true: &[f64], predictions: &[f64], plan: &MaskPlan) -> Result<f64> {
    if plan.is_empty() {
        return Err(CoreError::invalid("masked-morphology loss undefined for an empty plan"));
    }
    if predictions.len() != plan.n_masked() {
        return Err(CoreError::invalid(format!(
            "{} predictions for {} masked features",
            predictions.len(),
            plan.n_masked()
        )));
    }
    let order = plan.masked_indices();
    let mut pred_at = std::collections::HashMap::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        pred_at.insert(i, predictions[k]);
    }
    let mut loss = 0.0;
    for (i, w) in plan.weights() {
        let r = f_true[i] - pred_at[&i];
        loss += w * r * r;
    }
    Ok(loss)
}

/// Graph form of the masked loss over a batch: the per-profile group-averaged
/// loss, averaged over the profiles that actually have masked features.
/// `recon` is the (B·S, 1) reconstruction-head output with S = L + 2.
pub fn loss_cwmm_graph(
    g: &Graph,
    recon: &Var,
    targets: &[Vec<f64>],
    plans: &[MaskPlan],
    n_features: usize,
) -> Result<Var> {
    let batch = targets.len();
    if plans.len() != batch {
        return Err(CoreError::invalid("one mask plan per profile required"));
    }
    let seq = n_features + PREFIX_TOKENS;
    let active_profiles = plans.iter().filter(|p| !p.is_empty()).count();
    if active_profiles == 0 {
        return Err(CoreError::invalid(
            "masked-morphology loss undefined: no profile has masked features",
        ));
    }
    let mut weights = vec![0.0; batch * seq];
    let mut target_col = vec![0.0; batch * seq];
    for (b, (values, plan)) in targets.iter().zip(plans).enumerate() {
        for (i, w) in plan.weights() {
            let row = b * seq + PREFIX_TOKENS + i;
            weights[row] = w / active_profiles as f64;
            target_col[row] = values[i];
        }
    }
    let w = g.constant(Array::new(vec![batch * seq, 1], weights)?);
    let t = g.constant(Array::new(vec![batch * seq, 1], target_col)?);
    let resid = recon.sub(&t);
    Ok(resid.mul(&resid).mul(&w).sum_all())
}

/// Supervised contrastive loss over L2-normalized embeddings, summed over
/// anchors that have at least one positive (same label, different sample);
/// anchors without positives are skipped.
pub fn loss_supcon(embeddings: &Array, labels: &[String], temperature: f64) -> Result<f64> {
    let ids = label_ids(labels);
    let g = Graph::new();
    let e = g.constant(embeddings.clone());
    loss_supcon_graph(&g, &e, &ids, temperature).map(|v| v.value().data()[0])
}

/// Graph form of the contrastive loss on (B, d) CLS states.
pub fn loss_supcon_graph(g: &Graph, cls: &Var, labels: &[usize], temperature: f64) -> Result<Var> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(CoreError::config(format!(
            "contrastive temperature must be positive, got {temperature}"
        )));
    }
    let batch = labels.len();
    if batch < 2 {
        return Err(CoreError::invalid("contrastive loss requires a batch of at least 2"));
    }
    if cls.shape()[0] != batch {
        return Err(CoreError::invalid("one label per embedding required"));
    }

    // Positive sets and anchor validity are data, not graph state.
    let mut pos_weight = vec![0.0; batch * batch];
    let mut valid = vec![0.0; batch];
    for i in 0..batch {
        let positives: Vec<usize> = (0..batch)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        valid[i] = 1.0;
        let w = 1.0 / positives.len() as f64;
        for j in positives {
            pos_weight[i * batch + j] = w;
        }
    }
    if valid.iter().all(|&v| v == 0.0) {
        // No anchor has a positive: the loss is identically zero.
        return Ok(g.constant(Array::scalar(0.0)));
    }

    let normed = cls.normalize_rows();
    let sims = normed.matmul(&normed.t()).mul_scalar(1.0 / temperature);

    // Row-wise max over the off-diagonal stabilizes the log-sum-exp; it is a
    // constant shift, restored exactly below.
    let sim_vals = sims.value();
    let mut row_max = vec![0.0; batch];
    for i in 0..batch {
        let mut m = f64::NEG_INFINITY;
        for j in 0..batch {
            if j != i {
                m = m.max(sim_vals.at(i, j));
            }
        }
        row_max[i] = m;
    }
    let mut shift = vec![0.0; batch * batch];
    let mut off_diag = vec![1.0; batch * batch];
    for i in 0..batch {
        off_diag[i * batch + i] = 0.0;
        for j in 0..batch {
            shift[i * batch + j] = row_max[i];
        }
    }
    let shift_c = g.constant(Array::new(vec![batch, batch], shift)?);
    let mask_c = g.constant(Array::new(vec![batch, batch], off_diag)?);
    let valid_c = g.constant(Array::new(vec![batch, 1], valid.clone())?);
    let pos_c = g.constant(Array::new(vec![batch, batch], pos_weight)?);

    let exp_shifted = sims.sub(&shift_c).exp().mul(&mask_c);
    let log_denom = exp_shifted.row_sum().ln();
    let shift_total: f64 = row_max
        .iter()
        .zip(&valid)
        .map(|(m, v)| m * v)
        .sum();
    let lse_sum = log_denom.mul(&valid_c).sum_all().add_scalar(shift_total);
    let pos_sum = sims.mul(&pos_c).sum_all();
    Ok(lse_sum.sub(&pos_sum))
}

/// Maps string labels to dense ids (first-appearance order).
pub fn label_ids(labels: &[String]) -> Vec<usize> {
    let mut seen: Vec<&String> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}
