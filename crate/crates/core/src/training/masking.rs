//! Channel-wise masking plans for the masked-morphology objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::FeatureSchema;
use crate::{CoreError, Result};

/// Which features of one profile are masked, organized by channel–compartment
/// group. Only features with non-zero preprocessed values are ever masked;
/// groups with nothing masked drop out of the loss average.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    /// Group id → masked feature indices (ascending).
    pub masked_by_group: Vec<Vec<usize>>,
    /// Realized masking probability for the batch this plan belongs to.
    pub p: f64,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.masked_by_group.iter().all(|g| g.is_empty())
    }

    /// Number of groups that contribute to the loss (G′).
    pub fn active_groups(&self) -> usize {
        self.masked_by_group.iter().filter(|g| !g.is_empty()).count()
    }

    pub fn n_masked(&self) -> usize {
        self.masked_by_group.iter().map(|g| g.len()).sum()
    }

    /// All masked feature indices, ascending.
    pub fn masked_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .masked_by_group
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Per-feature mask flags for sequence assembly.
    pub fn flags(&self, n_features: usize) -> Vec<bool> {
        let mut flags = vec![false; n_features];
        for g in &self.masked_by_group {
            for &i in g {
                flags[i] = true;
            }
        }
        flags
    }

    /// Loss weight of each masked feature: `1 / (G′ · |M_g|)`.
    pub fn weights(&self) -> Vec<(usize, f64)> {
        let active = self.active_groups() as f64;
        let mut out = Vec::with_capacity(self.n_masked());
        for group in &self.masked_by_group {
            if group.is_empty() {
                continue;
            }
            let w = 1.0 / (active * group.len() as f64);
            for &i in group {
                out.push((i, w));
            }
        }
        out.sort_unstable_by_key(|(i, _)| *i);
        out
    }
}

/// Draws the batch-level masking probability uniformly from the range.
pub fn sample_mask_prob(p_range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    if p_range.0 == p_range.1 {
        p_range.0
    } else {
        rng.gen_range(p_range.0..p_range.1)
    }
}

/// Masks each non-zero feature independently with probability drawn from
/// `p_range` (pass a degenerate range to reuse a batch-level draw).
/// Zero-valued features are never masked.
pub fn plan_cwmm_mask(
    values: &[f64],
    schema: &FeatureSchema,
    p_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<MaskPlan> {
    if schema.is_empty() {
        return Err(CoreError::invalid("cannot mask against an empty schema"));
    }
    if values.len() != schema.len() {
        return Err(CoreError::invalid(format!(
            "profile has {} values, schema expects {}",
            values.len(),
            schema.len()
        )));
    }
    if !(0.0..=1.0).contains(&p_range.0) || !(0.0..=1.0).contains(&p_range.1) || p_range.0 > p_range.1 {
        return Err(CoreError::config(format!(
            "masking range {:?} must satisfy 0 <= lo <= hi <= 1",
            p_range
        )));
    }
    let p = sample_mask_prob(p_range, rng);
    let mut masked_by_group = vec![Vec::new(); schema.n_groups()];
    for (i, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if rng.gen::<f64>() < p {
            masked_by_group[schema.group_of(i)].push(i);
        }
    }
    Ok(MaskPlan { masked_by_group, p })
}
