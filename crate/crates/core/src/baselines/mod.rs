//! Classical batch-correction baselines: ComBat, a simplified Harmony, and
//! control-anchored sphering.

mod combat;
mod harmony;
mod sphering;

pub use combat::{combat_fit_transform, CombatModel};
pub use harmony::{harmony_transform, HarmonyConfig, HarmonyState};
pub use sphering::sphering_transform;

use std::collections::BTreeMap;

/// Distinct batch labels (sorted) and the per-sample index into them.
pub(crate) fn batch_index(batches: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut ids: Vec<String> = batches.to_vec();
    ids.sort();
    ids.dedup();
    let lookup: BTreeMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();
    let idx = batches.iter().map(|b| lookup[b.as_str()]).collect();
    (ids, idx)
}
