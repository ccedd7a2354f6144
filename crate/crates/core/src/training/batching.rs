//! Batch assembly policies for the three curriculum stages.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::{CoreError, Result};

/// How profiles may be combined into a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchPolicy {
    /// No constraint (masked pre-training).
    Any,
    /// Every batch drawn from exactly one source (intra-source stage).
    SingleSource,
    /// Batches sample across sources (inter-source stage).
    MixedSource,
}

/// Splits the dataset into index batches for one epoch.
///
/// Under the contrastive policies, batches are built from same-compound
/// pairs so every batch holds at least two profiles sharing a label
/// wherever replicates exist; unpaired leftovers form trailing batches.
/// Sources with fewer profiles than `batch_size` contribute smaller final
/// batches.
pub fn make_batches(
    dataset: &Dataset,
    policy: BatchPolicy,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    if dataset.is_empty() {
        return Err(CoreError::invalid("cannot batch an empty dataset"));
    }
    if batch_size == 0 {
        return Err(CoreError::config("batch_size must be >= 1"));
    }
    match policy {
        BatchPolicy::Any => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(rng);
            Ok(idx.chunks(batch_size).map(|c| c.to_vec()).collect())
        }
        BatchPolicy::SingleSource => {
            if batch_size < 2 {
                return Err(CoreError::config(
                    "contrastive batching needs batch_size >= 2",
                ));
            }
            let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, p) in dataset.profiles.iter().enumerate() {
                by_source.entry(&p.source).or_default().push(i);
            }
            let mut batches = Vec::new();
            for (_, members) in by_source {
                batches.extend(pack_with_positives(dataset, members, batch_size, rng));
            }
            batches.shuffle(rng);
            Ok(batches)
        }
        BatchPolicy::MixedSource => {
            if batch_size < 2 {
                return Err(CoreError::config(
                    "contrastive batching needs batch_size >= 2",
                ));
            }
            let all: Vec<usize> = (0..dataset.len()).collect();
            Ok(pack_with_positives(dataset, all, batch_size, rng))
        }
    }
}

/// Packs indices into batches of same-compound pairs plus leftover singles.
fn pack_with_positives(
    dataset: &Dataset,
    members: Vec<usize>,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut by_compound: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &members {
        by_compound.entry(&dataset.profiles[i].compound).or_default().push(i);
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut singles: Vec<usize> = Vec::new();
    for (_, mut group) in by_compound {
        group.shuffle(rng);
        let mut it = group.chunks_exact(2);
        for c in &mut it {
            pairs.push((c[0], c[1]));
        }
        singles.extend(it.remainder());
    }
    pairs.shuffle(rng);
    singles.shuffle(rng);

    let pairs_per_batch = (batch_size / 2).max(1);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut pair_iter = pairs.into_iter().peekable();
    while pair_iter.peek().is_some() {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..pairs_per_batch {
            match pair_iter.next() {
                Some((a, b)) => {
                    batch.push(a);
                    batch.push(b);
                }
                None => break,
            }
        }
        if batch.len() < batch_size {
            while batch.len() < batch_size {
                match singles.pop() {
                    Some(s) => batch.push(s),
                    None => break,
                }
            }
        }
        batches.push(batch);
    }
    for chunk in singles.chunks(batch_size) {
        batches.push(chunk.to_vec());
    }
    batches
}
