//! Dataset types, synthetic generation, preprocessing, feature alignment,
//! and CSV interchange.

mod align;
mod csvio;
mod preprocess;
mod synth;

pub use align::{align_features, AlignReport};
pub use csvio::{load_csv, load_schema, save_csv, save_schema, METADATA_COLUMNS};
pub use preprocess::{preprocess, PreprocessReport};
pub use synth::{generate_synthetic, GroundTruth, PlateEffect, SynthConfig};

use crate::{CoreError, Result};

/// Compound key carried by negative-control wells.
pub const CONTROL_COMPOUND: &str = "DMSO";

/// One well-level feature vector plus its provenance metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub values: Vec<f64>,
    pub source: String,
    pub plate: String,
    pub well: String,
    /// Compound identifier (InChIKey role); negative controls carry
    /// [`CONTROL_COMPOUND`].
    pub compound: String,
    pub moa: Option<String>,
    pub is_negative_control: bool,
}

/// Ordered feature names, each assigned a channel–compartment group.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    names: Vec<String>,
    groups: Vec<usize>,
    n_groups: usize,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, groups: Vec<usize>) -> Result<Self> {
        if names.is_empty() {
            return Err(CoreError::invalid("schema must contain at least one feature"));
        }
        if names.len() != groups.len() {
            return Err(CoreError::invalid("one group id per feature required"));
        }
        let n_groups = groups.iter().max().map_or(0, |&g| g + 1);
        Ok(FeatureSchema {
            names,
            groups,
            n_groups,
        })
    }

    /// Derives grouping from the `compartment_channel_measurement` naming
    /// convention: features sharing their first two underscore-separated
    /// tokens form one group. Group ids follow first appearance.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut keys: Vec<String> = Vec::new();
        let mut groups = Vec::with_capacity(names.len());
        for name in &names {
            let canon = canonicalize_feature_name(name);
            let mut it = canon.split('_');
            let key = match (it.next(), it.next()) {
                (Some(a), Some(b)) => format!("{a}_{b}"),
                _ => canon.clone(),
            };
            let gid = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    keys.len() - 1
                }
            };
            groups.push(gid);
        }
        FeatureSchema::new(names, groups)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn group_of(&self, feature: usize) -> usize {
        self.groups[feature]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Canonicalized names used for cross-dataset matching.
    pub fn canonical_names(&self) -> Vec<String> {
        self.names.iter().map(|n| canonicalize_feature_name(n)).collect()
    }
}

/// Lowercases and normalizes separators so feature names from different
/// extraction pipelines compare by exact string.
pub fn canonicalize_feature_name(name: &str) -> String {
    name.to_lowercase()
        .chars()
        .map(|c| match c {
            '-' | ' ' | '.' | '/' => '_',
            c => c,
        })
        .collect()
}

/// A feature schema plus the profiles measured against it.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub profiles: Vec<Profile>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, profiles: Vec<Profile>) -> Result<Self> {
        let d = Dataset { schema, profiles };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.profiles.iter().enumerate() {
            if p.values.len() != self.schema.len() {
                return Err(CoreError::invalid(format!(
                    "profile {} has {} values, schema expects {}",
                    i,
                    p.values.len(),
                    self.schema.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Copies all feature vectors into a samples × features matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.profiles.iter().map(|p| p.values.clone()).collect()
    }

    /// Distinct source ids, sorted.
    pub fn sources(&self) -> Vec<String> {
        let mut out: Vec<String> = self.profiles.iter().map(|p| p.source.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// Distinct plate ids, sorted.
    pub fn plates(&self) -> Vec<String> {
        let mut out: Vec<String> = self.profiles.iter().map(|p| p.plate.clone()).collect();
        out.sort();
        out.dedup();
        out
    }
}
