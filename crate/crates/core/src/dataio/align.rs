//! Zero-padded feature alignment for out-of-distribution datasets.

use std::collections::HashMap;

use super::{canonicalize_feature_name, Dataset, FeatureSchema};
use crate::{CoreError, Result};

/// Outcome of aligning a dataset onto a reference schema.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignReport {
    /// Features copied into their reference positions.
    pub matched: usize,
    /// Input features with no reference counterpart (dropped).
    pub dropped: usize,
    pub reference_len: usize,
    pub input_len: usize,
}

/// Maps a dataset into a reference feature space by exact canonical-name
/// match: matched features are copied into their reference positions,
/// unmatched reference positions are zero-filled, and extra input features
/// are dropped. Errors when no feature overlaps.
pub fn align_features(dataset: &Dataset, reference: &FeatureSchema) -> Result<(Dataset, AlignReport)> {
    let ref_canon = reference.canonical_names();
    let mut ref_index: HashMap<&str, usize> = HashMap::with_capacity(ref_canon.len());
    for (i, name) in ref_canon.iter().enumerate() {
        ref_index.insert(name.as_str(), i);
    }

    // mapping[j] = reference position of input feature j, if any.
    let mut mapping: Vec<Option<usize>> = Vec::with_capacity(dataset.schema.len());
    let mut matched = 0usize;
    for name in dataset.schema.names() {
        let canon = canonicalize_feature_name(name);
        let hit = ref_index.get(canon.as_str()).copied();
        if hit.is_some() {
            matched += 1;
        }
        mapping.push(hit);
    }
    if matched == 0 {
        return Err(CoreError::invalid(
            "no overlapping features between dataset and reference schema",
        ));
    }

    let report = AlignReport {
        matched,
        dropped: dataset.schema.len() - matched,
        reference_len: reference.len(),
        input_len: dataset.schema.len(),
    };

    let mut profiles = Vec::with_capacity(dataset.profiles.len());
    for p in &dataset.profiles {
        let mut values = vec![0.0; reference.len()];
        for (j, slot) in mapping.iter().enumerate() {
            if let Some(i) = slot {
                values[*i] = p.values[j];
            }
        }
        let mut aligned = p.clone();
        aligned.values = values;
        profiles.push(aligned);
    }
    Ok((Dataset::new(reference.clone(), profiles)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Profile;

    fn profile(values: Vec<f64>) -> Profile {
        Profile {
            values,
            source: "s".into(),
            plate: "p".into(),
            well: "w".into(),
            compound: "c".into(),
            moa: None,
            is_negative_control: false,
        }
    }

    fn schema(names: &[&str]) -> FeatureSchema {
        FeatureSchema::from_names(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn identical_schemas_align_to_identity() {
        let s = schema(&["cells_dna_a", "cells_dna_b", "nuclei_rna_c"]);
        let d = Dataset::new(s.clone(), vec![profile(vec![1.0, 2.0, 3.0])]).unwrap();
        let (aligned, report) = align_features(&d, &s).unwrap();
        assert_eq!(aligned.profiles[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(report.matched, 3);
        assert_eq!(report.dropped, 0);
    }

    #[test]
    fn disjoint_schemas_error_on_zero_overlap() {
        let a = schema(&["cells_dna_a"]);
        let b = schema(&["nuclei_rna_z"]);
        let d = Dataset::new(a, vec![profile(vec![1.0])]).unwrap();
        assert!(align_features(&d, &b).is_err());
    }

    #[test]
    fn partial_overlap_zero_fills_and_reports() {
        let reference = schema(&[
            "cells_dna_f0",
            "cells_dna_f1",
            "cells_dna_f2",
            "cells_dna_f3",
            "nuclei_rna_f4",
            "nuclei_rna_f5",
            "nuclei_rna_f6",
            "nuclei_rna_f7",
            "cytoplasm_agp_f8",
            "cytoplasm_agp_f9",
        ]);
        // 4 matches (case/separator variations), 1 extra input feature.
        let input = schema(&[
            "Cells_DNA_F1",
            "cells-dna-f3",
            "nuclei_rna_f5",
            "cytoplasm_agp_f9",
            "other_ch_unknown",
        ]);
        let d = Dataset::new(input, vec![profile(vec![10.0, 30.0, 50.0, 90.0, 99.0])]).unwrap();
        let (aligned, report) = align_features(&d, &reference).unwrap();
        assert_eq!(report.matched, 4);
        assert_eq!(report.dropped, 1);
        let v = &aligned.profiles[0].values;
        assert_eq!(v.len(), 10);
        assert_eq!(v[1], 10.0);
        assert_eq!(v[3], 30.0);
        assert_eq!(v[5], 50.0);
        assert_eq!(v[9], 90.0);
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        assert_eq!(zeros, 6);
    }

    #[test]
    fn alignment_is_idempotent() {
        let reference = schema(&["cells_dna_a", "cells_dna_b", "nuclei_rna_c"]);
        let input = schema(&["nuclei_rna_c", "cells_dna_a"]);
        let d = Dataset::new(input, vec![profile(vec![5.0, 6.0])]).unwrap();
        let (once, _) = align_features(&d, &reference).unwrap();
        let (twice, report) = align_features(&once, &reference).unwrap();
        assert_eq!(once, twice);
        assert_eq!(report.matched, 3);
    }
}
