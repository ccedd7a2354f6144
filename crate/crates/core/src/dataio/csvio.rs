//! CSV interchange for datasets and embeddings, plus the schema sidecar file.
//!
//! The dataset format is a header of six metadata columns followed by one
//! column per feature. Values are written as decimal text with 17
//! significant digits, so save → load round-trips f64 exactly. Embedding
//! tables reuse the same format with `emb_<k>` feature names.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Dataset, FeatureSchema, Profile};
use crate::{CoreError, Result};

/// Required leading columns, in order.
pub const METADATA_COLUMNS: [&str; 6] = [
    "Metadata_Source",
    "Metadata_Plate",
    "Metadata_Well",
    "Metadata_InChIKey",
    "Metadata_MoA",
    "Metadata_Control",
];

/// Writes a dataset; deterministic byte-for-byte for identical input.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header: Vec<String> = METADATA_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(dataset.schema.names().iter().cloned());
    w.write_record(&header)?;
    for p in &dataset.profiles {
        let mut rec: Vec<String> = vec![
            p.source.clone(),
            p.plate.clone(),
            p.well.clone(),
            p.compound.clone(),
            p.moa.clone().unwrap_or_default(),
            if p.is_negative_control { "1".into() } else { "0".into() },
        ];
        rec.extend(p.values.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset saved by [`save_csv`] (or any CSV honoring the header
/// contract). The six metadata columns must lead the header in order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let header = r.headers()?.clone();
    for (i, want) in METADATA_COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(CoreError::invalid(format!(
                    "expected column {} at position {}, found {:?}",
                    want, i, got
                )))
            }
            None => {
                return Err(CoreError::invalid(format!("missing required column {}", want)))
            }
        }
    }
    let feature_names: Vec<String> = header
        .iter()
        .skip(METADATA_COLUMNS.len())
        .map(|s| s.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(CoreError::invalid("no feature columns after the metadata section"));
    }
    let schema = FeatureSchema::from_names(feature_names)?;

    let mut profiles = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != METADATA_COLUMNS.len() + schema.len() {
            return Err(CoreError::invalid(format!(
                "row {} has {} fields, expected {}",
                line + 2,
                record.len(),
                METADATA_COLUMNS.len() + schema.len()
            )));
        }
        let control = match &record[5] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(CoreError::invalid(format!(
                    "row {}: Metadata_Control must be 0/1, got {:?}",
                    line + 2,
                    other
                )))
            }
        };
        let values: Vec<f64> = record
            .iter()
            .skip(METADATA_COLUMNS.len())
            .enumerate()
            .map(|(col, s)| {
                s.parse::<f64>().map_err(|_| {
                    CoreError::invalid(format!(
                        "row {}: feature column {} is not a number: {:?}",
                        line + 2,
                        col,
                        s
                    ))
                })
            })
            .collect::<Result<_>>()?;
        profiles.push(Profile {
            values,
            source: record[0].to_string(),
            plate: record[1].to_string(),
            well: record[2].to_string(),
            compound: record[3].to_string(),
            moa: if record[4].is_empty() {
                None
            } else {
                Some(record[4].to_string())
            },
            is_negative_control: control,
        });
    }
    Dataset::new(schema, profiles)
}

/// Schema sidecar: one `name<TAB>group_id` line per feature.
pub fn save_schema(schema: &FeatureSchema, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path.as_ref())?;
    for (name, group) in schema.names().iter().zip(schema.groups()) {
        writeln!(f, "{name}\t{group}")?;
    }
    Ok(())
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<FeatureSchema> {
    let f = BufReader::new(File::open(path.as_ref())?);
    let mut names = Vec::new();
    let mut groups = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| CoreError::invalid(format!("schema line {}: empty", i + 1)))?;
        let group: usize = parts
            .next()
            .ok_or_else(|| CoreError::invalid(format!("schema line {}: missing group id", i + 1)))?
            .parse()
            .map_err(|_| CoreError::invalid(format!("schema line {}: bad group id", i + 1)))?;
        names.push(name.to_string());
        groups.push(group);
    }
    FeatureSchema::new(names, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use proptest::prelude::*;

    fn fixture() -> Dataset {
        let (data, _) = generate_synthetic(&SynthConfig {
            n_sources: 2,
            plates_per_source: 1,
            wells_per_plate: 8,
            controls_per_plate: 2,
            n_compounds: 3,
            n_moas: 2,
            n_features: 5,
            n_groups: 2,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        data
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let data = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_csv(&data, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(data, loaded);
    }

    #[test]
    fn missing_plate_column_errors_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "Metadata_Source,Metadata_Well,Metadata_InChIKey,Metadata_MoA,Metadata_Control,cells_dna_a\n\
             s,w,c,,0,1.0\n",
        )
        .unwrap();
        let err = load_csv(&path).unwrap_err().to_string();
        assert!(err.contains("Metadata_Plate"), "error was: {err}");
    }

    #[test]
    fn empty_feature_section_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(
            &path,
            "Metadata_Source,Metadata_Plate,Metadata_Well,Metadata_InChIKey,Metadata_MoA,Metadata_Control\ns,p,w,c,,0\n",
        )
        .unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(
            &path,
            "Metadata_Source,Metadata_Plate,Metadata_Well,Metadata_InChIKey,Metadata_MoA,Metadata_Control,cells_dna_a,cells_dna_b\n\
             s,p,w,c,,0,1.0\n",
        )
        .unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn schema_sidecar_round_trips() {
        let data = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.tsv");
        save_schema(&data.schema, &path).unwrap();
        let loaded = load_schema(&path).unwrap();
        assert_eq!(&loaded, &data.schema);
    }

    proptest! {
        #[test]
        fn arbitrary_finite_values_round_trip(values in proptest::collection::vec(-1e12f64..1e12, 4)) {
            let schema = FeatureSchema::from_names(
                (0..4).map(|i| format!("cells_dna_m{i}")).collect(),
            ).unwrap();
            let data = Dataset::new(schema, vec![Profile {
                values: values.clone(),
                source: "s".into(),
                plate: "p".into(),
                well: "w".into(),
                compound: "c".into(),
                moa: Some("m".into()),
                is_negative_control: false,
            }]).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.csv");
            save_csv(&data, &path).unwrap();
            let loaded = load_csv(&path).unwrap();
            prop_assert_eq!(loaded.profiles[0].values.clone(), values);
        }
    }
}
