//! Synthetic morphological profiles with planted batch effects.
//!
//! Biology is MoA-structured: each mechanism class owns a direction in
//! feature space and its compounds scatter around it. Every plate then
//! applies an affine transform `x·δ_b + γ_b` (recorded as ground truth)
//! before observation noise, mirroring the additive/multiplicative batch
//! model the classical correctors assume.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureSchema, Profile, CONTROL_COMPOUND};
use crate::tensor::Array;
use crate::{CoreError, Result};

/// Generator configuration. Counts must all be ≥ 1 and scales ≥ 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sources: usize,
    pub plates_per_source: usize,
    pub wells_per_plate: usize,
    /// Negative-control wells at the start of each plate.
    pub controls_per_plate: usize,
    pub n_compounds: usize,
    pub n_moas: usize,
    pub n_features: usize,
    pub n_groups: usize,
    /// Scale of the compound effect vectors.
    pub bio_effect: f64,
    /// Scale of the additive per-plate shift (γ role).
    pub gamma_shift: f64,
    /// Base of the multiplicative per-plate factor (δ role).
    pub delta_scale: f64,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sources: 3,
            plates_per_source: 2,
            wells_per_plate: 96,
            controls_per_plate: 12,
            n_compounds: 40,
            n_moas: 8,
            n_features: 200,
            n_groups: 10,
            bio_effect: 1.0,
            gamma_shift: 2.0,
            delta_scale: 1.5,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_sources", self.n_sources),
            ("plates_per_source", self.plates_per_source),
            ("wells_per_plate", self.wells_per_plate),
            ("n_compounds", self.n_compounds),
            ("n_moas", self.n_moas),
            ("n_features", self.n_features),
            ("n_groups", self.n_groups),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CoreError::config(format!("{name} must be >= 1")));
            }
        }
        if self.controls_per_plate >= self.wells_per_plate {
            return Err(CoreError::config(
                "controls_per_plate must leave room for treatment wells",
            ));
        }
        if self.n_groups > self.n_features {
            return Err(CoreError::config("n_groups cannot exceed n_features"));
        }
        for (name, v) in [
            ("bio_effect", self.bio_effect),
            ("gamma_shift", self.gamma_shift),
            ("noise", self.noise),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(CoreError::config(format!("{name} must be finite and >= 0")));
            }
        }
        if self.delta_scale <= 0.0 || !self.delta_scale.is_finite() {
            return Err(CoreError::config("delta_scale must be finite and > 0"));
        }
        Ok(())
    }
}

/// Realized affine batch effect of one plate.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlateEffect {
    pub plate: String,
    pub source: String,
    pub gamma: f64,
    pub delta: f64,
}

/// Everything the generator knows that a correction method must recover.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GroundTruth {
    pub plate_effects: Vec<PlateEffect>,
    /// Per-feature baseline added to every well.
    pub baseline: Vec<f64>,
    /// Compound id → effect vector (zero for the control compound).
    pub compound_effects: BTreeMap<String, Vec<f64>>,
    /// Compound id → mechanism label.
    pub compound_moa: BTreeMap<String, String>,
}

/// Per-source and per-plate effect magnitudes cycle through fixed patterns,
/// so small configurations plant exact, test-friendly values: with one plate
/// per source, source k+1 receives γ = gamma_shift·SOURCE_PATTERN[k].
const SOURCE_PATTERN: [f64; 8] = [0.0, 1.0, -1.0, 0.6, -0.6, 0.3, -0.3, 0.8];
const PLATE_PATTERN: [f64; 8] = [0.0, 1.0, -1.0, 0.5, -0.5, 0.75, -0.75, 0.25];
const PLATE_WEIGHT: f64 = 0.5;

fn compartment_name(group: usize) -> &'static str {
    ["cells", "cytoplasm", "nuclei"][group % 3]
}

fn synth_schema(n_features: usize, n_groups: usize) -> FeatureSchema {
    let names: Vec<String> = (0..n_features)
        .map(|i| {
            let g = i * n_groups / n_features;
            format!("{}_ch{}_m{:03}", compartment_name(g), g / 3, i)
        })
        .collect();
    let groups: Vec<usize> = (0..n_features).map(|i| i * n_groups / n_features).collect();
    FeatureSchema::new(names, groups).expect("synthetic schema is well-formed")
}

/// Generates a dataset plus the ground-truth record of everything planted.
/// Identical configs (including seed) produce identical output.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let schema = synth_schema(config.n_features, config.n_groups);
    let l = config.n_features;

    let baseline = Array::randn(vec![l], 0.5, &mut rng).into_data();

    let moa_dirs: Vec<Vec<f64>> = (0..config.n_moas)
        .map(|_| Array::randn(vec![l], 1.0, &mut rng).into_data())
        .collect();

    let mut compound_effects = BTreeMap::new();
    let mut compound_moa = BTreeMap::new();
    let compound_ids: Vec<String> = (0..config.n_compounds)
        .map(|k| format!("CPD-{:04}", k + 1))
        .collect();
    for (k, id) in compound_ids.iter().enumerate() {
        let moa = k % config.n_moas;
        let jitter = Array::randn(vec![l], 1.0, &mut rng).into_data();
        let effect: Vec<f64> = moa_dirs[moa]
            .iter()
            .zip(&jitter)
            .map(|(d, j)| config.bio_effect * (d + 0.35 * j))
            .collect();
        compound_effects.insert(id.clone(), effect);
        compound_moa.insert(id.clone(), format!("moa_{:02}", moa + 1));
    }
    compound_effects.insert(CONTROL_COMPOUND.to_string(), vec![0.0; l]);

    let mut plate_effects = Vec::new();
    let mut profiles = Vec::new();
    let zero_effect = vec![0.0; l];
    let mut treatment_counter = 0usize;

    for s in 0..config.n_sources {
        let source = format!("source_{}", s + 1);
        let src_factor = SOURCE_PATTERN[s % SOURCE_PATTERN.len()];
        for j in 0..config.plates_per_source {
            let plate = format!("{}_P{}", source, j + 1);
            let factor = src_factor + PLATE_WEIGHT * PLATE_PATTERN[j % PLATE_PATTERN.len()];
            let gamma = config.gamma_shift * factor;
            let delta = config.delta_scale.powf(factor);
            plate_effects.push(PlateEffect {
                plate: plate.clone(),
                source: source.clone(),
                gamma,
                delta,
            });

            for w in 0..config.wells_per_plate {
                let is_control = w < config.controls_per_plate;
                let (compound, moa, effect) = if is_control {
                    (CONTROL_COMPOUND.to_string(), None, &zero_effect)
                } else {
                    let k = treatment_counter % config.n_compounds;
                    treatment_counter += 1;
                    (
                        compound_ids[k].clone(),
                        Some(compound_moa[&compound_ids[k]].clone()),
                        &compound_effects[&compound_ids[k]],
                    )
                };
                let values: Vec<f64> = (0..l)
                    .map(|i| {
                        let bio = baseline[i] + effect[i];
                        let (noise, _) = gauss_pair(&mut rng, config.noise);
                        bio * delta + gamma + noise
                    })
                    .collect();
                profiles.push(Profile {
                    values,
                    source: source.clone(),
                    plate: plate.clone(),
                    well: format!("W{:03}", w + 1),
                    compound,
                    moa,
                    is_negative_control: is_control,
                });
            }
        }
    }

    let truth = GroundTruth {
        plate_effects,
        baseline,
        compound_effects,
        compound_moa,
    };
    Ok((Dataset::new(schema, profiles)?, truth))
}

fn gauss_pair(rng: &mut impl Rng, std: f64) -> (f64, f64) {
    if std == 0.0 {
        return (0.0, 0.0);
    }
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
    (r * c * std, r * s * std)
}
