//! Stage configuration, the per-stage training loop, and the three-stage
//! curriculum driver.
//!
//! Stage 1 optimizes the masked-reconstruction loss over unconstrained
//! batches; stage 2 adds the supervised contrastive loss (unit weights) on
//! single-source batches; stage 3 optimizes the contrastive loss alone on
//! mixed-source batches, which is where the source tokens learn to absorb
//! cross-source variation.

mod batching;
mod losses;
mod masking;
mod optimizer;

pub use batching::{make_batches, BatchPolicy};
pub use losses::{label_ids, loss_cwmm, loss_cwmm_graph, loss_supcon, loss_supcon_graph};
pub use masking::{plan_cwmm_mask, sample_mask_prob, MaskPlan};
pub use optimizer::AdamW;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::encoder::{forward_batch, BatchInput, EncoderConfig, ModelParams, ModelVars};
use crate::tensor::{Array, Graph};
use crate::{CoreError, Result};

/// Configuration of one curriculum stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub policy: BatchPolicy,
    pub epochs: usize,
    /// Range the batch-level masking probability is drawn from (stages 1-2).
    pub p_range: (f64, f64),
    /// Contrastive temperature (stages 2-3).
    pub temperature: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Canonical per-stage hyperparameters: stage 1 lr 1e-4 / batch 16 /
    /// unconstrained batches, stage 2 lr 1e-5 / batch 32 / single-source,
    /// stage 3 lr 1e-5 / batch 64 / mixed-source; τ = 0.1 where contrastive
    /// learning is active, masking probability drawn from [0.05, 0.4].
    pub fn stage_defaults(stage: u8) -> Result<Self> {
        let base = TrainConfig {
            stage,
            learning_rate: 1e-4,
            batch_size: 16,
            policy: BatchPolicy::Any,
            epochs: 20,
            p_range: (0.05, 0.4),
            temperature: 0.1,
            seed: 0,
        };
        match stage {
            1 => Ok(base),
            2 => Ok(TrainConfig {
                learning_rate: 1e-5,
                batch_size: 32,
                policy: BatchPolicy::SingleSource,
                epochs: 10,
                ..base
            }),
            3 => Ok(TrainConfig {
                learning_rate: 1e-5,
                batch_size: 64,
                policy: BatchPolicy::MixedSource,
                epochs: 10,
                ..base
            }),
            other => Err(CoreError::config(format!("unknown stage {other}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(CoreError::config(format!("stage must be 1, 2 or 3, got {}", self.stage)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(CoreError::config("learning_rate must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(CoreError::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(CoreError::config("batch_size must be >= 1"));
        }
        match self.stage {
            2 => {
                if self.policy != BatchPolicy::SingleSource {
                    return Err(CoreError::config("stage 2 requires the single-source policy"));
                }
            }
            3 => {
                if self.policy != BatchPolicy::MixedSource {
                    return Err(CoreError::config("stage 3 requires the mixed-source policy"));
                }
            }
            _ => {}
        }
        if self.stage >= 2 {
            if self.batch_size < 2 {
                return Err(CoreError::config(
                    "contrastive stages need batch_size >= 2",
                ));
            }
            if self.temperature <= 0.0 || !self.temperature.is_finite() {
                return Err(CoreError::config("temperature must be positive"));
            }
        }
        if self.stage <= 2 {
            let (lo, hi) = self.p_range;
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(CoreError::config(format!(
                    "p_range {:?} must satisfy 0 <= lo <= hi <= 1",
                    self.p_range
                )));
            }
        }
        Ok(())
    }
}

/// One optimizer step's loss components.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub cwmm: Option<f64>,
    pub supcon: Option<f64>,
}

/// Per-step loss trace of one stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageTrace {
    pub stage: u8,
    pub records: Vec<StepRecord>,
}

impl StageTrace {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path.as_ref())?;
        writeln!(f, "step,epoch,total,cwmm,supcon")?;
        for r in &self.records {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
            writeln!(
                f,
                "{},{},{:.16e},{},{}",
                r.step,
                r.epoch,
                r.total,
                fmt(r.cwmm),
                fmt(r.supcon)
            )?;
        }
        Ok(())
    }
}

/// Runs one curriculum stage, mutating the model in place.
///
/// Batches smaller than two profiles are skipped in the contrastive stages;
/// a masked-stage batch where no profile has maskable (non-zero) values is
/// skipped as well. A non-finite loss or gradient aborts with a diagnostic.
pub fn run_stage(params: &mut ModelParams, dataset: &Dataset, config: &TrainConfig) -> Result<StageTrace> {
    config.validate()?;
    dataset.validate()?;
    if dataset.schema.names() != params.schema.names() {
        return Err(CoreError::invalid(
            "dataset schema does not match the model; align features first",
        ));
    }
    let source_idx: Vec<usize> = dataset
        .profiles
        .iter()
        .map(|p| {
            params.source_index(&p.source).ok_or_else(|| {
                CoreError::invalid(format!("profile source {:?} not in the model's registry", p.source))
            })
        })
        .collect::<Result<_>>()?;

    let n_features = params.schema.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config.learning_rate);
    let mut trace = StageTrace {
        stage: config.stage,
        records: Vec::new(),
    };
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let batches = make_batches(dataset, config.policy, config.batch_size, &mut rng)?;
        for batch in batches {
            if config.stage >= 2 && batch.len() < 2 {
                continue;
            }
            let use_mask = config.stage <= 2;
            let p = if use_mask {
                sample_mask_prob(config.p_range, &mut rng)
            } else {
                0.0
            };

            let mut values = Vec::with_capacity(batch.len());
            let mut sources = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            let mut plans = Vec::with_capacity(batch.len());
            for &i in &batch {
                let profile = &dataset.profiles[i];
                values.push(profile.values.clone());
                sources.push(source_idx[i]);
                labels.push(profile.compound.clone());
                if use_mask {
                    plans.push(plan_cwmm_mask(&profile.values, &params.schema, (p, p), &mut rng)?);
                }
            }
            let nothing_masked = use_mask && plans.iter().all(|pl| pl.is_empty());
            if config.stage == 1 && nothing_masked {
                continue;
            }

            let g = Graph::new();
            let (vars, flat) = ModelVars::bind(&g, params);
            let masks = use_mask.then(|| plans.iter().map(|pl| pl.flags(n_features)).collect());
            let out = forward_batch(
                &g,
                &vars,
                &BatchInput {
                    values: values.clone(),
                    sources,
                    masks,
                },
                n_features,
            );

            let mut cwmm_val = None;
            let mut supcon_val = None;
            let loss = match config.stage {
                1 => {
                    let l = loss_cwmm_graph(&g, &out.recon, &values, &plans, n_features)?;
                    cwmm_val = Some(l.value().data()[0]);
                    l
                }
                2 => {
                    let ls = loss_supcon_graph(&g, &out.cls, &label_ids(&labels), config.temperature)?;
                    supcon_val = Some(ls.value().data()[0]);
                    if nothing_masked {
                        ls
                    } else {
                        let lc = loss_cwmm_graph(&g, &out.recon, &values, &plans, n_features)?;
                        cwmm_val = Some(lc.value().data()[0]);
                        lc.add(&ls)
                    }
                }
                _ => {
                    let ls = loss_supcon_graph(&g, &out.cls, &label_ids(&labels), config.temperature)?;
                    supcon_val = Some(ls.value().data()[0]);
                    ls
                }
            };

            step += 1;
            let total = loss.value().data()[0];
            if !total.is_finite() {
                return Err(CoreError::non_finite(format!(
                    "stage {} step {step}: loss is not finite",
                    config.stage
                )));
            }
            g.backward(&loss)?;
            let grads: Vec<Array> = flat.iter().map(|v| v.grad_or_zero()).collect();
            for (grad, (name, _)) in grads.iter().zip(params.collect()) {
                if !grad.is_finite() {
                    return Err(CoreError::non_finite(format!(
                        "stage {} step {step}: gradient of {name} is not finite",
                        config.stage
                    )));
                }
            }
            let mut slots = params.collect_mut();
            opt.step(&mut slots, &grads);
            trace.records.push(StepRecord {
                step,
                epoch,
                total,
                cwmm: cwmm_val,
                supcon: supcon_val,
            });
        }
    }
    Ok(trace)
}

/// Model snapshot and loss trace for one completed stage.
pub struct StageResult {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub trace: StageTrace,
}

/// Output of a full curriculum run; `stages` holds the checkpoint after each
/// of the three stages (the last one is the final model).
pub struct CurriculumResult {
    pub stages: Vec<StageResult>,
}

impl CurriculumResult {
    pub fn final_model(&self) -> &ModelParams {
        &self.stages.last().expect("curriculum has stages").params
    }
}

/// Initializes a model from the dataset's schema and source registry
/// (sorted), then executes the three stages in order, snapshotting a
/// checkpoint after each. Identical inputs and seeds reproduce identical
/// parameters.
pub fn run_curriculum(
    dataset: &Dataset,
    encoder_config: EncoderConfig,
    stage_configs: &[TrainConfig; 3],
    seed: u64,
) -> Result<CurriculumResult> {
    for (i, c) in stage_configs.iter().enumerate() {
        if c.stage != (i + 1) as u8 {
            return Err(CoreError::config(format!(
                "curriculum config {} must be stage {}, got {}",
                i,
                i + 1,
                c.stage
            )));
        }
        c.validate()?;
    }
    let sources = dataset.sources();
    let mut params = ModelParams::init(dataset.schema.clone(), sources, encoder_config, seed)?;
    let mut stages = Vec::with_capacity(3);
    for config in stage_configs {
        let trace = run_stage(&mut params, dataset, config)?;
        stages.push(StageResult {
            config: config.clone(),
            params: params.clone(),
            trace,
        });
    }
    Ok(CurriculumResult { stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use crate::encoder::encode;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_blocks: 1,
            n_recurrences: 2,
            filter_hidden: 4,
            n_freqs: 2,
            mlp_ratio: 2,
        }
    }

    fn tiny_dataset(seed: u64) -> Dataset {
        generate_synthetic(&SynthConfig {
            n_sources: 2,
            plates_per_source: 1,
            wells_per_plate: 100,
            controls_per_plate: 10,
            n_compounds: 10,
            n_moas: 3,
            n_features: 12,
            n_groups: 3,
            bio_effect: 1.0,
            gamma_shift: 0.5,
            delta_scale: 1.1,
            noise: 0.3,
            seed,
        })
        .unwrap()
        .0
    }

    fn model_for(dataset: &Dataset, seed: u64) -> ModelParams {
        ModelParams::init(dataset.schema.clone(), dataset.sources(), tiny_encoder(), seed).unwrap()
    }

    #[test]
    fn stage_defaults_match_the_canonical_table() {
        let s1 = TrainConfig::stage_defaults(1).unwrap();
        assert_eq!((s1.learning_rate, s1.batch_size), (1e-4, 16));
        assert_eq!(s1.policy, BatchPolicy::Any);
        let s2 = TrainConfig::stage_defaults(2).unwrap();
        assert_eq!((s2.learning_rate, s2.batch_size), (1e-5, 32));
        assert_eq!(s2.policy, BatchPolicy::SingleSource);
        assert_eq!(s2.temperature, 0.1);
        let s3 = TrainConfig::stage_defaults(3).unwrap();
        assert_eq!((s3.learning_rate, s3.batch_size), (1e-5, 64));
        assert_eq!(s3.policy, BatchPolicy::MixedSource);
        assert_eq!(s3.temperature, 0.1);
        assert_eq!(s1.p_range, (0.05, 0.4));
        assert!(TrainConfig::stage_defaults(4).is_err());
    }

    #[test]
    fn batch_size_one_fails_config_validation_for_stage_two() {
        let mut c = TrainConfig::stage_defaults(2).unwrap();
        c.batch_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let data = tiny_dataset(31);
        let mut params = model_for(&data, 1);
        let before = params.clone();
        let mut config = TrainConfig::stage_defaults(1).unwrap();
        config.learning_rate = 0.0;
        config.epochs = 1;
        config.seed = 5;
        run_stage(&mut params, &data, &config).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn stage_one_halves_the_reconstruction_loss() {
        let data = tiny_dataset(32);
        let mut params = model_for(&data, 2);
        let mut config = TrainConfig::stage_defaults(1).unwrap();
        config.learning_rate = 3e-3;
        config.epochs = 43; // 7 steps/epoch × 43 ≈ 300 steps
        config.seed = 7;
        let trace = run_stage(&mut params, &data, &config).unwrap();
        assert!(trace.records.len() >= 300);
        let initial = trace.records.first().unwrap().total;
        let last = trace.records.last().unwrap().total;
        assert!(
            last < 0.5 * initial,
            "loss did not halve: {initial} -> {last}"
        );
    }

    #[test]
    fn stage_two_increases_within_label_cosine_similarity() {
        let data = tiny_dataset(33);
        let mut params = model_for(&data, 3);

        let mean_within_label_cosine = |params: &ModelParams| -> f64 {
            let src_of = |p: &crate::dataio::Profile| {
                params.source_index(&p.source).unwrap()
            };
            let embs: Vec<Vec<f64>> = data
                .profiles
                .iter()
                .map(|p| {
                    let out = encode(params, &p.values, src_of(p), None).unwrap();
                    let norm = out.cls_embedding.norm();
                    out.cls_embedding.data().iter().map(|v| v / norm).collect()
                })
                .collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for i in 0..embs.len() {
                for j in (i + 1)..embs.len() {
                    if data.profiles[i].compound == data.profiles[j].compound {
                        total += embs[i]
                            .iter()
                            .zip(&embs[j])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        count += 1;
                    }
                }
            }
            total / count as f64
        };

        // Stage 2 follows stage 1; the masked-reconstruction phase first
        // spreads the CLS space out of its near-collinear initialization.
        let mut warmup = TrainConfig::stage_defaults(1).unwrap();
        warmup.learning_rate = 3e-3;
        warmup.epochs = 25;
        warmup.seed = 19;
        run_stage(&mut params, &data, &warmup).unwrap();

        let before = mean_within_label_cosine(&params);
        let mut config = TrainConfig::stage_defaults(2).unwrap();
        config.learning_rate = 1e-3;
        config.epochs = 10;
        config.seed = 11;
        run_stage(&mut params, &data, &config).unwrap();
        let after = mean_within_label_cosine(&params);
        assert!(
            after > before,
            "within-label cosine did not increase: {before} -> {after}"
        );
    }

    #[test]
    fn overfitting_one_repeated_profile_shrinks_masked_error() {
        // 16 copies of a single profile; 200 steps of masked reconstruction
        // must cut the squared error at masked positions to below 10% of its
        // starting value.
        let base = tiny_dataset(34);
        let mut profiles = Vec::new();
        for _ in 0..16 {
            profiles.push(base.profiles[20].clone());
        }
        let data = Dataset::new(base.schema.clone(), profiles).unwrap();
        let mut params = model_for(&data, 4);
        let mut config = TrainConfig::stage_defaults(1).unwrap();
        config.learning_rate = 5e-3;
        config.epochs = 200; // one batch per epoch
        config.p_range = (0.25, 0.25); // fixed rate keeps the target stationary
        config.seed = 13;
        let trace = run_stage(&mut params, &data, &config).unwrap();
        let initial = trace.records.first().unwrap().total;
        let last = trace.records.last().unwrap().total;
        assert!(
            last < 0.1 * initial,
            "masked error not overfit: {initial} -> {last}"
        );
    }

    #[test]
    fn curriculum_produces_three_checkpoints_deterministically() {
        let data = tiny_dataset(35);
        let mut configs = [
            TrainConfig::stage_defaults(1).unwrap(),
            TrainConfig::stage_defaults(2).unwrap(),
            TrainConfig::stage_defaults(3).unwrap(),
        ];
        for c in &mut configs {
            c.epochs = 1;
            c.seed = 17;
        }
        let a = run_curriculum(&data, tiny_encoder(), &configs, 99).unwrap();
        assert_eq!(a.stages.len(), 3);
        let b = run_curriculum(&data, tiny_encoder(), &configs, 99).unwrap();
        assert_eq!(a.final_model(), b.final_model());
        // Stages genuinely differ from one another.
        assert_ne!(a.stages[0].params, a.stages[1].params);
        assert_ne!(a.stages[1].params, a.stages[2].params);
    }

    #[test]
    fn curriculum_rejects_misordered_configs() {
        let data = tiny_dataset(36);
        let configs = [
            TrainConfig::stage_defaults(2).unwrap(),
            TrainConfig::stage_defaults(2).unwrap(),
            TrainConfig::stage_defaults(3).unwrap(),
        ];
        assert!(run_curriculum(&data, tiny_encoder(), &configs, 1).is_err());
    }

    #[test]
    fn unknown_source_is_reported() {
        let data = tiny_dataset(37);
        let mut params = model_for(&data, 5);
        params.sources = vec!["elsewhere".into()];
        let mut config = TrainConfig::stage_defaults(1).unwrap();
        config.epochs = 1;
        let err = run_stage(&mut params, &data, &config).unwrap_err();
        assert!(err.to_string().contains("source"));
    }

    #[test]
    fn trace_csv_is_written_with_loss_components() {
        let data = tiny_dataset(38);
        let mut params = model_for(&data, 6);
        let mut config = TrainConfig::stage_defaults(1).unwrap();
        config.epochs = 1;
        let trace = run_stage(&mut params, &data, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        trace.save_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,epoch,total,cwmm,supcon"));
        assert_eq!(text.lines().count(), trace.records.len() + 1);
    }
}
