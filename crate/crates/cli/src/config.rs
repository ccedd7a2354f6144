//! TOML config loading with the seed-resolution policy:
//! `--seed` flag > file value > `MORPHOTR_SEED` env var > 0.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use morphotr_core::dataio::SynthConfig;
use morphotr_core::encoder::EncoderConfig;
use morphotr_core::training::{BatchPolicy, TrainConfig};

pub fn env_seed() -> Option<u64> {
    std::env::var("MORPHOTR_SEED").ok().and_then(|v| v.parse().ok())
}

pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).or_else(env_seed).unwrap_or(0)
}

/// Generator config file; every field optional, defaults from
/// [`SynthConfig`].
pub fn load_synth_config(path: &Path, seed_flag: Option<u64>) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text.parse().context("parsing generator config")?;
    let file_seed = table.get("seed").and_then(|v| v.as_integer()).map(|v| v as u64);
    let mut config: SynthConfig = toml::Value::Table(table)
        .try_into()
        .context("invalid generator config")?;
    config.seed = resolve_seed(seed_flag, file_seed);
    Ok(config)
}

/// Stage config file: `stage` is required, everything else falls back to
/// the canonical per-stage defaults. An optional `[model]` section sets the
/// architecture for `pretrain`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    stage: u8,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    policy: Option<BatchPolicy>,
    epochs: Option<usize>,
    p_range: Option<(f64, f64)>,
    temperature: Option<f64>,
    seed: Option<u64>,
    model: Option<EncoderConfig>,
}

pub struct TrainSetup {
    pub train: TrainConfig,
    pub model: EncoderConfig,
}

pub fn load_train_config(
    path: Option<&Path>,
    expected_stage: u8,
    seed_flag: Option<u64>,
) -> Result<TrainSetup> {
    let mut base = TrainConfig::stage_defaults(expected_stage)?;
    let mut model = EncoderConfig::default();
    let mut file_seed = None;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: TrainFile = toml::from_str(&text).context("invalid stage config")?;
        if file.stage != expected_stage {
            bail!(
                "config {} is for stage {}, expected stage {}",
                path.display(),
                file.stage,
                expected_stage
            );
        }
        if let Some(v) = file.learning_rate {
            base.learning_rate = v;
        }
        if let Some(v) = file.batch_size {
            base.batch_size = v;
        }
        if let Some(v) = file.policy {
            base.policy = v;
        }
        if let Some(v) = file.epochs {
            base.epochs = v;
        }
        if let Some(v) = file.p_range {
            base.p_range = v;
        }
        if let Some(v) = file.temperature {
            base.temperature = v;
        }
        if let Some(v) = file.model {
            model = v;
        }
        file_seed = file.seed;
    }
    base.seed = resolve_seed(seed_flag, file_seed);
    base.validate()?;
    model.validate()?;
    Ok(TrainSetup { train: base, model })
}
