//! Implementations of the pipeline subcommands.

use std::path::Path;

use anyhow::{bail, Context, Result};

use morphotr_core::baselines::{
    combat_fit_transform, harmony_transform, sphering_transform, HarmonyConfig,
};
use morphotr_core::dataio::{
    align_features, generate_synthetic, load_csv, preprocess as preprocess_dataset, save_csv,
    Dataset, FeatureSchema, Profile,
};
use morphotr_core::encoder::{encode_dataset, ModelParams};
use morphotr_core::linalg::pca;
use morphotr_core::metrics::{
    compute_report, format_table, load_reports_csv, save_reports_csv, BatchKey, EmbeddingTable,
    MetricConfig, MetricReport,
};
use morphotr_core::training::run_stage;

use crate::config::{load_synth_config, load_train_config, resolve_seed};
use crate::manifest::RunManifest;

pub fn generate(
    config_path: &Path,
    out: &Path,
    truth_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_synth_config(config_path, seed)?;
    let (dataset, truth) = generate_synthetic(&config)?;
    save_csv(&dataset, out)?;
    let truth_out = truth_path
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| out.with_extension("truth.json"));
    serde_json::to_writer_pretty(std::fs::File::create(&truth_out)?, &truth)?;
    println!(
        "generated {} profiles × {} features across {} sources -> {}",
        dataset.len(),
        dataset.schema.len(),
        dataset.sources().len(),
        out.display()
    );
    RunManifest::new("generate")
        .with_config_bytes(&serde_json::to_vec(&config)?)
        .with_seed(config.seed)
        .with_input(config_path)
        .with_output(out)
        .with_output(&truth_out)
        .write_alongside(out)
}

pub fn preprocess(input: &Path, out: &Path) -> Result<()> {
    let dataset = load_csv(input)?;
    let (processed, report) = preprocess_dataset(&dataset)?;
    save_csv(&processed, out)?;
    println!(
        "preprocessed {} profiles ({} values imputed, {} zero-MAD divisors floored) -> {}",
        processed.len(),
        report.imputed,
        report.floored_divisors,
        out.display()
    );
    RunManifest::new("preprocess")
        .with_input(input)
        .with_output(out)
        .write_alongside(out)
}

pub fn pretrain(
    input: &Path,
    config_path: Option<&Path>,
    out: &Path,
    trace_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let setup = load_train_config(config_path, 1, seed)?;
    let dataset = load_csv(input)?;
    let mut model = ModelParams::init(
        dataset.schema.clone(),
        dataset.sources(),
        setup.model,
        setup.train.seed,
    )?;
    println!(
        "stage 1: {} profiles, {} parameters, {} epochs",
        dataset.len(),
        model.n_params(),
        setup.train.epochs
    );
    let trace = run_stage(&mut model, &dataset, &setup.train)?;
    model.save(out)?;
    if let Some(p) = trace_path {
        trace.save_csv(p)?;
    }
    if let (Some(first), Some(last)) = (trace.records.first(), trace.records.last()) {
        println!("loss {:.4} -> {:.4} over {} steps", first.total, last.total, trace.records.len());
    }
    let mut manifest = RunManifest::new("pretrain")
        .with_config_bytes(&serde_json::to_vec(&setup.train)?)
        .with_seed(setup.train.seed)
        .with_input(input)
        .with_output(out);
    if let Some(p) = trace_path {
        manifest = manifest.with_output(p);
    }
    manifest.write_alongside(out)
}

pub fn finetune(
    input: &Path,
    checkpoint: &Path,
    stage: u8,
    config_path: Option<&Path>,
    out: &Path,
    trace_path: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    if !(2..=3).contains(&stage) {
        bail!("finetune runs stage 2 or 3, got {stage}");
    }
    let setup = load_train_config(config_path, stage, seed)?;
    let dataset = load_csv(input)?;
    let mut model = ModelParams::load(checkpoint)?;
    println!(
        "stage {stage}: {} profiles on a {}-parameter checkpoint",
        dataset.len(),
        model.n_params()
    );
    let trace = run_stage(&mut model, &dataset, &setup.train)?;
    model.save(out)?;
    if let Some(p) = trace_path {
        trace.save_csv(p)?;
    }
    if let (Some(first), Some(last)) = (trace.records.first(), trace.records.last()) {
        println!("loss {:.4} -> {:.4} over {} steps", first.total, last.total, trace.records.len());
    }
    let mut manifest = RunManifest::new("finetune")
        .with_config_bytes(&serde_json::to_vec(&setup.train)?)
        .with_seed(setup.train.seed)
        .with_input(input)
        .with_input(checkpoint)
        .with_output(out);
    if let Some(p) = trace_path {
        manifest = manifest.with_output(p);
    }
    manifest.write_alongside(out)
}

/// Wraps an embedding matrix as a dataset (emb_<k> feature columns) so it
/// shares the CSV format and metadata handling.
fn embeddings_as_dataset(source: &Dataset, matrix: Vec<Vec<f64>>) -> Result<Dataset> {
    let d = matrix.first().map_or(0, |r| r.len());
    let schema = FeatureSchema::new(
        (0..d).map(|k| format!("emb_{k}")).collect(),
        vec![0; d],
    )?;
    let profiles: Vec<Profile> = source
        .profiles
        .iter()
        .zip(matrix)
        .map(|(p, values)| Profile {
            values,
            ..p.clone()
        })
        .collect();
    Ok(Dataset::new(schema, profiles)?)
}

pub fn correct(
    input: &Path,
    checkpoint: &Path,
    out: &Path,
    source_id: Option<&str>,
    batch: usize,
) -> Result<()> {
    let dataset = load_csv(input)?;
    let model = ModelParams::load(checkpoint)?;

    let aligned = if dataset.schema.canonical_names() == model.schema.canonical_names() {
        dataset
    } else {
        let (aligned, report) = align_features(&dataset, &model.schema)?;
        println!(
            "schema mismatch: matched {}/{} checkpoint features ({} input features dropped), zero-padding the rest",
            report.matched, report.reference_len, report.dropped
        );
        aligned
    };

    let source_override = match source_id {
        Some(name) => Some(model.source_index(name).ok_or_else(|| {
            anyhow::anyhow!(
                "source {:?} not in the checkpoint registry {:?}",
                name,
                model.sources
            )
        })?),
        None => None,
    };
    let embeddings = encode_dataset(&model, &aligned, batch, source_override)?;
    let emb_dataset = embeddings_as_dataset(&aligned, embeddings)?;
    save_csv(&emb_dataset, out)?;
    println!(
        "embedded {} profiles into {} dimensions -> {}",
        emb_dataset.len(),
        emb_dataset.schema.len(),
        out.display()
    );
    RunManifest::new("correct")
        .with_input(input)
        .with_input(checkpoint)
        .with_output(out)
        .write_alongside(out)
}

fn parse_batch_key(key: &str) -> Result<BatchKey> {
    match key {
        "source" => Ok(BatchKey::Source),
        "plate" => Ok(BatchKey::Plate),
        other => bail!("unknown batch key {other:?} (expected source or plate)"),
    }
}

pub fn evaluate(
    embeddings: &[std::path::PathBuf],
    names: &[String],
    input: Option<&Path>,
    methods: &[String],
    out: &Path,
    batch_key: &str,
    seed: Option<u64>,
) -> Result<()> {
    let key = parse_batch_key(batch_key)?;
    if embeddings.is_empty() && methods.is_empty() {
        bail!("nothing to evaluate: pass --embeddings files and/or --input with --method");
    }
    if !names.is_empty() && names.len() != embeddings.len() {
        bail!("--names must match --embeddings one to one");
    }
    let metric_cfg = MetricConfig {
        seed: resolve_seed(seed, None),
        ..MetricConfig::default()
    };

    let mut reports: Vec<MetricReport> = Vec::new();
    for (i, path) in embeddings.iter().enumerate() {
        let emb = load_csv(path)?;
        let method = names.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().unwrap_or_default().to_string_lossy().to_string()
        });
        let table = EmbeddingTable::from_features(&emb, key)?;
        println!("scoring {method} ({} samples × {} dims)", table.len(), emb.schema.len());
        reports.push(compute_report(&table, &method, &metric_cfg)?);
    }

    if !methods.is_empty() {
        let input = input.context("--method requires --input")?;
        let dataset = load_csv(input)?;
        for method in methods {
            let matrix = run_baseline(&dataset, method, key, metric_cfg.seed)?;
            let table = EmbeddingTable::new(&dataset, matrix, key)?;
            println!("scoring {method} ({} samples)", table.len());
            reports.push(compute_report(&table, method, &metric_cfg)?);
        }
    }

    save_reports_csv(&reports, out)?;
    print!("{}", format_table(&reports));
    let mut manifest = RunManifest::new("evaluate")
        .with_seed(metric_cfg.seed)
        .with_output(out);
    for p in embeddings {
        manifest = manifest.with_input(p);
    }
    if let Some(p) = input {
        manifest = manifest.with_input(p);
    }
    manifest.write_alongside(out)
}

fn run_baseline(
    dataset: &Dataset,
    method: &str,
    key: BatchKey,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let x = dataset.matrix();
    let batches: Vec<String> = dataset
        .profiles
        .iter()
        .map(|p| match key {
            BatchKey::Source => p.source.clone(),
            BatchKey::Plate => p.plate.clone(),
        })
        .collect();
    match method {
        "identity" => Ok(x),
        "combat" => Ok(combat_fit_transform(&x, &batches)?.0),
        "harmony" => {
            let config = HarmonyConfig {
                n_components: 10.min(dataset.schema.len()).min(dataset.len()),
                seed,
                ..HarmonyConfig::default()
            };
            Ok(harmony_transform(&x, &batches, &config)?.embedding)
        }
        "sphering" => {
            let controls: Vec<bool> = dataset
                .profiles
                .iter()
                .map(|p| p.is_negative_control)
                .collect();
            Ok(sphering_transform(
                &x,
                &controls,
                morphotr_core::baselines::DEFAULT_LAMBDA,
            )?)
        }
        other => bail!("unknown method {other:?} (expected combat, harmony, sphering or identity)"),
    }
}

pub fn report(
    metrics: &[std::path::PathBuf],
    embeddings: &[std::path::PathBuf],
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut merged: Vec<MetricReport> = Vec::new();
    for path in metrics {
        for r in load_reports_csv(path)? {
            if merged.iter().any(|m| m.method == r.method) {
                bail!("method {:?} appears in more than one metrics file", r.method);
            }
            merged.push(r);
        }
    }
    if merged.is_empty() {
        bail!("no metric rows found");
    }
    merged.sort_by(|a, b| {
        b.overall()
            .partial_cmp(&a.overall())
            .unwrap()
            .then_with(|| a.method.cmp(&b.method))
    });
    let table_path = out_dir.join("comparison.csv");
    save_reports_csv(&merged, &table_path)?;
    let text = format_table(&merged);
    std::fs::write(out_dir.join("comparison.txt"), &text)?;
    print!("{text}");

    let mut manifest = RunManifest::new("report").with_output(&table_path);
    for path in embeddings {
        let emb = load_csv(path)?;
        let proj = pca(&emb.matrix(), 2)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
        let proj_path = out_dir.join(format!("projection_{stem}.csv"));
        let mut w = csv::WriterBuilder::new().from_path(&proj_path)?;
        w.write_record(["sample", "pc1", "pc2", "batch", "bio"])?;
        for (p, row) in emb.profiles.iter().zip(&proj) {
            w.write_record([
                format!("{}:{}", p.plate, p.well),
                format!("{:.16e}", row[0]),
                format!("{:.16e}", row[1]),
                p.source.clone(),
                p.moa.clone().unwrap_or_else(|| p.compound.clone()),
            ])?;
        }
        w.flush()?;
        println!("projection -> {}", proj_path.display());
        manifest = manifest.with_input(path).with_output(&proj_path);
    }
    for path in metrics {
        manifest = manifest.with_input(path);
    }
    manifest.write_alongside(&table_path)
}
