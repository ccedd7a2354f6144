//! The integration benchmark: batch-correction metrics, biological-signal
//! metrics, and the aggregate scores.

mod classifier;
mod clustering;
mod graph;
mod retrieval;
mod silhouette;

pub use classifier::{batch_classifier_score, macro_f1, stratified_folds};
pub use clustering::{ari, cluster_agreement, leiden_communities, nmi};
pub use graph::{graph_connectivity, knn_adjacency, knn_indices};
pub use retrieval::{mean_average_precision, MapMode, MapResult};
pub use silhouette::{silhouette_samples, silhouette_scores};

use std::io::Write;
use std::path::Path;

use crate::dataio::Dataset;
use crate::{CoreError, Result};

/// Which metadata field acts as the batch label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKey {
    Source,
    Plate,
}

/// Carrier for every metric input: an embedding matrix plus the labels and
/// flags the metrics condition on.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Vec<Vec<f64>>,
    /// Batch label under the chosen key.
    pub batch: Vec<String>,
    pub source: Vec<String>,
    /// Biological label: mechanism class where known, compound otherwise.
    pub bio: Vec<String>,
    pub compound: Vec<String>,
    pub plate: Vec<String>,
    pub well: Vec<String>,
    pub control: Vec<bool>,
}

impl EmbeddingTable {
    /// Pairs a dataset's metadata with an externally computed embedding.
    pub fn new(dataset: &Dataset, matrix: Vec<Vec<f64>>, batch_key: BatchKey) -> Result<Self> {
        if matrix.len() != dataset.len() {
            return Err(CoreError::invalid(format!(
                "{} embedding rows for {} profiles",
                matrix.len(),
                dataset.len()
            )));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::non_finite(format!("embedding row {i}")));
            }
        }
        let batch = dataset
            .profiles
            .iter()
            .map(|p| match batch_key {
                BatchKey::Source => p.source.clone(),
                BatchKey::Plate => p.plate.clone(),
            })
            .collect();
        Ok(EmbeddingTable {
            matrix,
            batch,
            source: dataset.profiles.iter().map(|p| p.source.clone()).collect(),
            bio: dataset
                .profiles
                .iter()
                .map(|p| p.moa.clone().unwrap_or_else(|| p.compound.clone()))
                .collect(),
            compound: dataset.profiles.iter().map(|p| p.compound.clone()).collect(),
            plate: dataset.profiles.iter().map(|p| p.plate.clone()).collect(),
            well: dataset.profiles.iter().map(|p| p.well.clone()).collect(),
            control: dataset
                .profiles
                .iter()
                .map(|p| p.is_negative_control)
                .collect(),
        })
    }

    /// Treats the feature values themselves as the embedding (the
    /// uncorrected baseline).
    pub fn from_features(dataset: &Dataset, batch_key: BatchKey) -> Result<Self> {
        EmbeddingTable::new(dataset, dataset.matrix(), batch_key)
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    /// Rows with the control flag cleared, metadata preserved.
    pub fn without_controls(&self) -> EmbeddingTable {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !self.control[i]).collect();
        let pick = |v: &Vec<String>| keep.iter().map(|&i| v[i].clone()).collect();
        EmbeddingTable {
            matrix: keep.iter().map(|&i| self.matrix[i].clone()).collect(),
            batch: pick(&self.batch),
            source: pick(&self.source),
            bio: pick(&self.bio),
            compound: pick(&self.compound),
            plate: pick(&self.plate),
            well: pick(&self.well),
            control: keep.iter().map(|&i| self.control[i]).collect(),
        }
    }
}

/// Tunables of the metric suite.
#[derive(Clone, Copy, Debug)]
pub struct MetricConfig {
    /// Neighbors for the kNN graph used by connectivity and clustering.
    pub graph_k: usize,
    /// Neighbors of the batch classifier.
    pub classifier_k: usize,
    pub classifier_folds: usize,
    pub leiden_resolution: f64,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            graph_k: 15,
            classifier_k: 15,
            classifier_folds: 5,
            leiden_resolution: 1.0,
            seed: 0,
        }
    }
}

pub const BATCH_METRIC_NAMES: [&str; 4] = [
    "graph_connectivity",
    "silhouette_batch",
    "batch_classifier_control",
    "batch_classifier_no_control",
];
pub const BIO_METRIC_NAMES: [&str; 5] = [
    "leiden_nmi",
    "leiden_ari",
    "silhouette_label",
    "map_control",
    "map_no_rep",
];

/// Named scores plus the aggregate arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub batch_metrics: Vec<(String, f64)>,
    pub bio_metrics: Vec<(String, f64)>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl MetricReport {
    /// Arithmetic mean of the batch-correction metrics.
    pub fn batch_aggregate(&self) -> f64 {
        mean(&self.batch_metrics)
    }

    /// Arithmetic mean of the biological metrics.
    pub fn bio_aggregate(&self) -> f64 {
        mean(&self.bio_metrics)
    }

    /// Mean of the two aggregates, taken at two-decimal reporting precision
    /// (the convention the published aggregate columns follow).
    pub fn overall(&self) -> f64 {
        (round2(self.batch_aggregate()) + round2(self.bio_aggregate())) / 2.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.batch_metrics
            .iter()
            .chain(&self.bio_metrics)
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

fn mean(entries: &[(String, f64)]) -> f64 {
    entries.iter().map(|(_, v)| v).sum::<f64>() / entries.len() as f64
}

/// Builds a report from named member metrics, validating completeness and
/// range.
pub fn aggregate(
    method: &str,
    batch_metrics: Vec<(String, f64)>,
    bio_metrics: Vec<(String, f64)>,
) -> Result<MetricReport> {
    if batch_metrics.is_empty() || bio_metrics.is_empty() {
        return Err(CoreError::invalid("aggregate requires both metric families"));
    }
    for (name, v) in batch_metrics.iter().chain(&bio_metrics) {
        if !v.is_finite() {
            return Err(CoreError::non_finite(format!("metric {name}")));
        }
        if !(0.0..=1.0).contains(v) {
            return Err(CoreError::invalid(format!("metric {name} = {v} outside [0,1]")));
        }
    }
    Ok(MetricReport {
        method: method.to_string(),
        batch_metrics,
        bio_metrics,
    })
}

/// Runs the full suite on one embedding table.
pub fn compute_report(
    table: &EmbeddingTable,
    method: &str,
    config: &MetricConfig,
) -> Result<MetricReport> {
    let conn = graph_connectivity(&table.matrix, &table.bio, config.graph_k)?;
    let (silh_batch, silh_label) = silhouette_scores(&table.matrix, &table.batch, &table.bio)?;
    let bc_control = batch_classifier_score(
        &table.matrix,
        &table.batch,
        config.classifier_k,
        config.classifier_folds,
    )?;
    let treated = table.without_controls();
    let bc_no_control = batch_classifier_score(
        &treated.matrix,
        &treated.batch,
        config.classifier_k,
        config.classifier_folds,
    )?;
    let (nmi_score, ari_score) = cluster_agreement(
        &table.matrix,
        &table.bio,
        config.graph_k,
        config.leiden_resolution,
        config.seed,
    )?;
    let map_control = mean_average_precision(table, MapMode::Control)?;
    let map_no_rep = mean_average_precision(table, MapMode::NoRep)?;

    aggregate(
        method,
        vec![
            (BATCH_METRIC_NAMES[0].into(), conn),
            (BATCH_METRIC_NAMES[1].into(), silh_batch),
            (BATCH_METRIC_NAMES[2].into(), bc_control),
            (BATCH_METRIC_NAMES[3].into(), bc_no_control),
        ],
        vec![
            (BIO_METRIC_NAMES[0].into(), nmi_score),
            (BIO_METRIC_NAMES[1].into(), ari_score.max(0.0)),
            (BIO_METRIC_NAMES[2].into(), silh_label),
            (BIO_METRIC_NAMES[3].into(), map_control.map),
            (BIO_METRIC_NAMES[4].into(), map_no_rep.map),
        ],
    )
}

/// One CSV row per method: every member metric plus the three aggregates.
pub fn save_reports_csv(reports: &[MetricReport], path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    let mut header = vec!["method".to_string()];
    header.extend(BATCH_METRIC_NAMES.iter().map(|s| s.to_string()));
    header.extend(BIO_METRIC_NAMES.iter().map(|s| s.to_string()));
    header.extend(["batch_aggregate", "bio_aggregate", "overall"].map(String::from));
    writeln!(f, "{}", header.join(","))?;
    for r in reports {
        let mut row = vec![r.method.clone()];
        for name in BATCH_METRIC_NAMES.iter().chain(BIO_METRIC_NAMES.iter()) {
            let v = r.get(name).ok_or_else(|| {
                CoreError::invalid(format!("report {} missing metric {name}", r.method))
            })?;
            row.push(format!("{v:.16e}"));
        }
        row.push(format!("{:.16e}", r.batch_aggregate()));
        row.push(format!("{:.16e}", r.bio_aggregate()));
        row.push(format!("{:.16e}", r.overall()));
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads rows written by [`save_reports_csv`].
pub fn load_reports_csv(path: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut batch = Vec::new();
        let mut bio = Vec::new();
        for (name, value) in header.iter().zip(record.iter()).skip(1) {
            if ["batch_aggregate", "bio_aggregate", "overall"].contains(&name.as_str()) {
                continue;
            }
            let v: f64 = value
                .parse()
                .map_err(|_| CoreError::invalid(format!("bad metric value {value:?}")))?;
            if BATCH_METRIC_NAMES.contains(&name.as_str()) {
                batch.push((name.clone(), v));
            } else {
                bio.push((name.clone(), v));
            }
        }
        out.push(aggregate(&record[0], batch, bio)?);
    }
    Ok(out)
}

/// Fixed-width human-readable comparison table, two decimals, sorted as
/// given.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut cols = vec!["method".to_string()];
    cols.extend(BATCH_METRIC_NAMES.iter().map(|s| s.to_string()));
    cols.extend(BIO_METRIC_NAMES.iter().map(|s| s.to_string()));
    cols.extend(["batch_agg", "bio_agg", "overall"].map(String::from));
    let mut rows: Vec<Vec<String>> = vec![cols.clone()];
    for r in reports {
        let mut row = vec![r.method.clone()];
        for name in BATCH_METRIC_NAMES.iter().chain(BIO_METRIC_NAMES.iter()) {
            row.push(format!("{:.2}", r.get(name).unwrap_or(f64::NAN)));
        }
        row.push(format!("{:.2}", r.batch_aggregate()));
        row.push(format!("{:.2}", r.bio_aggregate()));
        row.push(format!("{:.2}", r.overall()));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..cols.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}
