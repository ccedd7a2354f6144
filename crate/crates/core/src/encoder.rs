//! The encoder: embedding stack → stacked bidirectional Hyena blocks →
//! CLS readout and per-position reconstruction head.
//!
//! Blocks use a pre-norm residual layout: `x += hyena(ln(x))` followed by
//! `x += mlp(ln(x))` with a SiLU position-wise MLP. The profile embedding is
//! the output state at the CLS position; the reconstruction head is a single
//! linear map applied position-wise.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSchema;
use crate::embedding::{
    assemble_batch_graph, embed_features_graph, EmbeddingVars, FeatureContextTable, LinearAdaptor,
    SourceCodebook, SpecialTokens, PREFIX_TOKENS,
};
use crate::hyena::{hyena_mix_graph, HyenaLayerParams, HyenaVars};
use crate::tensor::{Array, Graph, Var};
use crate::{CoreError, Result};

/// Layer-norm epsilon used by every block.
pub const LN_EPS: f64 = 1e-5;

const CHECKPOINT_FORMAT: &str = "morphotr-checkpoint-v1";

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_recurrences: usize,
    pub filter_hidden: usize,
    pub n_freqs: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 256,
            n_blocks: 4,
            n_recurrences: 3,
            filter_hidden: 32,
            n_freqs: 8,
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("n_recurrences", self.n_recurrences),
            ("filter_hidden", self.filter_hidden),
            ("n_freqs", self.n_freqs),
            ("mlp_ratio", self.mlp_ratio),
        ] {
            if v == 0 {
                return Err(CoreError::config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One encoder block: Hyena mixing plus a position-wise MLP, each behind a
/// pre-norm residual connection.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub hyena: HyenaLayerParams,
    pub ln1_gamma: Array,
    pub ln1_beta: Array,
    pub ln2_gamma: Array,
    pub ln2_beta: Array,
    pub mlp_w1: Array,
    pub mlp_b1: Array,
    pub mlp_w2: Array,
    pub mlp_b2: Array,
}

impl BlockParams {
    fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        let hidden = config.mlp_ratio * d;
        BlockParams {
            hyena: HyenaLayerParams::init(
                d,
                config.n_recurrences,
                config.filter_hidden,
                config.n_freqs,
                rng,
            ),
            ln1_gamma: Array::full(vec![d], 1.0),
            ln1_beta: Array::zeros(vec![d]),
            ln2_gamma: Array::full(vec![d], 1.0),
            ln2_beta: Array::zeros(vec![d]),
            mlp_w1: Array::randn(vec![d, hidden], 0.02, rng),
            mlp_b1: Array::zeros(vec![hidden]),
            mlp_w2: Array::randn(vec![hidden, d], 0.02, rng),
            mlp_b2: Array::zeros(vec![d]),
        }
    }

    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        self.hyena.collect(&format!("{prefix}.hyena"), out);
        out.push((format!("{prefix}.ln1.gamma"), &self.ln1_gamma));
        out.push((format!("{prefix}.ln1.beta"), &self.ln1_beta));
        out.push((format!("{prefix}.ln2.gamma"), &self.ln2_gamma));
        out.push((format!("{prefix}.ln2.beta"), &self.ln2_beta));
        out.push((format!("{prefix}.mlp.w1"), &self.mlp_w1));
        out.push((format!("{prefix}.mlp.b1"), &self.mlp_b1));
        out.push((format!("{prefix}.mlp.w2"), &self.mlp_w2));
        out.push((format!("{prefix}.mlp.b2"), &self.mlp_b2));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        self.hyena.collect_mut(&format!("{prefix}.hyena"), out);
        out.push((format!("{prefix}.ln1.gamma"), &mut self.ln1_gamma));
        out.push((format!("{prefix}.ln1.beta"), &mut self.ln1_beta));
        out.push((format!("{prefix}.ln2.gamma"), &mut self.ln2_gamma));
        out.push((format!("{prefix}.ln2.beta"), &mut self.ln2_beta));
        out.push((format!("{prefix}.mlp.w1"), &mut self.mlp_w1));
        out.push((format!("{prefix}.mlp.b1"), &mut self.mlp_b1));
        out.push((format!("{prefix}.mlp.w2"), &mut self.mlp_w2));
        out.push((format!("{prefix}.mlp.b2"), &mut self.mlp_b2));
    }
}

/// All learnable tensors plus the feature schema and source registry they
/// were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub schema: FeatureSchema,
    pub sources: Vec<String>,
    pub adaptor: LinearAdaptor,
    pub context: FeatureContextTable,
    pub codebook: SourceCodebook,
    pub specials: SpecialTokens,
    pub blocks: Vec<BlockParams>,
    pub recon_w: Array,
    pub recon_b: Array,
}

impl ModelParams {
    pub fn init(
        schema: FeatureSchema,
        sources: Vec<String>,
        config: EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if sources.is_empty() {
            return Err(CoreError::config("at least one source required"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = schema.len();
        let d = config.d_model;
        Ok(ModelParams {
            adaptor: LinearAdaptor::init(l, d, &mut rng),
            context: FeatureContextTable::init(l, d, &mut rng),
            codebook: SourceCodebook::init(sources.len(), d, &mut rng),
            specials: SpecialTokens::init(d, &mut rng),
            blocks: (0..config.n_blocks)
                .map(|_| BlockParams::init(&config, &mut rng))
                .collect(),
            recon_w: Array::randn(vec![d, 1], 0.02, &mut rng),
            recon_b: Array::zeros(vec![1]),
            config,
            schema,
            sources,
        })
    }

    /// Sequence length seen by the blocks: features plus CLS and source.
    pub fn seq_len(&self) -> usize {
        self.schema.len() + PREFIX_TOKENS
    }

    pub fn source_index(&self, name: &str) -> Option<usize> {
        self.sources.iter().position(|s| s == name)
    }

    pub fn n_params(&self) -> usize {
        self.collect().iter().map(|(_, a)| a.numel()).sum()
    }

    /// Named views of every tensor, in a fixed traversal order.
    pub fn collect(&self) -> Vec<(String, &Array)> {
        let mut out = Vec::new();
        out.push(("adaptor.w".to_string(), &self.adaptor.weights));
        out.push(("adaptor.b".to_string(), &self.adaptor.biases));
        out.push(("context".to_string(), &self.context.table));
        out.push(("codebook".to_string(), &self.codebook.table));
        out.push(("cls".to_string(), &self.specials.cls));
        out.push(("mask".to_string(), &self.specials.mask));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("block{i}"), &mut out);
        }
        out.push(("recon.w".to_string(), &self.recon_w));
        out.push(("recon.b".to_string(), &self.recon_b));
        out
    }

    /// Mutable counterpart of [`collect`](Self::collect), same order.
    pub fn collect_mut(&mut self) -> Vec<(String, &mut Array)> {
        let mut out = Vec::new();
        out.push(("adaptor.w".to_string(), &mut self.adaptor.weights));
        out.push(("adaptor.b".to_string(), &mut self.adaptor.biases));
        out.push(("context".to_string(), &mut self.context.table));
        out.push(("codebook".to_string(), &mut self.codebook.table));
        out.push(("cls".to_string(), &mut self.specials.cls));
        out.push(("mask".to_string(), &mut self.specials.mask));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&format!("block{i}"), &mut out);
        }
        out.push(("recon.w".to_string(), &mut self.recon_w));
        out.push(("recon.b".to_string(), &mut self.recon_b));
        out
    }

    /// Writes a self-describing JSON checkpoint: architecture, feature
    /// schema, source registry, and every named tensor. Values survive the
    /// round trip exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = self
            .collect()
            .into_iter()
            .map(|(name, a)| TensorEntry {
                name,
                shape: a.shape().to_vec(),
                data: a.data().to_vec(),
            })
            .collect();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config,
            feature_names: self.schema.names().to_vec(),
            feature_groups: self.schema.groups().to_vec(),
            sources: self.sources.clone(),
            tensors,
        };
        let file = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer(file, &ckpt)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = BufReader::new(File::open(path.as_ref())?);
        let ckpt: Checkpoint = serde_json::from_reader(file)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(CoreError::invalid(format!(
                "unsupported checkpoint format {:?}",
                ckpt.format
            )));
        }
        let schema = FeatureSchema::new(ckpt.feature_names, ckpt.feature_groups)?;
        let mut params = ModelParams::init(schema, ckpt.sources, ckpt.config, 0)?;
        let mut slots = params.collect_mut();
        if slots.len() != ckpt.tensors.len() {
            return Err(CoreError::invalid(format!(
                "checkpoint holds {} tensors, model expects {}",
                ckpt.tensors.len(),
                slots.len()
            )));
        }
        for (slot, entry) in slots.iter_mut().zip(ckpt.tensors) {
            if slot.0 != entry.name {
                return Err(CoreError::invalid(format!(
                    "checkpoint tensor {:?} does not match expected {:?}",
                    entry.name, slot.0
                )));
            }
            let arr = Array::new(entry.shape, entry.data)?;
            if arr.shape() != slot.1.shape() {
                return Err(CoreError::invalid(format!(
                    "checkpoint tensor {:?} has shape {:?}, expected {:?}",
                    entry.name,
                    arr.shape(),
                    slot.1.shape()
                )));
            }
            *slot.1 = arr;
        }
        Ok(params)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: EncoderConfig,
    feature_names: Vec<String>,
    feature_groups: Vec<usize>,
    sources: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Graph-bound view of one block.
pub struct BlockVars {
    pub hyena: HyenaVars,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// Graph-bound view of the whole model.
pub struct ModelVars {
    pub embedding: EmbeddingVars,
    pub blocks: Vec<BlockVars>,
    pub recon_w: Var,
    pub recon_b: Var,
}

impl ModelVars {
    /// Registers every tensor as a trainable graph leaf. The returned flat
    /// list parallels `ModelParams::collect()` so gradients can be read back
    /// by position.
    pub fn bind(g: &Graph, params: &ModelParams) -> (Self, Vec<Var>) {
        let flat: Vec<Var> = params
            .collect()
            .into_iter()
            .map(|(_, a)| g.param(a.clone()))
            .collect();
        let vars = Self::from_vars(params, flat.clone());
        (vars, flat)
    }

    /// Rebuilds the structured view from leaves created in `collect` order.
    pub fn from_vars(params: &ModelParams, flat: Vec<Var>) -> Self {
        let mut it = flat.into_iter();
        let embedding = EmbeddingVars {
            adaptor_w: it.next().expect("adaptor.w"),
            adaptor_b: it.next().expect("adaptor.b"),
            context: it.next().expect("context"),
            codebook: it.next().expect("codebook"),
            cls: it.next().expect("cls"),
            mask: it.next().expect("mask"),
        };
        let blocks = params
            .blocks
            .iter()
            .map(|b| BlockVars {
                hyena: HyenaVars::from_iter(&b.hyena, &mut it),
                ln1_gamma: it.next().expect("ln1.gamma"),
                ln1_beta: it.next().expect("ln1.beta"),
                ln2_gamma: it.next().expect("ln2.gamma"),
                ln2_beta: it.next().expect("ln2.beta"),
                mlp_w1: it.next().expect("mlp.w1"),
                mlp_b1: it.next().expect("mlp.b1"),
                mlp_w2: it.next().expect("mlp.w2"),
                mlp_b2: it.next().expect("mlp.b2"),
            })
            .collect();
        let recon_w = it.next().expect("recon.w");
        let recon_b = it.next().expect("recon.b");
        assert!(it.next().is_none(), "leftover vars after rebuild");
        ModelVars {
            embedding,
            blocks,
            recon_w,
            recon_b,
        }
    }
}

/// One batch of schema-conformant profiles.
pub struct BatchInput {
    /// B × L raw feature values.
    pub values: Vec<Vec<f64>>,
    /// Source index per profile.
    pub sources: Vec<usize>,
    /// Mask flags per profile (true = replaced by the mask token).
    pub masks: Option<Vec<Vec<bool>>>,
}

/// Graph outputs of a batched forward pass.
pub struct BatchOutput {
    /// (B, d) CLS states.
    pub cls: Var,
    /// (B·(L+2), d) final per-position states.
    pub states: Var,
    /// (B·(L+2), 1) reconstruction-head output at every position.
    pub recon: Var,
}

/// Runs the full encoder on a batch, keeping everything on the graph so
/// losses built on the outputs can backpropagate into the parameters.
pub fn forward_batch(g: &Graph, vars: &ModelVars, input: &BatchInput, n_features: usize) -> BatchOutput {
    let batch = input.values.len();
    let seq = n_features + PREFIX_TOKENS;

    let feats = embed_features_graph(g, &vars.embedding, &input.values);
    let mut x = assemble_batch_graph(
        g,
        &vars.embedding,
        &feats,
        &input.sources,
        input.masks.as_deref(),
    );

    for block in &vars.blocks {
        let normed = x.layer_norm(&block.ln1_gamma, &block.ln1_beta, LN_EPS);
        let mixed = hyena_mix_graph(g, &block.hyena, &normed, batch, seq);
        x = x.add(&mixed);
        let normed2 = x.layer_norm(&block.ln2_gamma, &block.ln2_beta, LN_EPS);
        let hidden = normed2.matmul(&block.mlp_w1).add_row(&block.mlp_b1).silu();
        let mlp = hidden.matmul(&block.mlp_w2).add_row(&block.mlp_b2);
        x = x.add(&mlp);
    }

    let cls_rows: Vec<usize> = (0..batch).map(|b| b * seq).collect();
    let cls = x.gather_rows(&cls_rows);
    let recon = x.matmul(&vars.recon_w).add_row(&vars.recon_b);
    BatchOutput {
        cls,
        states: x,
        recon,
    }
}

/// Deterministic single-profile forward pass.
pub struct EncodeOutput {
    /// d_model CLS state after the last block.
    pub cls_embedding: Array,
    /// (L+2) × d_model final states.
    pub position_states: Array,
}

pub fn encode(
    params: &ModelParams,
    values: &[f64],
    source: usize,
    mask: Option<&[bool]>,
) -> Result<EncodeOutput> {
    if values.len() != params.schema.len() {
        return Err(CoreError::invalid(format!(
            "profile has {} values, schema expects {}",
            values.len(),
            params.schema.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::non_finite("encode input values"));
    }
    if source >= params.sources.len() {
        return Err(CoreError::invalid(format!(
            "source index {} out of range ({} known sources)",
            source,
            params.sources.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != values.len() {
            return Err(CoreError::invalid("mask length must equal feature count"));
        }
    }

    let g = Graph::new();
    let (vars, _) = ModelVars::bind(&g, params);
    let input = BatchInput {
        values: vec![values.to_vec()],
        sources: vec![source],
        masks: mask.map(|m| vec![m.to_vec()]),
    };
    let out = forward_batch(&g, &vars, &input, params.schema.len());
    let cls = out.cls.value();
    let states = out.states.value();
    cls.check_finite("encode CLS state")?;
    states.check_finite("encode position states")?;
    Ok(EncodeOutput {
        cls_embedding: Array::new(vec![params.config.d_model], cls.data().to_vec())?,
        position_states: states,
    })
}

/// Encodes every profile of a schema-aligned dataset in batches, returning
/// one CLS embedding per profile. `source_override` replaces each profile's
/// own source with a fixed codebook index (the out-of-distribution proxy
/// path); otherwise sources must all be registered.
pub fn encode_dataset(
    params: &ModelParams,
    dataset: &crate::dataio::Dataset,
    batch_size: usize,
    source_override: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if dataset.schema.names() != params.schema.names() {
        return Err(CoreError::invalid(
            "dataset schema does not match the model; align features first",
        ));
    }
    if let Some(s) = source_override {
        if s >= params.sources.len() {
            return Err(CoreError::invalid(format!(
                "source override {s} out of range ({} known sources)",
                params.sources.len()
            )));
        }
    }
    let sources: Vec<usize> = dataset
        .profiles
        .iter()
        .map(|p| match source_override {
            Some(s) => Ok(s),
            None => params.source_index(&p.source).ok_or_else(|| {
                CoreError::invalid(format!(
                    "profile source {:?} unknown to the model (use a source override)",
                    p.source
                ))
            }),
        })
        .collect::<Result<_>>()?;

    let n_features = params.schema.len();
    let mut out = Vec::with_capacity(dataset.len());
    let chunk = batch_size.max(1);
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + chunk).min(dataset.len());
        let g = Graph::new();
        let (vars, _) = ModelVars::bind(&g, params);
        let input = BatchInput {
            values: dataset.profiles[start..end]
                .iter()
                .map(|p| p.values.clone())
                .collect(),
            sources: sources[start..end].to_vec(),
            masks: None,
        };
        let cls = forward_batch(&g, &vars, &input, n_features).cls.value();
        cls.check_finite("encoded CLS batch")?;
        for i in 0..(end - start) {
            out.push(cls.row(i).to_vec());
        }
        start = end;
    }
    Ok(out)
}

/// Applies the reconstruction head at the masked feature positions (feature
/// index i lives at sequence position i + 2). Returns one prediction per
/// masked index, in the given order.
pub fn reconstruct(
    position_states: &Array,
    masked_features: &[usize],
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if masked_features.is_empty() {
        return Err(CoreError::invalid("reconstruct requires a non-empty mask plan"));
    }
    let l = params.schema.len();
    if position_states.rows() != l + PREFIX_TOKENS {
        return Err(CoreError::invalid(format!(
            "position states have {} rows, expected {}",
            position_states.rows(),
            l + PREFIX_TOKENS
        )));
    }
    let mut out = Vec::with_capacity(masked_features.len());
    for &feat in masked_features {
        if feat >= l {
            return Err(CoreError::invalid(format!(
                "masked feature index {feat} out of range for {l} features"
            )));
        }
        let row = position_states.row(feat + PREFIX_TOKENS);
        let pred: f64 = row
            .iter()
            .zip(params.recon_w.data())
            .map(|(s, w)| s * w)
            .sum::<f64>()
            + params.recon_b.data()[0];
        out.push(pred);
    }
    Ok(out)
}
