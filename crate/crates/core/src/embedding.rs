//! Input construction: linear adaptor over continuous feature values,
//! additive feature-context embedding, and the prepended source and CLS
//! tokens.
//!
//! Feature values are never discretized. Position i of the feature sequence
//! carries `W_i·C_i + b_i + M_i`; masked positions are replaced by the shared
//! mask token (the bare token, feature context does not survive masking) and
//! the full encoder input is `[CLS; S_source; features...]`.

use rand::Rng;

use crate::tensor::graph::concat_rows;
use crate::tensor::{Array, Graph, Var};
use crate::{CoreError, Result};

/// Number of tokens prepended to the feature sequence (CLS and source).
pub const PREFIX_TOKENS: usize = 2;

/// Per-feature linear maps from a scalar value to d_model space.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAdaptor {
    /// (L, d_model): row i is the weight vector W_i.
    pub weights: Array,
    /// (L, d_model): row i is the bias vector b_i.
    pub biases: Array,
}

impl LinearAdaptor {
    pub fn init(n_features: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        LinearAdaptor {
            weights: Array::randn(vec![n_features, d_model], 0.02, rng),
            biases: Array::zeros(vec![n_features, d_model]),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Learned per-feature context vectors, replacing positional encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureContextTable {
    /// (L, d_model): row i is M_i.
    pub table: Array,
}

impl FeatureContextTable {
    pub fn init(n_features: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        FeatureContextTable {
            table: Array::randn(vec![n_features, d_model], 0.02, rng),
        }
    }
}

/// Learned per-source embeddings; one row per known source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceCodebook {
    /// (K, d_model)
    pub table: Array,
}

impl SourceCodebook {
    pub fn init(n_sources: usize, d_model: usize, rng: &mut impl Rng) -> Self {
        SourceCodebook {
            table: Array::randn(vec![n_sources, d_model], 0.02, rng),
        }
    }

    pub fn n_sources(&self) -> usize {
        self.table.shape()[0]
    }
}

/// The CLS readout token and the mask replacement token.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecialTokens {
    /// (1, d_model)
    pub cls: Array,
    /// (1, d_model)
    pub mask: Array,
}

impl SpecialTokens {
    pub fn init(d_model: usize, rng: &mut impl Rng) -> Self {
        SpecialTokens {
            cls: Array::randn(vec![1, d_model], 0.02, rng),
            mask: Array::randn(vec![1, d_model], 0.02, rng),
        }
    }
}

/// Graph-bound view of all embedding parameters.
pub struct EmbeddingVars {
    pub adaptor_w: Var,
    pub adaptor_b: Var,
    pub context: Var,
    pub codebook: Var,
    pub cls: Var,
    pub mask: Var,
}

/// Embeds a batch of raw value vectors as one stacked (B·L, d) sequence:
/// row b·L+i carries `W_i·C_{b,i} + b_i + M_i`.
pub fn embed_features_graph(g: &Graph, vars: &EmbeddingVars, values: &[Vec<f64>]) -> Var {
    let batch = values.len();
    let l = vars.adaptor_w.shape()[0];
    let mut col = Vec::with_capacity(batch * l);
    for row in values {
        debug_assert_eq!(row.len(), l, "value vector length must match schema");
        col.extend_from_slice(row);
    }
    let value_col = g.constant(Array::new(vec![batch * l], col).expect("column shape"));
    let w = vars.adaptor_w.tile_rows(batch);
    let b = vars.adaptor_b.tile_rows(batch);
    let m = vars.context.tile_rows(batch);
    w.scale_rows(&value_col).add(&b).add(&m)
}

/// Builds the full encoder input for a batch: per profile, masked feature
/// rows are replaced by the mask token, then `[CLS; S_source]` is prepended.
/// Output is (B·(L+2), d).
pub fn assemble_batch_graph(
    g: &Graph,
    vars: &EmbeddingVars,
    feature_seq: &Var,
    source_ids: &[usize],
    mask_flags: Option<&[Vec<bool>]>,
) -> Var {
    let batch = source_ids.len();
    let l = feature_seq.shape()[0] / batch;
    let masked = match mask_flags {
        Some(flags) => {
            debug_assert_eq!(flags.len(), batch);
            let mut all = Vec::with_capacity(batch * l);
            for f in flags {
                debug_assert_eq!(f.len(), l);
                all.extend_from_slice(f);
            }
            feature_seq.replace_rows(&all, &vars.mask)
        }
        None => feature_seq.clone(),
    };
    let src_rows = vars.codebook.gather_rows(source_ids);
    let mut parts = Vec::with_capacity(3 * batch);
    for (b, _) in source_ids.iter().enumerate() {
        parts.push(vars.cls.clone());
        parts.push(src_rows.slice_rows(b, b + 1));
        parts.push(masked.slice_rows(b * l, (b + 1) * l));
    }
    let _ = g;
    concat_rows(&parts)
}

fn bind(g: &Graph, adaptor: &LinearAdaptor, context: &FeatureContextTable) -> EmbeddingVars {
    EmbeddingVars {
        adaptor_w: g.constant(adaptor.weights.clone()),
        adaptor_b: g.constant(adaptor.biases.clone()),
        context: g.constant(context.table.clone()),
        codebook: g.constant(Array::zeros(vec![1, adaptor.d_model()])),
        cls: g.constant(Array::zeros(vec![1, adaptor.d_model()])),
        mask: g.constant(Array::zeros(vec![1, adaptor.d_model()])),
    }
}

/// Embeds one profile's values as an (L, d_model) sequence.
pub fn embed_profile(
    values: &[f64],
    adaptor: &LinearAdaptor,
    context: &FeatureContextTable,
) -> Result<Array> {
    if values.len() != adaptor.len() {
        return Err(CoreError::invalid(format!(
            "profile has {} values, adaptor expects {}",
            values.len(),
            adaptor.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::non_finite("embed_profile input"));
    }
    let g = Graph::new();
    let vars = bind(&g, adaptor, context);
    Ok(embed_features_graph(&g, &vars, &[values.to_vec()]).value())
}

/// Prepends the CLS and source tokens to an embedded feature sequence,
/// applying the mask plan first. Output is (L+2, d_model).
pub fn assemble_input(
    feature_seq: &Array,
    source: usize,
    codebook: &SourceCodebook,
    specials: &SpecialTokens,
    mask_flags: Option<&[bool]>,
) -> Result<Array> {
    if source >= codebook.n_sources() {
        return Err(CoreError::invalid(format!(
            "unknown source index {} (codebook holds {})",
            source,
            codebook.n_sources()
        )));
    }
    if let Some(flags) = mask_flags {
        if flags.len() != feature_seq.rows() {
            return Err(CoreError::invalid("mask plan length must match feature count"));
        }
    }
    let g = Graph::new();
    let vars = EmbeddingVars {
        adaptor_w: g.constant(Array::zeros(vec![1, 1])),
        adaptor_b: g.constant(Array::zeros(vec![1, 1])),
        context: g.constant(Array::zeros(vec![1, 1])),
        codebook: g.constant(codebook.table.clone()),
        cls: g.constant(specials.cls.clone()),
        mask: g.constant(specials.mask.clone()),
    };
    let seq = g.constant(feature_seq.clone());
    let flags_vec = mask_flags.map(|f| vec![f.to_vec()]);
    Ok(assemble_batch_graph(&g, &vars, &seq, &[source], flags_vec.as_deref()).value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_values_isolate_bias_plus_context() {
        let mut r = rng();
        let adaptor = LinearAdaptor {
            weights: Array::randn(vec![4, 3], 1.0, &mut r),
            biases: Array::randn(vec![4, 3], 1.0, &mut r),
        };
        let context = FeatureContextTable::init(4, 3, &mut r);
        let emb = embed_profile(&[0.0; 4], &adaptor, &context).unwrap();
        let want = adaptor.biases.add(&context.table);
        assert!(emb.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn doubling_one_value_changes_only_that_position_linearly() {
        let mut r = rng();
        let adaptor = LinearAdaptor::init(5, 4, &mut r);
        let context = FeatureContextTable::init(5, 4, &mut r);
        let mut values = vec![0.7, -1.2, 0.4, 2.0, -0.3];
        let base = embed_profile(&values, &adaptor, &context).unwrap();
        values[2] *= 2.0;
        let bumped = embed_profile(&values, &adaptor, &context).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let delta = bumped.at(i, j) - base.at(i, j);
                let want = if i == 2 {
                    adaptor.weights.at(2, j) * 0.4
                } else {
                    0.0
                };
                assert!((delta - want).abs() < 1e-12, "i={i} j={j}");
            }
        }
    }

    #[test]
    fn hand_computed_three_by_two_embedding() {
        let adaptor = LinearAdaptor {
            weights: Array::new(vec![3, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0]).unwrap(),
            biases: Array::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap(),
        };
        let context = FeatureContextTable {
            table: Array::new(vec![3, 2], vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06]).unwrap(),
        };
        let emb = embed_profile(&[2.0, -1.0, 0.5], &adaptor, &context).unwrap();
        // Row i = W_i·C_i + b_i + M_i, computed by hand.
        let want = Array::new(
            vec![3, 2],
            vec![
                1.0 * 2.0 + 0.1 + 0.01,
                2.0 * 2.0 + 0.2 + 0.02,
                -1.0 * -1.0 + 0.3 + 0.03,
                0.5 * -1.0 + 0.4 + 0.04,
                3.0 * 0.5 + 0.5 + 0.05,
                0.0 * 0.5 + 0.6 + 0.06,
            ],
        )
        .unwrap();
        assert!(emb.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn assembled_sequence_has_cls_then_source_then_features() {
        let mut r = rng();
        let codebook = SourceCodebook::init(3, 4, &mut r);
        let specials = SpecialTokens::init(4, &mut r);
        let seq = Array::randn(vec![5, 4], 1.0, &mut r);
        let out = assemble_input(&seq, 1, &codebook, &specials, None).unwrap();
        assert_eq!(out.shape(), &[7, 4]);
        assert_eq!(out.row(0), specials.cls.row(0));
        assert_eq!(out.row(1), codebook.table.row(1));
        for i in 0..5 {
            assert_eq!(out.row(i + PREFIX_TOKENS), seq.row(i));
        }
    }

    #[test]
    fn source_id_changes_only_position_one() {
        let mut r = rng();
        let codebook = SourceCodebook::init(4, 3, &mut r);
        let specials = SpecialTokens::init(3, &mut r);
        let seq = Array::randn(vec![6, 3], 1.0, &mut r);
        let a = assemble_input(&seq, 0, &codebook, &specials, None).unwrap();
        let b = assemble_input(&seq, 3, &codebook, &specials, None).unwrap();
        for i in 0..8 {
            if i == 1 {
                assert_ne!(a.row(1), b.row(1));
            } else {
                assert_eq!(a.row(i), b.row(i));
            }
        }
    }

    #[test]
    fn masked_feature_carries_the_bare_mask_token() {
        let mut r = rng();
        let codebook = SourceCodebook::init(2, 3, &mut r);
        let specials = SpecialTokens::init(3, &mut r);
        let seq = Array::randn(vec![5, 3], 1.0, &mut r);
        let mut flags = vec![false; 5];
        flags[2] = true; // third feature → sequence position 4
        let out = assemble_input(&seq, 0, &codebook, &specials, Some(&flags)).unwrap();
        assert_eq!(out.row(4), specials.mask.row(0));
        assert_eq!(out.row(3), seq.row(1));
        assert_eq!(out.row(5), seq.row(3));
    }

    #[test]
    fn assembly_is_injective_in_source_for_distinct_codebook_rows() {
        let mut r = rng();
        let codebook = SourceCodebook::init(5, 4, &mut r);
        let specials = SpecialTokens::init(4, &mut r);
        let seq = Array::randn(vec![3, 4], 1.0, &mut r);
        let outputs: Vec<Array> = (0..5)
            .map(|s| assemble_input(&seq, s, &codebook, &specials, None).unwrap())
            .collect();
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert_ne!(outputs[i], outputs[j]);
            }
        }
    }

    #[test]
    fn unknown_source_is_rejected() {
        let mut r = rng();
        let codebook = SourceCodebook::init(2, 3, &mut r);
        let specials = SpecialTokens::init(3, &mut r);
        let seq = Array::zeros(vec![2, 3]);
        assert!(assemble_input(&seq, 2, &codebook, &specials, None).is_err());
    }

    #[test]
    fn least_squares_inversion_recovers_unmasked_values() {
        let mut r = rng();
        let adaptor = LinearAdaptor::init(6, 8, &mut r);
        let context = FeatureContextTable::init(6, 8, &mut r);
        let values = vec![1.5, -0.25, 0.0, 3.25, -2.0, 0.125];
        let emb = embed_profile(&values, &adaptor, &context).unwrap();
        for i in 0..6 {
            let w = adaptor.weights.row(i);
            let offset: Vec<f64> = adaptor
                .biases
                .row(i)
                .iter()
                .zip(context.table.row(i))
                .map(|(b, m)| b + m)
                .collect();
            let num: f64 = emb
                .row(i)
                .iter()
                .zip(&offset)
                .zip(w)
                .map(|((e, o), wi)| (e - o) * wi)
                .sum();
            let den: f64 = w.iter().map(|v| v * v).sum();
            assert!(den > 0.0, "W_{i} must be nonzero for inversion");
            let recovered = num / den;
            assert!((recovered - values[i]).abs() < 1e-8, "feature {i}");
        }
    }

    #[test]
    fn gradients_reach_every_embedding_parameter_family() {
        let mut r = rng();
        let adaptor = LinearAdaptor::init(4, 3, &mut r);
        let context = FeatureContextTable::init(4, 3, &mut r);
        let codebook = SourceCodebook::init(2, 3, &mut r);
        let specials = SpecialTokens::init(3, &mut r);

        let g = Graph::new();
        let vars = EmbeddingVars {
            adaptor_w: g.param(adaptor.weights.clone()),
            adaptor_b: g.param(adaptor.biases.clone()),
            context: g.param(context.table.clone()),
            codebook: g.param(codebook.table.clone()),
            cls: g.param(specials.cls.clone()),
            mask: g.param(specials.mask.clone()),
        };
        let values = vec![vec![0.5, -1.0, 2.0, 0.25], vec![1.0, 0.5, -0.5, -2.0]];
        let flags = vec![vec![false, true, false, false], vec![false, false, true, false]];
        let feats = embed_features_graph(&g, &vars, &values);
        let seq = assemble_batch_graph(&g, &vars, &feats, &[0, 1], Some(&flags));
        let loss = seq.mul(&seq).sum_all();
        g.backward(&loss).unwrap();

        for (name, var) in [
            ("adaptor_w", &vars.adaptor_w),
            ("adaptor_b", &vars.adaptor_b),
            ("context", &vars.context),
            ("codebook", &vars.codebook),
            ("cls", &vars.cls),
            ("mask", &vars.mask),
        ] {
            let norm = var.grad_or_zero().norm();
            assert!(norm > 0.0, "{name} received no gradient");
        }
    }
}
