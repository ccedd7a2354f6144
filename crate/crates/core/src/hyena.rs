//! Bidirectional Hyena operator: implicitly parameterized long convolutions
//! interleaved with element-wise gating.
//!
//! Each recurrence convolves the running sequence with a filter generated as
//! a function of the signed positional offset τ, so kernel length is decoupled
//! from parameter count. Filters have full two-sided support (no causal
//! mask) and convolutions are aperiodic (zero-padded), which keeps the
//! operator non-causal and avoids wrap-around leakage across the sequence.

use rand::Rng;

use crate::tensor::graph::conv_channels;
use crate::tensor::{Array, Graph, Var};
use crate::{CoreError, Result};

/// Default recurrence depth of the operator.
pub const DEFAULT_RECURRENCES: usize = 3;
/// Default hidden width of the filter-generator network.
pub const DEFAULT_FILTER_HIDDEN: usize = 32;
/// Default number of sinusoidal frequencies in the positional features.
pub const DEFAULT_FREQUENCIES: usize = 8;

/// Parameters of one implicit filter generator: positional features of the
/// offset are pushed through a two-layer position-wise network, then windowed
/// by a learned exponential decay `exp(-softplus(decay)·|τ|)` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGenParams {
    /// (2·n_freqs+1, hidden)
    pub w1: Array,
    /// (hidden)
    pub b1: Array,
    /// (hidden, d_model)
    pub w2: Array,
    /// (d_model)
    pub b2: Array,
    /// (1, d_model) raw decay; the effective rate is softplus(decay) ≥ 0.
    pub decay: Array,
    pub n_freqs: usize,
}

impl FilterGenParams {
    pub fn init(d_model: usize, hidden: usize, n_freqs: usize, rng: &mut impl Rng) -> Self {
        let n_feat = 2 * n_freqs + 1;
        FilterGenParams {
            w1: Array::randn(vec![n_feat, hidden], 1.0, rng),
            b1: Array::zeros(vec![hidden]),
            w2: Array::randn(vec![hidden, d_model], 1.0 / (hidden as f64).sqrt(), rng),
            b2: Array::zeros(vec![d_model]),
            // softplus(-0.43) ≈ 0.5: moderate decay at init.
            decay: Array::full(vec![1, d_model], -0.43),
            n_freqs,
        }
    }

    pub fn d_model(&self) -> usize {
        self.w2.shape()[1]
    }
}

/// Parameters of one Hyena layer: N+1 position-wise input projections
/// (value path v plus N gates), N filter generators, and the output
/// projection.
#[derive(Clone, Debug, PartialEq)]
pub struct HyenaLayerParams {
    /// N+1 maps of (d_model, d_model); index 0 produces v, 1..=N the gates.
    pub in_proj_w: Vec<Array>,
    /// N+1 bias rows of (d_model).
    pub in_proj_b: Vec<Array>,
    /// (d_model, d_model)
    pub out_w: Array,
    /// (d_model)
    pub out_b: Array,
    pub filters: Vec<FilterGenParams>,
}

impl HyenaLayerParams {
    pub fn init(
        d_model: usize,
        n_recurrences: usize,
        hidden: usize,
        n_freqs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let proj_std = 0.02;
        HyenaLayerParams {
            in_proj_w: (0..=n_recurrences)
                .map(|_| Array::randn(vec![d_model, d_model], proj_std, rng))
                .collect(),
            in_proj_b: (0..=n_recurrences).map(|_| Array::zeros(vec![d_model])).collect(),
            out_w: Array::randn(vec![d_model, d_model], proj_std, rng),
            out_b: Array::zeros(vec![d_model]),
            filters: (0..n_recurrences)
                .map(|_| FilterGenParams::init(d_model, hidden, n_freqs, rng))
                .collect(),
        }
    }

    pub fn recurrence_depth(&self) -> usize {
        self.filters.len()
    }

    pub fn d_model(&self) -> usize {
        self.out_w.shape()[0]
    }

    pub(crate) fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Array)>) {
        for (i, (w, b)) in self.in_proj_w.iter().zip(&self.in_proj_b).enumerate() {
            out.push((format!("{prefix}.proj{i}.w"), w));
            out.push((format!("{prefix}.proj{i}.b"), b));
        }
        out.push((format!("{prefix}.out.w"), &self.out_w));
        out.push((format!("{prefix}.out.b"), &self.out_b));
        for (i, f) in self.filters.iter().enumerate() {
            out.push((format!("{prefix}.filter{i}.w1"), &f.w1));
            out.push((format!("{prefix}.filter{i}.b1"), &f.b1));
            out.push((format!("{prefix}.filter{i}.w2"), &f.w2));
            out.push((format!("{prefix}.filter{i}.b2"), &f.b2));
            out.push((format!("{prefix}.filter{i}.decay"), &f.decay));
        }
    }

    pub(crate) fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Array)>) {
        for (i, (w, b)) in self.in_proj_w.iter_mut().zip(&mut self.in_proj_b).enumerate() {
            out.push((format!("{prefix}.proj{i}.w"), w));
            out.push((format!("{prefix}.proj{i}.b"), b));
        }
        out.push((format!("{prefix}.out.w"), &mut self.out_w));
        out.push((format!("{prefix}.out.b"), &mut self.out_b));
        for (i, f) in self.filters.iter_mut().enumerate() {
            out.push((format!("{prefix}.filter{i}.w1"), &mut f.w1));
            out.push((format!("{prefix}.filter{i}.b1"), &mut f.b1));
            out.push((format!("{prefix}.filter{i}.w2"), &mut f.w2));
            out.push((format!("{prefix}.filter{i}.b2"), &mut f.b2));
            out.push((format!("{prefix}.filter{i}.decay"), &mut f.decay));
        }
    }
}

/// Graph-bound view of [`FilterGenParams`].
pub struct FilterVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub decay: Var,
    pub n_freqs: usize,
}

/// Graph-bound view of [`HyenaLayerParams`].
pub struct HyenaVars {
    pub in_proj_w: Vec<Var>,
    pub in_proj_b: Vec<Var>,
    pub out_w: Var,
    pub out_b: Var,
    pub filters: Vec<FilterVars>,
}

impl HyenaVars {
    /// Consumes Vars in the exact order produced by `collect`.
    pub(crate) fn from_iter(
        params: &HyenaLayerParams,
        vars: &mut impl Iterator<Item = Var>,
    ) -> Self {
        let n = params.recurrence_depth();
        let mut in_proj_w = Vec::with_capacity(n + 1);
        let mut in_proj_b = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            in_proj_w.push(vars.next().expect("missing proj w"));
            in_proj_b.push(vars.next().expect("missing proj b"));
        }
        let out_w = vars.next().expect("missing out w");
        let out_b = vars.next().expect("missing out b");
        let filters = params
            .filters
            .iter()
            .map(|f| FilterVars {
                w1: vars.next().expect("missing filter w1"),
                b1: vars.next().expect("missing filter b1"),
                w2: vars.next().expect("missing filter w2"),
                b2: vars.next().expect("missing filter b2"),
                decay: vars.next().expect("missing filter decay"),
                n_freqs: f.n_freqs,
            })
            .collect();
        HyenaVars {
            in_proj_w,
            in_proj_b,
            out_w,
            out_b,
            filters,
        }
    }
}

/// Sinusoidal positional features of the signed offset τ ∈ [-(S-1), S-1]:
/// `[sin((f+1)·π·|τ|/(S-1)), cos(...)]` for each frequency plus sign(τ).
/// Shape (2S-1, 2·n_freqs+1).
pub fn offset_features(seq_len: usize, n_freqs: usize) -> Array {
    let taps = 2 * seq_len - 1;
    let denom = (seq_len.max(2) - 1) as f64;
    let mut data = Vec::with_capacity(taps * (2 * n_freqs + 1));
    for k in 0..taps {
        let tau = k as f64 - (seq_len as f64 - 1.0);
        let x = tau.abs() / denom;
        for f in 0..n_freqs {
            let ang = (f + 1) as f64 * std::f64::consts::PI * x;
            data.push(ang.sin());
            data.push(ang.cos());
        }
        data.push(tau.signum());
    }
    Array::new(vec![taps, 2 * n_freqs + 1], data).unwrap()
}

/// |τ| column used by the decay envelope, shape (2S-1, 1).
fn abs_offsets(seq_len: usize) -> Array {
    let taps = 2 * seq_len - 1;
    let data: Vec<f64> = (0..taps)
        .map(|k| (k as f64 - (seq_len as f64 - 1.0)).abs())
        .collect();
    Array::new(vec![taps, 1], data).unwrap()
}

/// Builds the per-channel filter for one recurrence as graph nodes.
/// Output shape (2·seq_len-1, d_model); row k holds the tap at offset
/// τ = k - (seq_len-1).
pub fn implicit_filter_graph(g: &Graph, vars: &FilterVars, seq_len: usize) -> Var {
    let feats = g.constant(offset_features(seq_len, vars.n_freqs));
    let abs = g.constant(abs_offsets(seq_len));
    filter_from_features(vars, &feats, &abs)
}

/// Filter construction from shared positional-feature constants, so one
/// layer's recurrences reuse a single feature build.
fn filter_from_features(vars: &FilterVars, feats: &Var, abs: &Var) -> Var {
    let hidden = feats.matmul(&vars.w1).add_row(&vars.b1).tanh();
    let raw = hidden.matmul(&vars.w2).add_row(&vars.b2);
    let rate = vars.decay.softplus();
    let envelope = abs.matmul(&rate).mul_scalar(-1.0).exp();
    raw.mul(&envelope)
}

/// Evaluates one recurrence's implicit filter for a given sequence length.
pub fn implicit_filter(params: &FilterGenParams, seq_len: usize) -> Result<Array> {
    if seq_len == 0 {
        return Err(CoreError::invalid("implicit_filter requires seq_len >= 1"));
    }
    let g = Graph::new();
    let vars = bind_filter(&g, params);
    let out = implicit_filter_graph(&g, &vars, seq_len).value();
    out.check_finite("implicit filter")?;
    Ok(out)
}

fn bind_filter(g: &Graph, p: &FilterGenParams) -> FilterVars {
    FilterVars {
        w1: g.constant(p.w1.clone()),
        b1: g.constant(p.b1.clone()),
        w2: g.constant(p.w2.clone()),
        b2: g.constant(p.b2.clone()),
        decay: g.constant(p.decay.clone()),
        n_freqs: p.n_freqs,
    }
}

/// Applies the full layer to `batch` stacked sequences of length `seq`:
/// projections, gated convolution recursion, output projection.
pub fn hyena_mix_graph(g: &Graph, vars: &HyenaVars, x: &Var, batch: usize, seq: usize) -> Var {
    let n_freqs = vars.filters.first().map_or(DEFAULT_FREQUENCIES, |f| f.n_freqs);
    let feats = g.constant(offset_features(seq, n_freqs));
    let abs = g.constant(abs_offsets(seq));
    let mut z = x.matmul(&vars.in_proj_w[0]).add_row(&vars.in_proj_b[0]);
    for (i, filter) in vars.filters.iter().enumerate() {
        let gate = x
            .matmul(&vars.in_proj_w[i + 1])
            .add_row(&vars.in_proj_b[i + 1]);
        let h = filter_from_features(filter, &feats, &abs);
        z = gate.mul(&conv_channels(&z, &h, batch, seq));
    }
    z.matmul(&vars.out_w).add_row(&vars.out_b)
}

/// Single-sequence forward pass of the operator.
pub fn hyena_forward(params: &HyenaLayerParams, input: &Array) -> Result<Array> {
    if input.shape().len() != 2 {
        return Err(CoreError::invalid("hyena_forward expects a (seq, d_model) input"));
    }
    let (seq, d) = (input.shape()[0], input.shape()[1]);
    if seq == 0 {
        return Err(CoreError::invalid("hyena_forward requires seq >= 1"));
    }
    if d != params.d_model() {
        return Err(CoreError::invalid(format!(
            "hyena_forward channel mismatch: input {}, params {}",
            d,
            params.d_model()
        )));
    }
    let g = Graph::new();
    let mut flat = Vec::new();
    params.collect("hyena", &mut flat);
    let vars: Vec<Var> = flat.iter().map(|(_, a)| g.constant((*a).clone())).collect();
    let hv = HyenaVars::from_iter(params, &mut vars.into_iter());
    let x = g.constant(input.clone());
    let out = hyena_mix_graph(&g, &hv, &x, 1, seq).value();
    out.check_finite("hyena_forward output")?;
    Ok(out)
}

/// The gated-convolution recursion with explicit gates and filters:
/// z⁰ = v, zⁱ = xⁱ ⊙ (hⁱ * zⁱ⁻¹). Filters are (2S-1, d) two-sided kernels.
pub fn hyena_recursion(v: &Array, gates: &[Array], filters: &[Array]) -> Result<Array> {
    if gates.len() != filters.len() {
        return Err(CoreError::invalid("one filter per gate required"));
    }
    let (seq, d) = (v.shape()[0], v.shape()[1]);
    let g = Graph::new();
    let mut z = g.constant(v.clone());
    for (gate, h) in gates.iter().zip(filters) {
        if gate.shape() != v.shape() {
            return Err(CoreError::invalid("gate shape mismatch"));
        }
        if h.shape() != [2 * seq - 1, d] {
            return Err(CoreError::invalid("filter must have 2·seq-1 taps per channel"));
        }
        let gv = g.constant(gate.clone());
        let hv = g.constant(h.clone());
        z = gv.mul(&conv_channels(&z, &hv, 1, seq));
    }
    Ok(z.value())
}
