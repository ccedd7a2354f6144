//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation on a tape; [`Var`] is a lightweight
//! handle into it. Arrays are immutable once created and the tape order is a
//! topological order by construction, so a single reverse sweep in insertion
//! order yields deterministic, bit-identical gradients run to run. Gradient
//! contributions to shared parameters are summed in that fixed order.

use std::cell::RefCell;
use std::rc::Rc;

use rayon::prelude::*;

use crate::tensor::fft;
use crate::tensor::Array;
use crate::{CoreError, Result};

type BackwardRule = Box<dyn Fn(&Array, &Array) -> Array>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar { a: usize, c: f64 },
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Tanh(usize),
    Silu(usize),
    Softplus(usize),
    SumAll(usize),
    RowSum(usize),
    Matmul(usize, usize),
    Transpose(usize),
    /// Broadcast-add a length-n row vector to every row of an (m,n) matrix.
    AddRow { mat: usize, row: usize },
    /// Scale row i of an (m,n) matrix by element i of a length-m column.
    ScaleRows { mat: usize, col: usize },
    ConcatRows(Vec<usize>),
    SliceRows { a: usize, start: usize, end: usize },
    GatherRows { a: usize, idx: Vec<usize> },
    TileRows { a: usize, reps: usize },
    /// Replace flagged rows with a shared token row.
    ReplaceRows { a: usize, token: usize, flags: Vec<bool> },
    LayerNormRows { x: usize, gamma: usize, beta: usize, eps: f64 },
    NormalizeRows(usize),
    /// Depthwise two-sided convolution of `batch` stacked length-`seq`
    /// sequences against per-channel kernels of 2·seq-1 taps.
    ConvChannels { z: usize, h: usize, batch: usize, seq: usize },
    /// Escape hatch for custom unary ops: rule maps (input value, upstream
    /// gradient) to the input gradient.
    CustomUnary { a: usize, rule: BackwardRule },
}

struct Node {
    value: Array,
    grad: Option<Array>,
    op: Op,
}

type Tape = Rc<RefCell<Vec<Node>>>;

/// Computation graph; cheap to clone (shared tape).
#[derive(Clone)]
pub struct Graph {
    tape: Tape,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            tape: Rc::new(RefCell::new(Vec::new())),
        }
    }

    fn push(&self, value: Array, op: Op) -> Var {
        let mut tape = self.tape.borrow_mut();
        tape.push(Node {
            value,
            grad: None,
            op,
        });
        Var {
            tape: Rc::clone(&self.tape),
            id: tape.len() - 1,
        }
    }

    /// Non-trainable leaf (targets, masks, positional features, ...).
    pub fn constant(&self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf; identical to a constant except by convention the
    /// caller reads its gradient back after `backward`.
    pub fn param(&self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar root. Populates gradients for every node
    /// that the root depends on; unreachable nodes keep a `None` gradient,
    /// which reads back as exact zero.
    pub fn backward(&self, root: &Var) -> Result<()> {
        assert!(
            Rc::ptr_eq(&self.tape, &root.tape),
            "root belongs to a different graph"
        );
        let mut tape = self.tape.borrow_mut();
        let root_value = &tape[root.id].value;
        if root_value.numel() != 1 {
            return Err(CoreError::invalid(format!(
                "backward requires a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        if !root_value.is_finite() {
            return Err(CoreError::non_finite("backward root is not finite"));
        }
        for node in tape.iter_mut() {
            node.grad = None;
        }
        let seed = Array::full(tape[root.id].value.shape().to_vec(), 1.0);
        tape[root.id].grad = Some(seed);

        for id in (0..=root.id).rev() {
            if tape[id].grad.is_none() {
                continue;
            }
            let contributions = {
                let node = &tape[id];
                let g = node.grad.as_ref().unwrap();
                node_backward(&tape, node, g)
            };
            for (pid, contrib) in contributions {
                match tape[pid].grad.as_mut() {
                    Some(acc) => acc.add_assign(&contrib),
                    None => tape[pid].grad = Some(contrib),
                }
            }
        }
        Ok(())
    }
}

/// Gradient contributions of one node to its parents.
fn node_backward(tape: &[Node], node: &Node, g: &Array) -> Vec<(usize, Array)> {
    let val = |id: usize| -> &Array { &tape[id].value };
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
        Op::Mul(a, b) => vec![(*a, g.zip(val(*b), |x, y| x * y)), (*b, g.zip(val(*a), |x, y| x * y))],
        Op::Div(a, b) => {
            let bv = val(*b);
            let da = g.zip(bv, |x, y| x / y);
            let db = g
                .zip(val(*a), |x, y| x * y)
                .zip(bv, |num, y| -num / (y * y));
            vec![(*a, da), (*b, db)]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar { a, c } => vec![(*a, g.scale(*c))],
        Op::Exp(a) => vec![(*a, g.zip(&node.value, |x, y| x * y))],
        Op::Ln(a) => vec![(*a, g.zip(val(*a), |x, y| x / y))],
        Op::Sqrt(a) => vec![(*a, g.zip(&node.value, |x, y| x / (2.0 * y)))],
        Op::Tanh(a) => vec![(*a, g.zip(&node.value, |x, y| x * (1.0 - y * y)))],
        Op::Silu(a) => {
            let da = g.zip(val(*a), |x, v| {
                let s = 1.0 / (1.0 + (-v).exp());
                x * s * (1.0 + v * (1.0 - s))
            });
            vec![(*a, da)]
        }
        Op::Softplus(a) => {
            let da = g.zip(val(*a), |x, v| x / (1.0 + (-v).exp()));
            vec![(*a, da)]
        }
        Op::SumAll(a) => {
            let seed = g.data()[0];
            vec![(*a, Array::full(val(*a).shape().to_vec(), seed))]
        }
        Op::RowSum(a) => {
            let av = val(*a);
            let (m, n) = (av.rows(), av.cols());
            let mut da = Array::zeros(av.shape().to_vec());
            for i in 0..m {
                let gi = g.data()[i];
                for v in &mut da.data_mut()[i * n..(i + 1) * n] {
                    *v = gi;
                }
            }
            vec![(*a, da)]
        }
        Op::Matmul(a, b) => {
            let da = g.matmul(&val(*b).transposed());
            let db = val(*a).transposed().matmul(g);
            vec![(*a, da), (*b, db)]
        }
        Op::Transpose(a) => vec![(*a, g.transposed())],
        Op::AddRow { mat, row } => {
            let n = val(*mat).cols();
            let m = val(*mat).rows();
            let mut drow = Array::zeros(val(*row).shape().to_vec());
            for i in 0..m {
                for j in 0..n {
                    drow.data_mut()[j] += g.at(i, j);
                }
            }
            vec![(*mat, g.clone()), (*row, drow)]
        }
        Op::ScaleRows { mat, col } => {
            let matv = val(*mat);
            let colv = val(*col);
            let (m, n) = (matv.rows(), matv.cols());
            let mut dmat = Array::zeros(matv.shape().to_vec());
            let mut dcol = Array::zeros(colv.shape().to_vec());
            for i in 0..m {
                let ci = colv.data()[i];
                let mut acc = 0.0;
                for j in 0..n {
                    dmat.data_mut()[i * n + j] = g.at(i, j) * ci;
                    acc += g.at(i, j) * matv.at(i, j);
                }
                dcol.data_mut()[i] = acc;
            }
            vec![(*mat, dmat), (*col, dcol)]
        }
        Op::ConcatRows(parts) => {
            let n = node.value.cols();
            let mut out = Vec::with_capacity(parts.len());
            let mut offset = 0;
            for &pid in parts {
                let rows = val(pid).rows();
                let slice = &g.data()[offset * n..(offset + rows) * n];
                out.push((pid, Array::new(val(pid).shape().to_vec(), slice.to_vec()).unwrap()));
                offset += rows;
            }
            out
        }
        Op::SliceRows { a, start, end } => {
            let av = val(*a);
            let n = av.cols();
            let mut da = Array::zeros(av.shape().to_vec());
            da.data_mut()[start * n..end * n].copy_from_slice(g.data());
            vec![(*a, da)]
        }
        Op::GatherRows { a, idx } => {
            let av = val(*a);
            let n = av.cols();
            let mut da = Array::zeros(av.shape().to_vec());
            for (out_row, &src_row) in idx.iter().enumerate() {
                let dst = &mut da.data_mut()[src_row * n..(src_row + 1) * n];
                let src = &g.data()[out_row * n..(out_row + 1) * n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![(*a, da)]
        }
        Op::TileRows { a, reps } => {
            let av = val(*a);
            let block = av.numel();
            let mut da = Array::zeros(av.shape().to_vec());
            for r in 0..*reps {
                let src = &g.data()[r * block..(r + 1) * block];
                for (d, s) in da.data_mut().iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![(*a, da)]
        }
        Op::ReplaceRows { a, token, flags } => {
            let av = val(*a);
            let n = av.cols();
            let mut da = Array::zeros(av.shape().to_vec());
            let mut dtok = Array::zeros(val(*token).shape().to_vec());
            for (i, &masked) in flags.iter().enumerate() {
                let src = &g.data()[i * n..(i + 1) * n];
                if masked {
                    for (d, s) in dtok.data_mut().iter_mut().zip(src) {
                        *d += s;
                    }
                } else {
                    da.data_mut()[i * n..(i + 1) * n].copy_from_slice(src);
                }
            }
            vec![(*a, da), (*token, dtok)]
        }
        Op::LayerNormRows { x, gamma, beta, eps } => {
            let xv = val(*x);
            let gv = val(*gamma);
            let (m, n) = (xv.rows(), xv.cols());
            let mut dx = Array::zeros(xv.shape().to_vec());
            let mut dgamma = Array::zeros(gv.shape().to_vec());
            let mut dbeta = Array::zeros(val(*beta).shape().to_vec());
            for i in 0..m {
                let row = xv.row(i);
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv_std = 1.0 / (var + eps).sqrt();
                let grow = &g.data()[i * n..(i + 1) * n];
                // dxhat = g * gamma; two row means close the backward form.
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                let mut dxhat = vec![0.0; n];
                for j in 0..n {
                    let xhat = (row[j] - mean) * inv_std;
                    let d = grow[j] * gv.data()[j];
                    dxhat[j] = d;
                    mean_dxhat += d;
                    mean_dxhat_xhat += d * xhat;
                    dgamma.data_mut()[j] += grow[j] * xhat;
                    dbeta.data_mut()[j] += grow[j];
                }
                mean_dxhat /= n as f64;
                mean_dxhat_xhat /= n as f64;
                for j in 0..n {
                    let xhat = (row[j] - mean) * inv_std;
                    dx.data_mut()[i * n + j] =
                        inv_std * (dxhat[j] - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
            vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
        }
        Op::NormalizeRows(a) => {
            let av = val(*a);
            let (m, n) = (av.rows(), av.cols());
            let mut da = Array::zeros(av.shape().to_vec());
            for i in 0..m {
                let row = av.row(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let grow = &g.data()[i * n..(i + 1) * n];
                if norm > NORM_EPS {
                    let y: Vec<f64> = row.iter().map(|v| v / norm).collect();
                    let dot: f64 = y.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        da.data_mut()[i * n + j] = (grow[j] - y[j] * dot) / norm;
                    }
                } else {
                    // Clamped branch: y = x / eps is linear in x.
                    for j in 0..n {
                        da.data_mut()[i * n + j] = grow[j] / NORM_EPS;
                    }
                }
            }
            vec![(*a, da)]
        }
        Op::ConvChannels { z, h, batch, seq } => {
            let zv = val(*z);
            let hv = val(*h);
            let (b, s) = (*batch, *seq);
            let d = zv.cols();
            let taps = 2 * s - 1;

            // d_z[b] = conv_two_sided(g[b], reverse(h)); one spectrum per channel.
            let size = (3 * s - 2).next_power_of_two();
            let dz_cols: Vec<Vec<f64>> = (0..d)
                .into_par_iter()
                .map(|c| {
                    let rev: Vec<f64> = (0..taps).map(|k| hv.at(taps - 1 - k, c)).collect();
                    let (fre, fim) = fft::fft_real(&rev, size);
                    let mut col = vec![0.0; b * s];
                    for bi in 0..b {
                        let gseg: Vec<f64> =
                            (0..s).map(|t| g.at(bi * s + t, c)).collect();
                        let full = fft::convolve_with_spectrum(&gseg, &fre, &fim, 2 * s - 1 + s - 1 + 1);
                        col[bi * s..(bi + 1) * s].copy_from_slice(&full[s - 1..2 * s - 1]);
                    }
                    col
                })
                .collect();

            // d_h[:,c] = Σ_b full_conv(g[b], reverse(z[b])), summed in batch order.
            let dh_cols: Vec<Vec<f64>> = (0..d)
                .into_par_iter()
                .map(|c| {
                    let mut acc = vec![0.0; taps];
                    for bi in 0..b {
                        let gseg: Vec<f64> =
                            (0..s).map(|t| g.at(bi * s + t, c)).collect();
                        let zrev: Vec<f64> =
                            (0..s).map(|t| zv.at(bi * s + (s - 1 - t), c)).collect();
                        let full = fft::convolve_full(&gseg, &zrev);
                        for (a, v) in acc.iter_mut().zip(&full) {
                            *a += v;
                        }
                    }
                    acc
                })
                .collect();

            let mut dz = Array::zeros(zv.shape().to_vec());
            let mut dh = Array::zeros(hv.shape().to_vec());
            for c in 0..d {
                for r in 0..b * s {
                    dz.data_mut()[r * d + c] = dz_cols[c][r];
                }
                for k in 0..taps {
                    dh.data_mut()[k * d + c] = dh_cols[c][k];
                }
            }
            vec![(*z, dz), (*h, dh)]
        }
        Op::CustomUnary { a, rule } => vec![(*a, rule(val(*a), g))],
    }
}

const NORM_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Var {
    fn graph(&self) -> Graph {
        Graph {
            tape: Rc::clone(&self.tape),
        }
    }

    fn same_tape(&self, other: &Var) {
        assert!(
            Rc::ptr_eq(&self.tape, &other.tape),
            "operands belong to different graphs"
        );
    }

    pub fn value(&self) -> Array {
        self.tape.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.borrow()[self.id].value.shape().to_vec()
    }

    /// Gradient after `backward`; `None` means no path to the root, i.e. an
    /// exactly-zero gradient.
    pub fn grad(&self) -> Option<Array> {
        self.tape.borrow()[self.id].grad.clone()
    }

    /// Gradient, materializing zeros for unreachable nodes.
    pub fn grad_or_zero(&self) -> Array {
        self.grad()
            .unwrap_or_else(|| Array::zeros(self.shape()))
    }

    fn unary(&self, value: Array, op: Op) -> Var {
        self.graph().push(value, op)
    }

    pub fn add(&self, other: &Var) -> Var {
        self.same_tape(other);
        let v = self.value().add(&other.value());
        self.unary(v, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var) -> Var {
        self.same_tape(other);
        let v = self.value().sub(&other.value());
        self.unary(v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var) -> Var {
        self.same_tape(other);
        let v = self.value().zip(&other.value(), |a, b| a * b);
        self.unary(v, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var) -> Var {
        self.same_tape(other);
        let v = self.value().zip(&other.value(), |a, b| a / b);
        self.unary(v, Op::Div(self.id, other.id))
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        self.unary(self.value().scale(c), Op::MulScalar { a: self.id, c })
    }

    pub fn neg(&self) -> Var {
        self.mul_scalar(-1.0)
    }

    pub fn exp(&self) -> Var {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(&self) -> Var {
        self.unary(self.value().map(f64::ln), Op::Ln(self.id))
    }

    pub fn sqrt(&self) -> Var {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn tanh(&self) -> Var {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn silu(&self) -> Var {
        let v = self.value().map(|x| x / (1.0 + (-x).exp()));
        self.unary(v, Op::Silu(self.id))
    }

    pub fn softplus(&self) -> Var {
        // ln(1 + e^x), computed to avoid overflow for large x.
        let v = self.value().map(|x| {
            if x > 30.0 {
                x
            } else {
                x.exp().ln_1p()
            }
        });
        self.unary(v, Op::Softplus(self.id))
    }

    pub fn sum_all(&self) -> Var {
        let s: f64 = self.value().data().iter().sum();
        self.unary(Array::scalar(s), Op::SumAll(self.id))
    }

    pub fn row_sum(&self) -> Var {
        let v = self.value();
        let m = v.rows();
        let data: Vec<f64> = (0..m).map(|i| v.row(i).iter().sum()).collect();
        self.unary(Array::new(vec![m, 1], data).unwrap(), Op::RowSum(self.id))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        self.same_tape(other);
        let v = self.value().matmul(&other.value());
        self.unary(v, Op::Matmul(self.id, other.id))
    }

    pub fn t(&self) -> Var {
        self.unary(self.value().transposed(), Op::Transpose(self.id))
    }

    /// Add a length-n row vector to every row of an (m,n) matrix.
    pub fn add_row(&self, row: &Var) -> Var {
        self.same_tape(row);
        let m = self.value();
        let r = row.value();
        assert_eq!(m.cols(), r.numel(), "row broadcast width mismatch");
        let n = m.cols();
        let mut data = m.data().to_vec();
        for i in 0..m.rows() {
            for j in 0..n {
                data[i * n + j] += r.data()[j];
            }
        }
        self.unary(
            Array::new(m.shape().to_vec(), data).unwrap(),
            Op::AddRow {
                mat: self.id,
                row: row.id,
            },
        )
    }

    /// Scale row i by element i of a length-m column vector.
    pub fn scale_rows(&self, col: &Var) -> Var {
        self.same_tape(col);
        let m = self.value();
        let c = col.value();
        assert_eq!(m.rows(), c.numel(), "row scaling length mismatch");
        let n = m.cols();
        let mut data = m.data().to_vec();
        for i in 0..m.rows() {
            let ci = c.data()[i];
            for v in &mut data[i * n..(i + 1) * n] {
                *v *= ci;
            }
        }
        self.unary(
            Array::new(m.shape().to_vec(), data).unwrap(),
            Op::ScaleRows {
                mat: self.id,
                col: col.id,
            },
        )
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Var {
        let v = self.value();
        let n = v.cols();
        let data = v.data()[start * n..end * n].to_vec();
        self.unary(
            Array::new(vec![end - start, n], data).unwrap(),
            Op::SliceRows {
                a: self.id,
                start,
                end,
            },
        )
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Var {
        let v = self.value();
        let n = v.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        self.unary(
            Array::new(vec![idx.len(), n], data).unwrap(),
            Op::GatherRows {
                a: self.id,
                idx: idx.to_vec(),
            },
        )
    }

    pub fn tile_rows(&self, reps: usize) -> Var {
        let v = self.value();
        let n = v.cols();
        let mut data = Vec::with_capacity(v.numel() * reps);
        for _ in 0..reps {
            data.extend_from_slice(v.data());
        }
        self.unary(
            Array::new(vec![v.rows() * reps, n], data).unwrap(),
            Op::TileRows {
                a: self.id,
                reps,
            },
        )
    }

    /// Replace rows where `flags` is true with the shared `token` row.
    pub fn replace_rows(&self, flags: &[bool], token: &Var) -> Var {
        self.same_tape(token);
        let v = self.value();
        let tok = token.value();
        let n = v.cols();
        assert_eq!(flags.len(), v.rows(), "flag count must equal row count");
        assert_eq!(tok.numel(), n, "token width mismatch");
        let mut data = v.data().to_vec();
        for (i, &masked) in flags.iter().enumerate() {
            if masked {
                data[i * n..(i + 1) * n].copy_from_slice(tok.data());
            }
        }
        self.unary(
            Array::new(v.shape().to_vec(), data).unwrap(),
            Op::ReplaceRows {
                a: self.id,
                token: token.id,
                flags: flags.to_vec(),
            },
        )
    }

    /// Per-row layer normalization with learned gain/bias.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        self.same_tape(gamma);
        self.same_tape(beta);
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        let (m, n) = (x.rows(), x.cols());
        assert_eq!(gm.numel(), n);
        assert_eq!(bt.numel(), n);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                data[i * n + j] = (row[j] - mean) * inv_std * gm.data()[j] + bt.data()[j];
            }
        }
        self.unary(
            Array::new(x.shape().to_vec(), data).unwrap(),
            Op::LayerNormRows {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
        )
    }

    /// L2-normalize each row (norms below 1e-12 are clamped).
    pub fn normalize_rows(&self) -> Var {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = x.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            for j in 0..n {
                data[i * n + j] = row[j] / norm;
            }
        }
        self.unary(
            Array::new(x.shape().to_vec(), data).unwrap(),
            Op::NormalizeRows(self.id),
        )
    }

    /// Custom unary op for extension and fault-injection tests.
    pub fn custom_unary(
        &self,
        forward: impl Fn(f64) -> f64,
        backward: impl Fn(&Array, &Array) -> Array + 'static,
    ) -> Var {
        let v = self.value().map(forward);
        self.unary(
            v,
            Op::CustomUnary {
                a: self.id,
                rule: Box::new(backward),
            },
        )
    }
}

/// Stack parts vertically; all parts must share a column count.
pub fn concat_rows(parts: &[Var]) -> Var {
    assert!(!parts.is_empty(), "concat_rows needs at least one part");
    let first = &parts[0];
    let n = first.value().cols();
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        first.same_tape(p);
        let v = p.value();
        assert_eq!(v.cols(), n, "concat_rows width mismatch");
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    first.graph().push(
        Array::new(vec![rows, n], data).unwrap(),
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
    )
}

/// Depthwise two-sided convolution of `batch` stacked sequences.
///
/// `z` is (batch·seq, d); `h` is (2·seq-1, d) with row k holding the tap at
/// offset τ = k - (seq-1). Channel c of every sequence is convolved with
/// column c of `h`. Channels run in parallel; each writes disjoint output.
pub fn conv_channels(z: &Var, h: &Var, batch: usize, seq: usize) -> Var {
    z.same_tape(h);
    let zv = z.value();
    let hv = h.value();
    let d = zv.cols();
    assert_eq!(zv.rows(), batch * seq, "z row count must be batch*seq");
    assert_eq!(hv.rows(), 2 * seq - 1, "kernel must have 2*seq-1 taps");
    assert_eq!(hv.cols(), d, "kernel channel count mismatch");

    let size = (3 * seq - 2).next_power_of_two();
    let cols: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|c| {
            let taps: Vec<f64> = (0..2 * seq - 1).map(|k| hv.at(k, c)).collect();
            let (fre, fim) = fft::fft_real(&taps, size);
            let mut col = vec![0.0; batch * seq];
            for b in 0..batch {
                let zseg: Vec<f64> = (0..seq).map(|t| zv.at(b * seq + t, c)).collect();
                let full = fft::convolve_with_spectrum(&zseg, &fre, &fim, 3 * seq - 2);
                col[b * seq..(b + 1) * seq].copy_from_slice(&full[seq - 1..2 * seq - 1]);
            }
            col
        })
        .collect();

    let mut data = vec![0.0; batch * seq * d];
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * d + c] = v;
        }
    }
    z.graph().push(
        Array::new(vec![batch * seq, d], data).unwrap(),
        Op::ConvChannels {
            z: z.id,
            h: h.id,
            batch,
            seq,
        },
    )
}
