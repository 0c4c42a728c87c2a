//! Pseudo-sensitive attributes.
//!
//! A one-layer GCN encoder (self/neighbor split) with a softmax head is pretrained on the labeled
//! nodes; its hidden representation (head dropped) is the low-dimensional
//! attribute matrix. Each column is binarized at its training-split median,
//! and two nodes "differ" in column `i` when their bits differ.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{accuracy_on, selection_nodes};
use crate::graph::{Split, TrainingGraph};
use crate::matrix::DenseMatrix;
use crate::nn::ops::{activation_backward, apply_activation, softmax_cross_entropy_logit_grad};
use crate::nn::{
    glorot_uniform, softmax_cross_entropy, Activation, DifferentiableProgram, Optimizer,
    OptimizerConfig, ParameterSet,
};

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub params: ParameterSet,
    pub input_dim: usize,
    pub dim: usize,
    pub seed: u64,
    pub trained: bool,
}

impl EncoderParams {
    pub fn init(input_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        params
            .insert("enc.w", glorot_uniform(2 * input_dim, dim, &mut rng))
            .expect("unique");
        params
            .insert("enc.bias", DenseMatrix::zeros(1, dim))
            .expect("unique");
        params
            .insert("head.w", glorot_uniform(dim, NUM_CLASSES, &mut rng))
            .expect("unique");
        params
            .insert("head.bias", DenseMatrix::zeros(1, NUM_CLASSES))
            .expect("unique");
        Self {
            params,
            input_dim,
            dim,
            seed,
            trained: false,
        }
    }

    /// Encoder representation `relu(X·W_self + (N·X)·W_neigh + b)`, without the head.
    pub fn encode(&self, graph: &TrainingGraph<'_>) -> Result<DenseMatrix> {
        let propagated = propagate(graph)?;
        let (_, z) = encode_propagated(&self.params, &propagated)?;
        Ok(z)
    }
}

/// `[X | N·X]` with `N` the normalized adjacency off the diagonal, so the
/// first `input_dim` rows of `enc.w` act as the self weight and the rest as
/// the neighbor weight, the same split the classifier layers use.
pub fn propagate(graph: &TrainingGraph<'_>) -> Result<DenseMatrix> {
    let x = graph.features();
    let nx = graph.normalized_adjacency().without_diagonal().matmul(x)?;
    let (rows, cols) = x.shape();
    let mut data = Vec::with_capacity(rows * cols * 2);
    for r in 0..rows {
        data.extend_from_slice(x.row(r));
        data.extend_from_slice(nx.row(r));
    }
    DenseMatrix::from_vec(rows, 2 * cols, data)
}

fn encode_propagated(
    params: &ParameterSet,
    propagated: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mut pre = propagated.matmul(params.value("enc.w"))?;
    pre.add_row_broadcast(params.value("enc.bias"))?;
    let z = apply_activation(&pre, Activation::Relu);
    Ok((pre, z))
}

struct EncoderForward {
    pre: DenseMatrix,
    z: DenseMatrix,
    probs: DenseMatrix,
}

fn encoder_forward(params: &ParameterSet, propagated: &DenseMatrix) -> Result<EncoderForward> {
    let (pre, z) = encode_propagated(params, propagated)?;
    let mut logits = z.matmul(params.value("head.w"))?;
    logits.add_row_broadcast(params.value("head.bias"))?;
    let probs = apply_activation(&logits, Activation::SoftmaxRows);
    probs.ensure_finite("encoder output")?;
    Ok(EncoderForward { pre, z, probs })
}

fn argmax_rows(probs: &DenseMatrix) -> Vec<u8> {
    (0..probs.rows())
        .map(|r| u8::from(probs.get(r, 1) > probs.get(r, 0)))
        .collect()
}

/// Softmax cross-entropy of the encoder head on labeled nodes; the propagated
/// features from [`propagate`] are constant and precomputed.
pub struct EncoderProgram<'a> {
    pub propagated: &'a DenseMatrix,
    pub labels: &'a [u8],
    pub mask: &'a [usize],
}

impl DifferentiableProgram for EncoderProgram<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        let fwd = encoder_forward(params, self.propagated)?;
        softmax_cross_entropy(&fwd.probs, self.labels, self.mask)
    }

    fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
        let fwd = encoder_forward(params, self.propagated)?;
        let loss = softmax_cross_entropy(&fwd.probs, self.labels, self.mask)?;
        let d_logits = softmax_cross_entropy_logit_grad(&fwd.probs, self.labels, self.mask);
        params.set_grad("head.w", fwd.z.t_matmul(&d_logits)?)?;
        params.set_grad("head.bias", d_logits.column_sums())?;
        let dz = d_logits.matmul_t(params.value("head.w"))?;
        let dpre = activation_backward(&fwd.pre, &dz, Activation::Relu);
        params.set_grad("enc.w", self.propagated.t_matmul(&dpre)?)?;
        params.set_grad("enc.bias", dpre.column_sums())?;
        Ok(loss)
    }
}

/// Pretrains the encoder on labeled training nodes and keeps the parameters
/// with the best selection accuracy (initial state included), breaking ties
/// by training loss.
pub fn pretrain_encoder(
    graph: &TrainingGraph<'_>,
    dim: usize,
    epochs: usize,
    seed: u64,
    optimizer: OptimizerConfig,
) -> Result<EncoderParams> {
    if dim == 0 {
        return Err(Error::Config("encoder dimension must be at least 1".into()));
    }
    let labeled = graph.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let mut enc = EncoderParams::init(graph.features().cols(), dim, seed);
    if epochs == 0 {
        return Ok(enc);
    }
    let propagated = propagate(graph)?;
    let labels = graph.dense_labels();
    let select = selection_nodes(graph);
    let program = EncoderProgram {
        propagated: &propagated,
        labels: &labels,
        mask: &labeled,
    };
    let score = |p: &ParameterSet| -> Result<f64> {
        let fwd = encoder_forward(p, &propagated)?;
        Ok(accuracy_on(&argmax_rows(&fwd.probs), &labels, &select))
    };
    let mut opt = Optimizer::new(optimizer);
    let mut best = enc.params.clone();
    let mut best_acc = score(&enc.params)?;
    let mut best_loss = program.loss(&enc.params)?;
    for _ in 0..epochs {
        program.loss_and_grad(&mut enc.params)?;
        opt.step(&mut enc.params)?;
        let acc = score(&enc.params)?;
        // Ties on selection accuracy go to the lower training loss.
        let loss = program.loss(&enc.params)?;
        if acc > best_acc || (acc == best_acc && loss < best_loss) {
            best_acc = acc;
            best_loss = loss;
            best = enc.params.clone();
        }
    }
    enc.params = best;
    enc.trained = true;
    Ok(enc)
}

/// Encoder head accuracy on `split` (labeled nodes only).
pub fn encoder_accuracy(
    graph: &TrainingGraph<'_>,
    enc: &EncoderParams,
    split: Split,
) -> Result<f64> {
    let propagated = propagate(graph)?;
    let fwd = encoder_forward(&enc.params, &propagated)?;
    Ok(accuracy_on(
        &argmax_rows(&fwd.probs),
        &graph.dense_labels(),
        &graph.labeled_in(split),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoAttrs {
    pub values: DenseMatrix,
    pub thresholds: Vec<f64>,
    /// Row-major `num_nodes × num_columns`, `1` iff value > threshold.
    bits: Vec<u8>,
    /// A column is degenerate when its training bits are all equal.
    pub degenerate: Vec<bool>,
}

impl PseudoAttrs {
    /// Binarizes `values` at per-column medians over `train_rows`.
    pub fn from_values(values: DenseMatrix, train_rows: &[usize]) -> Result<Self> {
        values.ensure_finite("pseudo-sensitive values")?;
        let cols = values.cols();
        let mut thresholds = Vec::with_capacity(cols);
        for c in 0..cols {
            let mut col: Vec<f64> = train_rows.iter().map(|&r| values.get(r, c)).collect();
            thresholds.push(median(&mut col));
        }
        let mut bits = vec![0u8; values.rows() * cols];
        for r in 0..values.rows() {
            for c in 0..cols {
                bits[r * cols + c] = u8::from(values.get(r, c) > thresholds[c]);
            }
        }
        let degenerate = (0..cols)
            .map(|c| {
                let ones = train_rows
                    .iter()
                    .filter(|&&r| bits[r * cols + c] == 1)
                    .count();
                ones == 0 || ones == train_rows.len()
            })
            .collect();
        Ok(Self {
            values,
            thresholds,
            bits,
            degenerate,
        })
    }

    pub fn num_columns(&self) -> usize {
        self.values.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn bit(&self, node: usize, column: usize) -> u8 {
        self.bits[node * self.num_columns() + column]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn active_columns(&self) -> Vec<bool> {
        self.degenerate.iter().map(|d| !d).collect()
    }

    /// CSV with columns `node,x0_0..,bit_0..` for external visualization.
    pub fn to_csv(&self) -> String {
        let cols = self.num_columns();
        let mut out = String::from("node");
        for c in 0..cols {
            out.push_str(&format!(",x0_{c}"));
        }
        for c in 0..cols {
            out.push_str(&format!(",bit_{c}"));
        }
        out.push('\n');
        for v in 0..self.num_nodes() {
            out.push_str(&v.to_string());
            for x in self.values.row(v) {
                out.push_str(&format!(",{x}"));
            }
            for c in 0..cols {
                out.push_str(&format!(",{}", self.bit(v, c)));
            }
            out.push('\n');
        }
        out
    }
}

/// Median with the even-count midpoint convention; `NaN` for an empty slice.
fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Runs the encoder on the whole graph and binarizes its columns.
pub fn extract_pseudo_attrs(
    graph: &TrainingGraph<'_>,
    encoder: &EncoderParams,
) -> Result<PseudoAttrs> {
    let values = encoder.encode(graph)?;
    PseudoAttrs::from_values(values, &graph.nodes_in(Split::Train))
}
