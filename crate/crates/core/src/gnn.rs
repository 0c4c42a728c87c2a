//! Message-passing node classifiers with an explicit self/neighbor weight split.
//!
//! Every layer computes `H' = σ(H·W_self + (N·H)·W_neigh + b)`, where the
//! neighbor operator `N` depends on the backbone:
//!
//! * GCN: the symmetric-normalized adjacency with its diagonal removed, so the
//!   self term travels only through `W_self`;
//! * GIN: the raw adjacency (plain neighbor sum); the `(1 + ε)` self weight is
//!   absorbed into `W_self`.
//!
//! A sigmoid head `ŷ = sigmoid(h·w + c)` produces the positive-class probability.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SparseMatrix, Split, TrainingGraph};
use crate::matrix::DenseMatrix;
use crate::nn::ops::{activation_backward, apply_activation, binary_cross_entropy_logit_grad};
use crate::nn::{
    binary_cross_entropy, glorot_uniform, Activation, DifferentiableProgram, Optimizer,
    OptimizerConfig, ParameterSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Gcn,
    Gin,
}

impl std::str::FromStr for Backbone {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gcn" => Ok(Backbone::Gcn),
            "gin" => Ok(Backbone::Gin),
            other => Err(format!("unknown backbone {other:?}")),
        }
    }
}

/// The neighbor operator `N` used in the `W_neigh` path of every layer.
pub fn neighbor_operator(backbone: Backbone, graph: &TrainingGraph<'_>) -> SparseMatrix {
    match backbone {
        Backbone::Gcn => graph.normalized_adjacency().without_diagonal(),
        Backbone::Gin => graph.raw_adjacency().clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnArchitecture {
    pub backbone: Backbone,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl GnnArchitecture {
    pub fn new(backbone: Backbone, input_dim: usize, hidden_dims: Vec<usize>) -> Self {
        Self {
            backbone,
            input_dim,
            hidden_dims,
            activation: Activation::Relu,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    fn layer_in(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.hidden_dims[k - 1]
        }
    }
}

pub(crate) fn w_self(k: usize) -> String {
    format!("layer{k}.w_self")
}

pub(crate) fn w_neigh(k: usize) -> String {
    format!("layer{k}.w_neigh")
}

fn bias(k: usize) -> String {
    format!("layer{k}.bias")
}

const HEAD_W: &str = "head.w";
const HEAD_B: &str = "head.bias";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnParams {
    pub arch: GnnArchitecture,
    pub params: ParameterSet,
    pub seed: u64,
    pub trained: bool,
}

/// Cached intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct GnnForward {
    inputs: Vec<DenseMatrix>,
    aggregated: Vec<DenseMatrix>,
    pre: Vec<DenseMatrix>,
    pub embeddings: DenseMatrix,
    pub probs: DenseMatrix,
}

impl GnnForward {
    /// Positive-class probability per node.
    pub fn probabilities(&self) -> Vec<f64> {
        self.probs.data().to_vec()
    }

    /// Hard predictions, `ŷ ≥ 0.5 → 1`.
    pub fn predictions(&self) -> Vec<u8> {
        self.probs
            .data()
            .iter()
            .map(|&p| u8::from(p >= 0.5))
            .collect()
    }
}

impl GnnParams {
    /// Glorot-uniform weights and zero biases, determined by `seed`.
    pub fn init(arch: GnnArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for (k, &out) in arch.hidden_dims.iter().enumerate() {
            let inp = arch.layer_in(k);
            params
                .insert(w_self(k), glorot_uniform(inp, out, &mut rng))
                .expect("unique");
            params
                .insert(w_neigh(k), glorot_uniform(inp, out, &mut rng))
                .expect("unique");
            params
                .insert(bias(k), DenseMatrix::zeros(1, out))
                .expect("unique");
        }
        params
            .insert(HEAD_W, glorot_uniform(arch.embedding_dim(), 1, &mut rng))
            .expect("unique");
        params
            .insert(HEAD_B, DenseMatrix::zeros(1, 1))
            .expect("unique");
        Self {
            arch,
            params,
            seed,
            trained: false,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.arch.num_layers()
    }

    pub fn w_self(&self, k: usize) -> &DenseMatrix {
        self.params.value(&w_self(k))
    }

    pub fn w_neigh(&self, k: usize) -> &DenseMatrix {
        self.params.value(&w_neigh(k))
    }

    pub fn layer_bias(&self, k: usize) -> &DenseMatrix {
        self.params.value(&bias(k))
    }

    pub fn forward(&self, x0: &DenseMatrix, neighbors: &SparseMatrix) -> Result<GnnForward> {
        forward_with(&self.arch, &self.params, x0, neighbors)
    }
}

pub(crate) fn forward_with(
    arch: &GnnArchitecture,
    params: &ParameterSet,
    x0: &DenseMatrix,
    neighbors: &SparseMatrix,
) -> Result<GnnForward> {
    if x0.cols() != arch.input_dim || neighbors.dim() != x0.rows() {
        return Err(Error::Dimension {
            op: "gnn forward",
            left: x0.shape(),
            right: (neighbors.dim(), arch.input_dim),
        });
    }
    x0.ensure_finite("gnn input")?;
    let mut inputs = Vec::with_capacity(arch.num_layers());
    let mut aggregated = Vec::with_capacity(arch.num_layers());
    let mut pre = Vec::with_capacity(arch.num_layers());
    let mut h = x0.clone();
    for k in 0..arch.num_layers() {
        let agg = neighbors.matmul(&h)?;
        let mut z = h.matmul(params.value(&w_self(k)))?;
        z.add_assign(&agg.matmul(params.value(&w_neigh(k)))?)?;
        z.add_row_broadcast(params.value(&bias(k)))?;
        let next = apply_activation(&z, arch.activation);
        inputs.push(h);
        aggregated.push(agg);
        pre.push(z);
        h = next;
    }
    let mut logits = h.matmul(params.value(HEAD_W))?;
    logits.add_row_broadcast(params.value(HEAD_B))?;
    let probs = apply_activation(&logits, Activation::Sigmoid);
    probs.ensure_finite("gnn output")?;
    Ok(GnnForward {
        inputs,
        aggregated,
        pre,
        embeddings: h,
        probs,
    })
}

/// Back-propagates `∂L/∂logits` and an optional direct `∂L/∂embeddings`,
/// overwriting the gradient buffers of `params`.
pub(crate) fn backward_with(
    arch: &GnnArchitecture,
    params: &mut ParameterSet,
    fwd: &GnnForward,
    neighbors: &SparseMatrix,
    d_logits: &DenseMatrix,
    d_embeddings: Option<&DenseMatrix>,
) -> Result<()> {
    params.set_grad(HEAD_W, fwd.embeddings.t_matmul(d_logits)?)?;
    params.set_grad(HEAD_B, d_logits.column_sums())?;
    let mut dh = d_logits.matmul_t(params.value(HEAD_W))?;
    if let Some(de) = d_embeddings {
        dh.add_assign(de)?;
    }
    for k in (0..arch.num_layers()).rev() {
        let dpre = activation_backward(&fwd.pre[k], &dh, arch.activation);
        params.set_grad(&w_self(k), fwd.inputs[k].t_matmul(&dpre)?)?;
        params.set_grad(&w_neigh(k), fwd.aggregated[k].t_matmul(&dpre)?)?;
        params.set_grad(&bias(k), dpre.column_sums())?;
        if k > 0 {
            let mut prev = dpre.matmul_t(params.value(&w_self(k)))?;
            // N is symmetric for both backbones, so Nᵀ·X = N·X.
            prev.add_assign(&neighbors.matmul(&dpre.matmul_t(params.value(&w_neigh(k)))?)?)?;
            dh = prev;
        }
    }
    Ok(())
}

/// Binary cross-entropy of the classifier on a fixed node set.
pub struct UtilityProgram<'a> {
    pub arch: &'a GnnArchitecture,
    pub x0: &'a DenseMatrix,
    pub neighbors: &'a SparseMatrix,
    pub labels: &'a [u8],
    pub mask: &'a [usize],
}

impl DifferentiableProgram for UtilityProgram<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        let fwd = forward_with(self.arch, params, self.x0, self.neighbors)?;
        binary_cross_entropy(&fwd.probs, self.labels, self.mask)
    }

    fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
        let fwd = forward_with(self.arch, params, self.x0, self.neighbors)?;
        let loss = binary_cross_entropy(&fwd.probs, self.labels, self.mask)?;
        let d_logits = binary_cross_entropy_logit_grad(&fwd.probs, self.labels, self.mask);
        backward_with(self.arch, params, &fwd, self.neighbors, &d_logits, None)?;
        Ok(loss)
    }
}

pub(crate) fn accuracy_on(pred: &[u8], labels: &[u8], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    nodes.iter().filter(|&&v| pred[v] == labels[v]).count() as f64 / nodes.len() as f64
}

/// Nodes whose accuracy drives checkpoint selection: labeled validation nodes,
/// or the labeled training nodes when no validation label exists.
pub(crate) fn selection_nodes(graph: &TrainingGraph<'_>) -> Vec<usize> {
    let val = graph.labeled_in(Split::Val);
    if val.is_empty() {
        graph.labeled_nodes()
    } else {
        val
    }
}

/// Trains the classifier on the utility loss over labeled training nodes and
/// returns the parameters with the best selection accuracy seen (initial state
/// included), breaking ties by training loss.
pub fn pretrain_classifier(
    graph: &TrainingGraph<'_>,
    x0: &DenseMatrix,
    arch: GnnArchitecture,
    seed: u64,
    epochs: usize,
    optimizer: OptimizerConfig,
) -> Result<GnnParams> {
    let labeled = graph.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let mut model = GnnParams::init(arch, seed);
    if epochs == 0 {
        return Ok(model);
    }
    let neighbors = neighbor_operator(model.arch.backbone, graph);
    let labels = graph.dense_labels();
    let select = selection_nodes(graph);
    let program = UtilityProgram {
        arch: &model.arch.clone(),
        x0,
        neighbors: &neighbors,
        labels: &labels,
        mask: &labeled,
    };
    let mut opt = Optimizer::new(optimizer);
    let mut best = model.params.clone();
    let mut best_acc = accuracy_on(
        &model.forward(x0, &neighbors)?.predictions(),
        &labels,
        &select,
    );
    let mut best_loss = program.loss(&model.params)?;
    for _ in 0..epochs {
        program.loss_and_grad(&mut model.params)?;
        opt.step(&mut model.params)?;
        let acc = accuracy_on(
            &model.forward(x0, &neighbors)?.predictions(),
            &labels,
            &select,
        );
        // Ties on selection accuracy go to the lower training loss.
        let loss = program.loss(&model.params)?;
        if acc > best_acc || (acc == best_acc && loss < best_loss) {
            best_acc = acc;
            best_loss = loss;
            best = model.params.clone();
        }
    }
    model.params = best;
    model.trained = true;
    Ok(model)
}

/// Ground truth on labeled training nodes, thresholded predictions (ties to 1) elsewhere.
pub fn pseudo_labels(graph: &TrainingGraph<'_>, probabilities: &[f64]) -> Vec<u8> {
    let split = graph.split();
    graph
        .labels()
        .iter()
        .zip(probabilities)
        .enumerate()
        .map(|(v, (y, &p))| match (split[v], y) {
            (Split::Train, Some(y)) => *y,
            _ => u8::from(p >= 0.5),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::nn::grad_check;

    fn graph(
        n: usize,
        edges: Vec<(usize, usize)>,
        labels: Vec<Option<u8>>,
        split: Vec<Split>,
    ) -> Graph {
        Graph::new(n, edges, DenseMatrix::zeros(n, 1), labels, split, None).unwrap()
    }

    fn set(model: &mut GnnParams, name: &str, rows: &[Vec<f64>]) {
        *model.params.value_mut(name) = DenseMatrix::from_rows(rows).unwrap();
    }

    #[test]
    fn edgeless_graph_with_identity_self_weight_passes_inputs_through() {
        let g = graph(3, vec![], vec![Some(0); 3], vec![Split::Train; 3]);
        let view = g.training_view();
        let arch = GnnArchitecture::new(Backbone::Gcn, 2, vec![2]);
        let mut model = GnnParams::init(arch, 1);
        *model.params.value_mut(&w_self(0)) = DenseMatrix::identity(2);
        let x0 =
            DenseMatrix::from_rows(&[vec![0.5, 1.0], vec![2.0, 0.0], vec![0.25, 3.0]]).unwrap();
        let fwd = model
            .forward(&x0, &neighbor_operator(Backbone::Gcn, &view))
            .unwrap();
        assert_eq!(fwd.embeddings, x0);
    }

    #[test]
    fn gin_two_node_path_hand_computed() {
        let g = graph(2, vec![(0, 1)], vec![Some(0); 2], vec![Split::Train; 2]);
        let view = g.training_view();
        let mut model = GnnParams::init(GnnArchitecture::new(Backbone::Gin, 1, vec![1]), 0);
        set(&mut model, &w_self(0), &[vec![2.0]]);
        set(&mut model, &w_neigh(0), &[vec![3.0]]);
        let x0 = DenseMatrix::filled(2, 1, 1.0);
        let fwd = model
            .forward(&x0, &neighbor_operator(Backbone::Gin, &view))
            .unwrap();
        assert_eq!(fwd.embeddings.data(), &[5.0, 5.0]);
    }

    #[test]
    fn utility_gradient_matches_finite_differences() {
        let g = graph(
            4,
            vec![(0, 1), (1, 2), (2, 3)],
            vec![Some(1), Some(0), Some(1), None],
            vec![Split::Train, Split::Train, Split::Train, Split::Test],
        );
        let view = g.training_view();
        for backbone in [Backbone::Gcn, Backbone::Gin] {
            let arch = GnnArchitecture::new(backbone, 3, vec![4, 3]);
            let model = GnnParams::init(arch.clone(), 5);
            let x0 = DenseMatrix::from_rows(&[
                vec![0.3, -0.2, 0.9],
                vec![1.1, 0.4, -0.5],
                vec![-0.7, 0.8, 0.2],
                vec![0.05, -1.2, 0.6],
            ])
            .unwrap();
            let nb = neighbor_operator(backbone, &view);
            let labels = view.dense_labels();
            let mask = view.labeled_nodes();
            let program = UtilityProgram {
                arch: &arch,
                x0: &x0,
                neighbors: &nb,
                labels: &labels,
                mask: &mask,
            };
            let report = grad_check(&program, &model.params, 1e-5, 1e-4, 0).unwrap();
            assert!(report.passed, "{backbone:?}: {report:?}");
        }
    }

    #[test]
    fn pseudo_labels_follow_contract() {
        let g = graph(
            3,
            vec![],
            vec![Some(0), None, None],
            vec![Split::Train, Split::Test, Split::Val],
        );
        let pl = pseudo_labels(&g.training_view(), &[0.9, 0.7, 0.5]);
        assert_eq!(pl, vec![0, 1, 1]);
    }

    #[test]
    fn zero_epochs_returns_untrained_init() {
        let g = graph(
            2,
            vec![(0, 1)],
            vec![Some(0), Some(1)],
            vec![Split::Train; 2],
        );
        let view = g.training_view();
        let x0 = DenseMatrix::filled(2, 1, 1.0);
        let arch = GnnArchitecture::new(Backbone::Gcn, 1, vec![4]);
        let m = pretrain_classifier(&view, &x0, arch.clone(), 9, 0, OptimizerConfig::default())
            .unwrap();
        assert!(!m.trained);
        assert_eq!(m, GnnParams::init(arch, 9));
    }

    #[test]
    fn no_labeled_nodes_is_an_error() {
        let g = graph(2, vec![], vec![None, None], vec![Split::Train; 2]);
        let arch = GnnArchitecture::new(Backbone::Gcn, 1, vec![4]);
        let err = pretrain_classifier(
            &g.training_view(),
            &DenseMatrix::zeros(2, 1),
            arch,
            0,
            10,
            OptimizerConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoLabeledNodes));
    }
}
