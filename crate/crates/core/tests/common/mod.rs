//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use fairwos::counterfactual::{find_counterfactuals, CfQuery};
use fairwos::fairness::{CounterfactualTargets, FairnessProgram, LambdaVec};
use fairwos::gnn::{neighbor_operator, pseudo_labels, Backbone, GnnArchitecture, GnnParams};
use fairwos::graph::{generate_synthetic, SyntheticSpec};
use fairwos::nn::ParameterSet;
use fairwos::pseudo::{extract_pseudo_attrs, EncoderParams};
use fairwos::{DenseMatrix, Graph, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Euclidean projection onto the simplex by Dykstra's alternating projections
/// between the hyperplane `Σx = 1` and the orthant `x ≥ 0`.
pub fn project_simplex_iterative(y: &[f64]) -> Vec<f64> {
    let m = y.len() as f64;
    let mut x = y.to_vec();
    let mut p = vec![0.0; y.len()];
    let mut q = vec![0.0; y.len()];
    for _ in 0..10_000 {
        let prev = x.clone();
        let u: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let shift = (u.iter().sum::<f64>() - 1.0) / m;
        let h: Vec<f64> = u.iter().map(|v| v - shift).collect();
        p = u.iter().zip(&h).map(|(a, b)| a - b).collect();
        let w: Vec<f64> = h.iter().zip(&q).map(|(a, b)| a + b).collect();
        x = w.iter().map(|v| v.max(0.0)).collect();
        q = w.iter().zip(&x).map(|(a, b)| a - b).collect();
        let moved = x
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < 1e-15 {
            break;
        }
    }
    x
}

/// Projected gradient descent on `c·λ + ‖λ‖²`.
pub fn pgd_oracle(costs: &[f64]) -> Vec<f64> {
    let step = 0.25;
    let mut lambda = vec![1.0 / costs.len() as f64; costs.len()];
    for _ in 0..500 {
        let y: Vec<f64> = lambda
            .iter()
            .zip(costs)
            .map(|(l, c)| l - step * (c + 2.0 * l))
            .collect();
        let next = project_simplex_iterative(&y);
        let moved = next
            .iter()
            .zip(&lambda)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        lambda = next;
        if moved < 1e-15 {
            break;
        }
    }
    lambda
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub struct Instance {
    pub h: DenseMatrix,
    pub bits: Vec<u8>,
    pub cols: usize,
    pub active: Vec<bool>,
    pub labels: Vec<u8>,
    pub k: usize,
    pub pool: Vec<usize>,
}

impl Instance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..=200);
        let dim = rng.random_range(1..=6);
        let cols = rng.random_range(1..=8);
        // Coarse grid values so exact distance ties actually occur.
        let data = (0..n * dim)
            .map(|_| f64::from(rng.random_range(-4i32..=4)) * 0.5)
            .collect();
        Self {
            h: DenseMatrix::from_vec(n, dim, data).unwrap(),
            bits: (0..n * cols).map(|_| rng.random_range(0..=1)).collect(),
            cols,
            active: (0..cols).map(|_| rng.random_bool(0.85)).collect(),
            labels: (0..n).map(|_| rng.random_range(0..=1)).collect(),
            k: rng.random_range(1..=5),
            pool: (0..n).filter(|_| rng.random_bool(0.6)).collect(),
        }
    }

    pub fn query(&self, k: usize) -> CfQuery<'_> {
        CfQuery {
            embeddings: &self.h,
            bits: &self.bits,
            num_columns: self.cols,
            active: &self.active,
            labels: &self.labels,
            k,
            pool: &self.pool,
        }
    }
}

pub struct Fixture {
    pub graph: Graph,
    pub encoder: EncoderParams,
}

pub fn fixture(seed: u64, num_nodes: usize) -> Fixture {
    let graph = generate_synthetic(&SyntheticSpec {
        num_nodes,
        intra_group_edge_prob: 0.2,
        inter_group_edge_prob: 0.05,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let encoder = EncoderParams::init(graph.features().cols(), 4, seed);
    Fixture { graph, encoder }
}

/// Runs `f` on a fine-tuning program built around a freshly initialized classifier.
pub fn with_program<R>(
    fx: &Fixture,
    backbone: Backbone,
    k: usize,
    alpha: f64,
    seed: u64,
    f: impl FnOnce(&FairnessProgram<'_>, ParameterSet) -> R,
) -> R {
    let view = fx.graph.training_view();
    let attrs = extract_pseudo_attrs(&view, &fx.encoder).unwrap();
    let arch = GnnArchitecture::new(backbone, attrs.num_columns(), vec![6]);
    let model = GnnParams::init(arch.clone(), seed);
    let neighbors = neighbor_operator(backbone, &view);
    let fwd = model.forward(&attrs.values, &neighbors).unwrap();
    let train = view.nodes_in(Split::Train);
    let active = attrs.active_columns();
    let index = find_counterfactuals(&CfQuery {
        embeddings: &fwd.embeddings,
        bits: attrs.bits(),
        num_columns: attrs.num_columns(),
        active: &active,
        labels: &pseudo_labels(&view, &fwd.probabilities()),
        k,
        pool: &train,
    });
    let targets = CounterfactualTargets::new(fwd.embeddings.clone(), index).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = active
        .iter()
        .map(|&a| if a { rng.random_range(0.1..1.0) } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    let lambda = LambdaVec {
        weights: raw.iter().map(|w| w / total).collect(),
        active,
    };
    let labels = view.dense_labels();
    let labeled = view.labeled_nodes();
    let program = FairnessProgram {
        arch: &arch,
        x0: &attrs.values,
        neighbors: &neighbors,
        labels: &labels,
        labeled: &labeled,
        disparity_nodes: &train,
        targets: &targets,
        lambda: &lambda.weights,
        alpha,
    };
    // Move off the snapshot so the disparity term has a nonzero gradient.
    let mut params = model.params.clone();
    for name in params.names().map(str::to_owned).collect::<Vec<_>>() {
        for w in params.value_mut(&name).data_mut() {
            *w += rng.random_range(-0.1..0.1);
        }
    }
    f(&program, params)
}
