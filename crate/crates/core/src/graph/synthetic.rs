//! Synthetic attributed graphs with a planted binary sensitive attribute.
//!
//! The sensitive bit `s` is balanced across nodes and influences the graph
//! three ways: edges are denser inside `s`-groups, the first
//! `sensitive_leak_dims` feature columns are shifted by `±leak_shift`, and the
//! label probability mixes a latent signal with `label_bias · s`:
//!
//! ```text
//! P(y = 1) = (1 - label_bias) · sigmoid(signal_scale · z) + label_bias · s
//! ```
//!
//! The remaining feature columns observe `z` through Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Graph, Split};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nn::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub intra_group_edge_prob: f64,
    pub inter_group_edge_prob: f64,
    pub num_features: usize,
    pub sensitive_leak_dims: usize,
    pub label_bias: f64,
    pub seed: u64,
    /// Mean offset of leak columns between the two sensitive groups is `2 · leak_shift`.
    pub leak_shift: f64,
    /// Loading of the latent signal on each non-leak column.
    pub signal_loading: f64,
    /// Slope of the latent signal inside the label sigmoid.
    pub signal_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            intra_group_edge_prob: 0.012,
            inter_group_edge_prob: 0.002,
            num_features: 12,
            sensitive_leak_dims: 4,
            label_bias: 0.2,
            seed: 2024,
            leak_shift: 1.0,
            signal_loading: 0.3,
            signal_scale: 3.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("intra_group_edge_prob", self.intra_group_edge_prob)?;
        prob("inter_group_edge_prob", self.inter_group_edge_prob)?;
        prob("label_bias", self.label_bias)?;
        if self.sensitive_leak_dims > self.num_features {
            return Err(Error::Config(format!(
                "sensitive_leak_dims ({}) exceeds num_features ({})",
                self.sensitive_leak_dims, self.num_features
            )));
        }
        for (name, v) in [
            ("leak_shift", self.leak_shift),
            ("signal_loading", self.signal_loading),
            ("signal_scale", self.signal_scale),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let n = spec.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut sensitive: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    sensitive.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if sensitive[i] == sensitive[j] {
                spec.intra_group_edge_prob
            } else {
                spec.inter_group_edge_prob
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let latent: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = DenseMatrix::zeros(n, spec.num_features);
    for v in 0..n {
        let sign = if sensitive[v] == 1 { 1.0 } else { -1.0 };
        for c in 0..spec.num_features {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let mean = if c < spec.sensitive_leak_dims {
                sign * spec.leak_shift
            } else {
                spec.signal_loading * latent[v]
            };
            features.set(v, c, mean + noise);
        }
    }

    let labels: Vec<Option<u8>> = (0..n)
        .map(|v| {
            let p = (1.0 - spec.label_bias) * sigmoid(spec.signal_scale * latent[v])
                + spec.label_bias * f64::from(sensitive[v]);
            Some(u8::from(rng.random::<f64>() < p))
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = n / 2;
    let n_val = n / 4;
    let mut split = vec![Split::Test; n];
    for (rank, &v) in order.iter().enumerate() {
        split[v] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    Graph::new(
        n,
        edges,
        features,
        labels,
        split,
        Some(sensitive.into_iter().map(Some).collect()),
    )
}
