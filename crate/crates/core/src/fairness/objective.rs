//! Counterfactual disparity and the θ-objective of fine-tuning.

use serde::{Deserialize, Serialize};

use crate::counterfactual::{snapshot_fingerprint, CfIndex};
use crate::error::{Error, Result};
use crate::fairness::lambda::LambdaVec;
use crate::gnn::{backward_with, forward_with, GnnArchitecture, GnnForward};
use crate::graph::SparseMatrix;
use crate::matrix::{squared_distance, DenseMatrix};
use crate::nn::ops::binary_cross_entropy_logit_grad;
use crate::nn::{binary_cross_entropy, DifferentiableProgram, ParameterSet};

/// Per-column disparity `𝒟ᵢ`: mean over contributing nodes of the mean squared
/// distance to their available counterfactuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityVec {
    pub values: Vec<f64>,
    /// `false` for columns where no node had a counterfactual.
    pub active: Vec<bool>,
    /// Nodes contributing to each column's mean.
    pub contributing: Vec<usize>,
    /// Contributing nodes with fewer than `K` counterfactuals, per column.
    pub shortfalls: Vec<usize>,
}

impl DisparityVec {
    /// All columns active, no bookkeeping. Mostly for tests and direct solver use.
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            active: vec![true; n],
            contributing: vec![0; n],
            shortfalls: vec![0; n],
        }
    }
}

/// Embeddings frozen at counterfactual-search time together with the index
/// built from them. Counterfactual embeddings `h̄` are read from here and are
/// constants for differentiation.
#[derive(Debug, Clone)]
pub struct CounterfactualTargets {
    embeddings: DenseMatrix,
    index: CfIndex,
}

impl CounterfactualTargets {
    pub fn new(embeddings: DenseMatrix, index: CfIndex) -> Result<Self> {
        let found = snapshot_fingerprint(&embeddings);
        if found != index.snapshot_id {
            return Err(Error::Config(format!(
                "counterfactual index built from snapshot {:016x}, embeddings are {found:016x}",
                index.snapshot_id
            )));
        }
        Ok(Self { embeddings, index })
    }

    pub fn embeddings(&self) -> &DenseMatrix {
        &self.embeddings
    }

    pub fn index(&self) -> &CfIndex {
        &self.index
    }
}

fn column_disparity(
    h: &DenseMatrix,
    targets: &CounterfactualTargets,
    column: usize,
    nodes: &[usize],
) -> (f64, usize, usize) {
    let mut total = 0.0;
    let mut contributing = 0;
    let mut shortfalls = 0;
    for &v in nodes {
        let slot = targets.index.slot(v, column);
        if slot.is_empty() {
            continue;
        }
        let per_node = slot
            .iter()
            .map(|e| squared_distance(h.row(v), targets.embeddings.row(e.node)))
            .sum::<f64>()
            / slot.len() as f64;
        total += per_node;
        contributing += 1;
        shortfalls += usize::from(slot.len() < targets.index.k);
    }
    if contributing == 0 {
        (0.0, 0, 0)
    } else {
        (total / contributing as f64, contributing, shortfalls)
    }
}

/// `𝒟ᵢᴷ` for one column, with `h` the snapshot the index was built from.
/// Returns `None` when every slot of the column is empty among `nodes`.
pub fn disparity(
    h: &DenseMatrix,
    cf: &CfIndex,
    column: usize,
    nodes: &[usize],
) -> Result<Option<f64>> {
    let targets = CounterfactualTargets::new(h.clone(), cf.clone())?;
    let (value, contributing, _) = column_disparity(h, &targets, column, nodes);
    Ok((contributing > 0).then_some(value))
}

/// Disparities of current embeddings `h` against frozen targets, all columns.
/// Columns that are inactive in `attr_active` or have no counterfactuals are inactive.
pub fn disparity_vec(
    h: &DenseMatrix,
    targets: &CounterfactualTargets,
    attr_active: &[bool],
    nodes: &[usize],
) -> DisparityVec {
    let cols = targets.index.num_columns;
    let mut out = DisparityVec {
        values: vec![0.0; cols],
        active: vec![false; cols],
        contributing: vec![0; cols],
        shortfalls: vec![0; cols],
    };
    for c in 0..cols {
        if !attr_active[c] {
            continue;
        }
        let (value, contributing, shortfalls) = column_disparity(h, targets, c, nodes);
        out.values[c] = value;
        out.active[c] = contributing > 0;
        out.contributing[c] = contributing;
        out.shortfalls[c] = shortfalls;
    }
    out
}

/// `ℒ_U + α Σᵢ λᵢ 𝒟ᵢ + ‖λ‖²`
pub fn total_objective(loss_utility: f64, d: &DisparityVec, lambda: &LambdaVec, alpha: f64) -> f64 {
    let weighted: f64 = d
        .values
        .iter()
        .zip(&lambda.weights)
        .map(|(d, l)| d * l)
        .sum();
    loss_utility + alpha * weighted + lambda.norm_sq()
}

/// The θ-dependent part of the fine-tuning objective,
/// `ℒ_U(θ) + α Σᵢ λᵢ 𝒟ᵢ(θ)`, with λ and the counterfactual targets fixed.
pub struct FairnessProgram<'a> {
    pub arch: &'a GnnArchitecture,
    pub x0: &'a DenseMatrix,
    pub neighbors: &'a SparseMatrix,
    pub labels: &'a [u8],
    /// Labeled training nodes for the utility loss.
    pub labeled: &'a [usize],
    /// Nodes whose disparity is averaged (training split).
    pub disparity_nodes: &'a [usize],
    pub targets: &'a CounterfactualTargets,
    pub lambda: &'a [f64],
    pub alpha: f64,
}

/// Loss decomposition of one [`FairnessProgram`] evaluation.
#[derive(Debug, Clone)]
pub struct FairnessEval {
    pub loss_utility: f64,
    pub weighted_disparity: f64,
    pub total: f64,
    pub forward: GnnForward,
}

impl FairnessProgram<'_> {
    fn regularized(&self) -> bool {
        self.alpha != 0.0
    }

    pub fn evaluate(&self, params: &ParameterSet) -> Result<FairnessEval> {
        let forward = forward_with(self.arch, params, self.x0, self.neighbors)?;
        let loss_utility = binary_cross_entropy(&forward.probs, self.labels, self.labeled)?;
        let mut weighted_disparity = 0.0;
        if self.regularized() {
            for (c, &w) in self.lambda.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (d, _, _) =
                    column_disparity(&forward.embeddings, self.targets, c, self.disparity_nodes);
                weighted_disparity += w * d;
            }
        }
        Ok(FairnessEval {
            loss_utility,
            weighted_disparity,
            total: loss_utility + self.alpha * weighted_disparity,
            forward,
        })
    }

    /// `∂/∂h` of `α Σᵢ λᵢ 𝒟ᵢ` with the targets held constant.
    fn disparity_grad(&self, h: &DenseMatrix) -> DenseMatrix {
        let mut grad = DenseMatrix::zeros(h.rows(), h.cols());
        let index = &self.targets.index;
        for (c, &w) in self.lambda.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let contributing = self
                .disparity_nodes
                .iter()
                .filter(|&&v| !index.slot(v, c).is_empty())
                .count();
            if contributing == 0 {
                continue;
            }
            for &v in self.disparity_nodes {
                let slot = index.slot(v, c);
                if slot.is_empty() {
                    continue;
                }
                let scale = self.alpha * w * 2.0 / (contributing as f64 * slot.len() as f64);
                for e in slot {
                    let target = self.targets.embeddings.row(e.node);
                    for ((g, &hv), &t) in grad.row_mut(v).iter_mut().zip(h.row(v)).zip(target) {
                        *g += scale * (hv - t);
                    }
                }
            }
        }
        grad
    }

    /// Like [`DifferentiableProgram::loss_and_grad`] but returns the decomposition.
    pub fn evaluate_with_grad(&self, params: &mut ParameterSet) -> Result<FairnessEval> {
        let eval = self.evaluate(params)?;
        let d_logits =
            binary_cross_entropy_logit_grad(&eval.forward.probs, self.labels, self.labeled);
        let d_embed = self
            .regularized()
            .then(|| self.disparity_grad(&eval.forward.embeddings));
        backward_with(
            self.arch,
            params,
            &eval.forward,
            self.neighbors,
            &d_logits,
            d_embed.as_ref(),
        )?;
        Ok(eval)
    }
}

impl DifferentiableProgram for FairnessProgram<'_> {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        Ok(self.evaluate(params)?.total)
    }

    fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
        Ok(self.evaluate_with_grad(params)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterfactual::{find_counterfactuals, CfQuery};

    fn index_for(h: &DenseMatrix, bits: &[u8], labels: &[u8], k: usize) -> CfIndex {
        let pool: Vec<usize> = (0..h.rows()).collect();
        find_counterfactuals(&CfQuery {
            embeddings: h,
            bits,
            num_columns: 1,
            active: &[true],
            labels,
            k,
            pool: &pool,
        })
    }

    #[test]
    fn identical_representations_have_zero_disparity() {
        let h = DenseMatrix::filled(4, 2, 0.3);
        let cf = index_for(&h, &[0, 1, 0, 1], &[0; 4], 2);
        assert_eq!(disparity(&h, &cf, 0, &[0, 1, 2, 3]).unwrap(), Some(0.0));
    }

    #[test]
    fn one_node_one_counterfactual() {
        let h = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cf = index_for(&h, &[0, 1], &[0, 0], 1);
        assert_eq!(disparity(&h, &cf, 0, &[0]).unwrap(), Some(2.0));
    }

    #[test]
    fn per_node_disparities_are_averaged() {
        // node 0 → cf 1 at distance² 2, node 2 → cf 3 at distance² 4
        let h = DenseMatrix::from_rows(&[vec![0.0], vec![2f64.sqrt()], vec![10.0], vec![12.0]])
            .unwrap();
        let cf = index_for(&h, &[0, 1, 0, 1], &[0, 0, 1, 1], 1);
        let d = disparity(&h, &cf, 0, &[0, 2]).unwrap().unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_mismatch_rejected() {
        let h = DenseMatrix::filled(2, 1, 0.0);
        let cf = index_for(&h, &[0, 1], &[0, 0], 1);
        let other = DenseMatrix::filled(2, 1, 1.0);
        assert!(disparity(&other, &cf, 0, &[0]).is_err());
    }

    #[test]
    fn all_empty_column_is_inactive() {
        let h = DenseMatrix::filled(2, 1, 0.0);
        let cf = index_for(&h, &[0, 0], &[0, 0], 1);
        assert_eq!(disparity(&h, &cf, 0, &[0, 1]).unwrap(), None);
        let targets = CounterfactualTargets::new(h.clone(), cf).unwrap();
        let d = disparity_vec(&h, &targets, &[true], &[0, 1]);
        assert!(!d.active[0]);
        assert_eq!(d.values[0], 0.0);
    }

    #[test]
    fn total_objective_examples() {
        let lambda = LambdaVec::uniform(&[true; 4]).unwrap();
        let ones = DisparityVec::from_values(vec![1.0; 4]);
        assert!((total_objective(0.5, &ones, &lambda, 1.0) - 1.75).abs() < 1e-15);
        assert!((total_objective(0.5, &ones, &lambda, 0.0) - 0.75).abs() < 1e-15);
        let zeros = DisparityVec::from_values(vec![0.0; 4]);
        assert!((total_objective(0.5, &zeros, &lambda, 3.0) - 0.75).abs() < 1e-15);
    }
}
