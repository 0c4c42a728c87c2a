//! The fairness objective, the simplex weight solver and the alternating trainer.

pub mod lambda;
pub mod objective;
pub mod trainer;

use serde::{Deserialize, Serialize};

pub use lambda::{kkt_audit, solve_lambda, solve_simplex_weights, KktAudit, LambdaVec};
pub use objective::{
    disparity, disparity_vec, total_objective, CounterfactualTargets, DisparityVec, FairnessEval,
    FairnessProgram,
};
pub use trainer::{
    finetune, pretrain, train_fairwos, train_vanilla, EpochRecord, FairwosModel, Pretrained,
    TrainingTrace,
};

use crate::error::{Error, Result};
use crate::gnn::{Backbone, GnnArchitecture};
use crate::nn::{OptimizerConfig, OptimizerKind};

/// α grid used for model selection.
pub const ALPHA_SELECTION_GRID: [f64; 5] = [0.01, 0.05, 1.0, 2.0, 5.0];
/// α grid of the sensitivity study.
pub const ALPHA_SENSITIVITY_GRID: [f64; 4] = [0.01, 0.02, 0.04, 0.08];
pub const K_SELECTION_GRID: [usize; 5] = [1, 2, 5, 10, 20];
pub const K_SENSITIVITY_GRID: [usize; 4] = [1, 2, 3, 4];
pub const ENCODER_DIM_GRID: [usize; 4] = [2, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the counterfactual disparity term.
    pub alpha: f64,
    /// Counterfactuals per node and column.
    pub k: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub finetune_learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Fine-tuning stops after this many epochs without a better selection score.
    pub patience: usize,
    pub seed: u64,
    pub backbone: Backbone,
    pub encoder_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Feed raw features to the classifier instead of encoder outputs.
    pub disable_encoder: bool,
    /// Treat α as 0.
    pub disable_fairness: bool,
    /// Keep λ uniform instead of re-solving it each epoch.
    pub disable_weight_update: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            k: 1,
            pretrain_epochs: 1000,
            finetune_epochs: 15,
            learning_rate: 1e-3,
            finetune_learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            patience: 5,
            seed: 0,
            backbone: Backbone::Gcn,
            encoder_dim: 16,
            hidden_dims: vec![16],
            disable_encoder: false,
            disable_fairness: false,
            disable_weight_update: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.encoder_dim == 0 {
            return Err(Error::Config("encoder_dim must be at least 1".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config(
                "hidden_dims must be non-empty and positive".into(),
            ));
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("finetune_learning_rate", self.finetune_learning_rate),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    /// α actually applied, after the fairness ablation.
    pub fn effective_alpha(&self) -> f64 {
        if self.disable_fairness {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn pretrain_optimizer(&self) -> OptimizerConfig {
        optimizer(self.optimizer, self.learning_rate)
    }

    pub fn finetune_optimizer(&self) -> OptimizerConfig {
        optimizer(self.optimizer, self.finetune_learning_rate)
    }

    pub fn architecture(&self, input_dim: usize) -> GnnArchitecture {
        GnnArchitecture::new(self.backbone, input_dim, self.hidden_dims.clone())
    }
}

fn optimizer(kind: OptimizerKind, lr: f64) -> OptimizerConfig {
    match kind {
        OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
        OptimizerKind::Adam => OptimizerConfig::adam(lr),
    }
}

/// SplitMix64 step, used to derive independent sub-seeds from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
