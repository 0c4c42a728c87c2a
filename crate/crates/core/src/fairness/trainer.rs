//! Pretraining and the alternating θ / λ fine-tuning loop.

use serde::{Deserialize, Serialize};

use crate::counterfactual::{find_counterfactuals, CfQuery};
use crate::error::{Error, Result};
use crate::fairness::lambda::{solve_lambda, LambdaVec};
use crate::fairness::objective::{
    disparity_vec, CounterfactualTargets, DisparityVec, FairnessProgram,
};
use crate::fairness::{derive_seed, TrainConfig};
use crate::gnn::{neighbor_operator, pretrain_classifier, pseudo_labels, GnnForward, GnnParams};
use crate::graph::{Split, TrainingGraph};
use crate::matrix::DenseMatrix;
use crate::metrics::ValidationScorer;
use crate::nn::Optimizer;
use crate::pseudo::{extract_pseudo_attrs, pretrain_encoder, EncoderParams, PseudoAttrs};

const ENCODER_STREAM: u64 = 1;
const CLASSIFIER_STREAM: u64 = 2;
const VANILLA_STREAM: u64 = 3;

/// Everything fine-tuning starts from. Independent of α, K and the
/// fairness/weight-update ablations, so sweeps can share it.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub encoder: Option<EncoderParams>,
    /// Classifier input: encoder output, or standardized features without an encoder.
    pub x0: DenseMatrix,
    pub attrs: PseudoAttrs,
    pub classifier: GnnParams,
}

/// A trained classifier plus whatever is needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairwosModel {
    pub encoder: Option<EncoderParams>,
    pub classifier: GnnParams,
    pub lambda: Option<LambdaVec>,
    /// Fine-tuning epoch the parameters were taken from (0 = pretrained).
    pub selected_epoch: usize,
}

impl FairwosModel {
    pub fn inputs(&self, graph: &TrainingGraph<'_>) -> Result<DenseMatrix> {
        match &self.encoder {
            Some(enc) => enc.encode(graph),
            None => Ok(graph.features().clone()),
        }
    }

    pub fn forward(&self, graph: &TrainingGraph<'_>) -> Result<GnnForward> {
        let x0 = self.inputs(graph)?;
        let neighbors = neighbor_operator(self.classifier.arch.backbone, graph);
        self.classifier.forward(&x0, &neighbors)
    }

    pub fn predict(&self, graph: &TrainingGraph<'_>) -> Result<Vec<u8>> {
        Ok(self.forward(graph)?.predictions())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_utility: f64,
    /// Per-column disparity after the θ step, against this epoch's counterfactuals.
    pub disparity: Vec<f64>,
    /// λ in force after this epoch.
    pub lambda: Vec<f64>,
    pub grad_norm: f64,
    /// Full objective before and after the θ step, same snapshot and λ.
    pub objective_before: f64,
    pub objective_after: f64,
    pub shortfalls: usize,
    pub val_acc: f64,
    pub val_dsp: Option<f64>,
    pub val_deo: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<EpochRecord>,
}

impl TrainingTrace {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }
}

/// Encoder pretraining, pseudo-attribute extraction and classifier pretraining.
pub fn pretrain(graph: &TrainingGraph<'_>, cfg: &TrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    let train_rows = graph.nodes_in(Split::Train);
    let (encoder, x0) = if cfg.disable_encoder {
        (None, graph.features().clone())
    } else {
        let enc = pretrain_encoder(
            graph,
            cfg.encoder_dim,
            cfg.pretrain_epochs,
            derive_seed(cfg.seed, ENCODER_STREAM),
            cfg.pretrain_optimizer(),
        )?;
        let attrs = extract_pseudo_attrs(graph, &enc)?;
        (Some(enc), attrs.values)
    };
    let attrs = PseudoAttrs::from_values(x0.clone(), &train_rows)?;
    let classifier = pretrain_classifier(
        graph,
        &x0,
        cfg.architecture(x0.cols()),
        derive_seed(cfg.seed, CLASSIFIER_STREAM),
        cfg.pretrain_epochs,
        cfg.pretrain_optimizer(),
    )?;
    Ok(Pretrained {
        encoder,
        x0,
        attrs,
        classifier,
    })
}

/// Alternates θ steps on `ℒ_U + α Σ λᵢ 𝒟ᵢ` with closed-form λ updates,
/// rebuilding counterfactuals from the current embeddings every epoch.
/// The pretrained state competes for selection as epoch 0.
pub fn finetune(
    graph: &TrainingGraph<'_>,
    cfg: &TrainConfig,
    pre: &Pretrained,
    scorer: &dyn ValidationScorer,
) -> Result<(FairwosModel, TrainingTrace)> {
    cfg.validate()?;
    let arch = pre.classifier.arch.clone();
    let neighbors = neighbor_operator(arch.backbone, graph);
    let labels = graph.dense_labels();
    let labeled = graph.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let train_nodes = graph.nodes_in(Split::Train);
    let attr_active = pre.attrs.active_columns();
    let alpha = cfg.effective_alpha();
    let mut lambda = LambdaVec::uniform(&attr_active)?;

    let mut params = pre.classifier.params.clone();
    let mut opt = Optimizer::new(cfg.finetune_optimizer());
    let mut trace = TrainingTrace::default();

    let initial = pre.classifier.forward(&pre.x0, &neighbors)?;
    let mut best_score = scorer.score(&initial.predictions()).composite();
    let mut best = (params.clone(), lambda.clone(), 0);
    let mut since_best = 0;
    let mut current = initial;

    for epoch in 1..=cfg.finetune_epochs {
        let pl = pseudo_labels(graph, &current.probabilities());
        let index = find_counterfactuals(&CfQuery {
            embeddings: &current.embeddings,
            bits: pre.attrs.bits(),
            num_columns: pre.attrs.num_columns(),
            active: &attr_active,
            labels: &pl,
            k: cfg.k,
            pool: &train_nodes,
        });
        let shortfalls = index.shortfall_count();
        let targets = CounterfactualTargets::new(current.embeddings.clone(), index)?;
        let program = FairnessProgram {
            arch: &arch,
            x0: &pre.x0,
            neighbors: &neighbors,
            labels: &labels,
            labeled: &labeled,
            disparity_nodes: &train_nodes,
            targets: &targets,
            lambda: &lambda.weights,
            alpha,
        };
        let before = program.evaluate_with_grad(&mut params)?;
        let grad_norm = params.grad_norm();
        opt.step(&mut params)?;
        let after = program.evaluate(&params)?;
        let d: DisparityVec = disparity_vec(
            &after.forward.embeddings,
            &targets,
            &attr_active,
            &train_nodes,
        );
        let objective_before = before.total + lambda.norm_sq();
        let objective_after = after.total + lambda.norm_sq();
        if !cfg.disable_weight_update && d.active.iter().any(|&a| a) {
            lambda = solve_lambda(&d, alpha)?;
        }

        let score = scorer.score(&after.forward.predictions());
        let composite = score.composite();
        let selected = composite > best_score;
        if selected {
            best_score = composite;
            best = (params.clone(), lambda.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        trace.records.push(EpochRecord {
            epoch,
            loss_utility: after.loss_utility,
            disparity: d.values,
            lambda: lambda.weights.clone(),
            grad_norm,
            objective_before,
            objective_after,
            shortfalls,
            val_acc: score.accuracy,
            val_dsp: score.delta_sp,
            val_deo: score.delta_eo,
            selected,
        });
        current = after.forward;
        if since_best >= cfg.patience {
            break;
        }
    }

    let (params, lambda, selected_epoch) = best;
    Ok((
        FairwosModel {
            encoder: pre.encoder.clone(),
            classifier: GnnParams {
                params,
                trained: pre.classifier.trained || selected_epoch > 0,
                ..pre.classifier.clone()
            },
            lambda: Some(lambda),
            selected_epoch,
        },
        trace,
    ))
}

/// The full pipeline: pretraining followed by fine-tuning.
pub fn train_fairwos(
    graph: &TrainingGraph<'_>,
    cfg: &TrainConfig,
    scorer: &dyn ValidationScorer,
) -> Result<(FairwosModel, TrainingTrace)> {
    let pre = pretrain(graph, cfg)?;
    finetune(graph, cfg, &pre, scorer)
}

/// Backbone classifier on standardized features, utility loss only,
/// selected by validation accuracy.
pub fn train_vanilla(graph: &TrainingGraph<'_>, cfg: &TrainConfig) -> Result<FairwosModel> {
    cfg.validate()?;
    let x0 = graph.features();
    let classifier = pretrain_classifier(
        graph,
        x0,
        cfg.architecture(x0.cols()),
        derive_seed(cfg.seed, VANILLA_STREAM),
        cfg.pretrain_epochs,
        cfg.pretrain_optimizer(),
    )?;
    Ok(FairwosModel {
        encoder: None,
        classifier,
        lambda: None,
        selected_epoch: 0,
    })
}
