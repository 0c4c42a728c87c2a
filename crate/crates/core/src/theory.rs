//! Empirical checks of the counterfactual embedding bound and the
//! gradient-descent convergence bound.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{find_counterfactuals, CfQuery};
use crate::error::{Error, Result};
use crate::fairness::{
    CounterfactualTargets, FairnessProgram, FairwosModel, LambdaVec, TrainingTrace,
};
use crate::gnn::{neighbor_operator, pseudo_labels, GnnParams};
use crate::graph::{SparseMatrix, Split, TrainingGraph};
use crate::matrix::DenseMatrix;
use crate::nn::ops::apply_activation;
use crate::nn::{DifferentiableProgram, ParameterSet};
use crate::pseudo::PseudoAttrs;

/// Slack added to every bound before comparing.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    One,
    Two,
    Inf,
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Self::One),
            "2" | "two" => Ok(Self::Two),
            "inf" => Ok(Self::Inf),
            other => Err(Error::Config(format!("unknown norm order {other:?}"))),
        }
    }
}

pub fn vector_norm(v: &[f64], p: NormOrder) -> f64 {
    match p {
        NormOrder::One => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
    }
}

/// Induced norm of the map `x ↦ x·W` on row vectors.
pub fn operator_norm(w: &DenseMatrix, p: NormOrder) -> f64 {
    let (rows, cols) = w.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    match p {
        // ‖xW‖₁ is bounded by the largest absolute row sum of W.
        NormOrder::One => (0..rows)
            .map(|r| w.row(r).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormOrder::Two => DMatrix::from_row_slice(rows, cols, w.data())
            .singular_values()
            .iter()
            .fold(0.0, |m, &s| m.max(s)),
        NormOrder::Inf => (0..cols)
            .map(|c| (0..rows).map(|r| w.get(r, c).abs()).sum::<f64>())
            .fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTrial {
    pub node: usize,
    pub column: usize,
    pub observed: f64,
    pub bound: f64,
    /// `bound − observed`
    pub margin: f64,
    pub passed: bool,
}

impl BoundTrial {
    fn new(node: usize, column: usize, observed: f64, bound: f64) -> Self {
        Self {
            node,
            column,
            observed,
            bound,
            margin: bound - observed,
            passed: observed <= bound + BOUND_SLACK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    AssumptionViolated,
    /// Reported without a verdict (non-stationary objective).
    Informational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub name: String,
    pub trials: Vec<BoundTrial>,
    pub pass_rate: f64,
    pub verdict: Verdict,
    pub detail: Option<String>,
}

impl BoundCheckReport {
    fn from_trials(name: &str, trials: Vec<BoundTrial>) -> Self {
        let passed = trials.iter().filter(|t| t.passed).count();
        let pass_rate = if trials.is_empty() {
            1.0
        } else {
            passed as f64 / trials.len() as f64
        };
        Self {
            name: name.into(),
            verdict: if passed == trials.len() {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            trials,
            pass_rate,
            detail: None,
        }
    }

    /// Hard failure: anything but `Pass` or `Informational`.
    pub fn is_failure(&self) -> bool {
        matches!(self.verdict, Verdict::Fail | Verdict::AssumptionViolated)
    }
}

/// `∏ₖ ‖W_selfᵏ‖_p`
pub fn embedding_bound(model: &GnnParams, p: NormOrder) -> f64 {
    (0..model.num_layers())
        .map(|k| operator_norm(model.w_self(k), p))
        .product()
}

/// `‖z̃ᵤ − zᵤ‖_p` at the last layer after adding `delta` to `x0[u][t]`, with
/// every other node's embeddings at every layer held at their original values.
pub fn counterfactual_gap(
    model: &GnnParams,
    x0: &DenseMatrix,
    neighbors: &SparseMatrix,
    node: usize,
    column: usize,
    delta: f64,
    p: NormOrder,
) -> Result<f64> {
    let layers = layer_inputs(model, x0, neighbors)?;
    let mut z = x0.row(node).to_vec();
    let mut zt = z.clone();
    zt[column] += delta;
    for (k, h) in layers.iter().enumerate() {
        let neigh: Vec<f64> = neighbors
            .row(node)
            .fold(vec![0.0; h.cols()], |mut acc, (j, a)| {
                for (s, &x) in acc.iter_mut().zip(h.row(j)) {
                    *s += a * x;
                }
                acc
            });
        let step = |input: &[f64]| -> Result<Vec<f64>> {
            let row = DenseMatrix::from_vec(1, input.len(), input.to_vec())?;
            let agg = DenseMatrix::from_vec(1, neigh.len(), neigh.clone())?;
            let mut pre = row.matmul(model.w_self(k))?;
            pre.add_assign(&agg.matmul(model.w_neigh(k))?)?;
            pre.add_row_broadcast(model.layer_bias(k))?;
            Ok(apply_activation(&pre, model.arch.activation).into_vec())
        };
        z = step(&z)?;
        zt = step(&zt)?;
    }
    let diff: Vec<f64> = zt.iter().zip(&z).map(|(a, b)| a - b).collect();
    Ok(vector_norm(&diff, p))
}

fn layer_inputs(
    model: &GnnParams,
    x0: &DenseMatrix,
    neighbors: &SparseMatrix,
) -> Result<Vec<DenseMatrix>> {
    let mut out = Vec::with_capacity(model.num_layers());
    let mut h = x0.clone();
    for k in 0..model.num_layers() {
        let agg = neighbors.matmul(&h)?;
        let mut z = h.matmul(model.w_self(k))?;
        z.add_assign(&agg.matmul(model.w_neigh(k))?)?;
        z.add_row_broadcast(model.layer_bias(k))?;
        let next = apply_activation(&z, model.arch.activation);
        out.push(h);
        h = next;
    }
    Ok(out)
}

/// Random unit single-column perturbations; each trial compares the change
/// in the perturbed node's final embedding against `∏ₖ ‖W_selfᵏ‖_p`.
pub fn check_counterfactual_bound(
    model: &GnnParams,
    x0: &DenseMatrix,
    neighbors: &SparseMatrix,
    trials: usize,
    p: NormOrder,
    seed: u64,
) -> Result<BoundCheckReport> {
    if x0.rows() == 0 || x0.cols() == 0 {
        return Err(Error::Config(
            "bound check needs at least one node and column".into(),
        ));
    }
    let bound = embedding_bound(model, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let node = rng.random_range(0..x0.rows());
        let column = rng.random_range(0..x0.cols());
        let delta = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let observed = counterfactual_gap(model, x0, neighbors, node, column, delta, p)?;
        out.push(BoundTrial::new(node, column, observed, bound));
    }
    let mut report = BoundCheckReport::from_trials("counterfactual embedding bound", out);
    report.detail = Some(format!("p = {p:?}, bound = {bound}"));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdStep {
    pub loss: f64,
    pub grad_norm: f64,
    /// `‖θᵏ⁺¹ − θᵏ‖`
    pub step_norm: f64,
    /// `‖∇ℒ(θᵏ⁺¹) − ∇ℒ(θᵏ)‖`
    pub grad_delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdTrace {
    pub lr: f64,
    pub steps: Vec<GdStep>,
    /// Loss at the iterate after the last step.
    pub final_loss: f64,
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Plain full-batch gradient descent, recording what the convergence check needs.
pub fn gradient_descent_trace<P: DifferentiableProgram + ?Sized>(
    program: &P,
    params: &mut ParameterSet,
    lr: f64,
    steps: usize,
) -> Result<GdTrace> {
    let mut loss = program.loss_and_grad(params)?;
    let mut grads = params.flat_grads();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let before = params.flat_values();
        for (_, value, grad) in params.entries_mut() {
            for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *v -= lr * g;
            }
        }
        let after = params.flat_values();
        let next_loss = program.loss_and_grad(params)?;
        let next_grads = params.flat_grads();
        out.push(GdStep {
            loss,
            grad_norm: grads.iter().map(|g| g * g).sum::<f64>().sqrt(),
            step_norm: l2_diff(&after, &before),
            grad_delta_norm: l2_diff(&next_grads, &grads),
        });
        loss = next_loss;
        grads = next_grads;
    }
    Ok(GdTrace {
        lr,
        steps: out,
        final_loss: loss,
    })
}

/// Largest secant ratio `‖Δ∇ℒ‖ / ‖Δθ‖` along the trace.
pub fn estimate_smoothness(trace: &GdTrace) -> f64 {
    trace
        .steps
        .iter()
        .filter(|s| s.step_norm > 0.0)
        .map(|s| s.grad_delta_norm / s.step_norm)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub lr: f64,
    pub l_estimate: f64,
    /// `lr − L·lr²/2`
    pub m: f64,
    /// One trial per horizon `T = 1..=len`.
    pub bound: BoundCheckReport,
    pub running_min_nonincreasing: bool,
}

impl ConvergenceReport {
    pub fn is_failure(&self) -> bool {
        self.bound.is_failure() || !self.running_min_nonincreasing
    }
}

/// For every horizon `T`, checks
/// `minₖ<T ‖∇ℒ(θᵏ)‖² ≤ (ℒ(θ⁰) − ℒ*) / (M·T)` with `ℒ*` the smallest recorded loss.
pub fn check_convergence_bound(
    trace: &GdTrace,
    lr: f64,
    l_estimate: f64,
) -> Result<ConvergenceReport> {
    if trace.steps.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let m = lr - l_estimate * lr * lr / 2.0;
    let losses: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| s.loss)
        .chain(std::iter::once(trace.final_loss))
        .collect();
    let l0 = losses[0];

    let mut running = Vec::with_capacity(trace.steps.len());
    let mut min_sq = f64::INFINITY;
    for s in &trace.steps {
        min_sq = min_sq.min(s.grad_norm * s.grad_norm);
        running.push(min_sq);
    }
    let running_min_nonincreasing = running.windows(2).all(|w| w[1] <= w[0]);

    let violated = l_estimate > 0.0 && lr >= 2.0 / l_estimate;
    let mut trials = Vec::with_capacity(trace.steps.len());
    for t in 1..=trace.steps.len() {
        let l_star = losses[..=t].iter().copied().fold(f64::INFINITY, f64::min);
        let bound = (l0 - l_star) / (m * t as f64);
        trials.push(BoundTrial::new(t, 0, running[t - 1], bound));
    }
    let mut bound = BoundCheckReport::from_trials("gradient norm convergence bound", trials);
    if violated {
        bound.verdict = Verdict::AssumptionViolated;
        bound.detail = Some(format!("lr {lr} ≥ 2/L = {}", 2.0 / l_estimate));
    }
    Ok(ConvergenceReport {
        lr,
        l_estimate,
        m,
        bound,
        running_min_nonincreasing,
    })
}

/// Convergence summary of a fine-tuning trace. The objective changes whenever
/// counterfactuals are rebuilt, so the bound is not checked here; only the
/// running minimum of `‖∇ℒ‖²` is, which holds by definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub epochs: usize,
    pub initial_objective: f64,
    pub best_objective: f64,
    /// `minₖ<T ‖∇ℒ(θᵏ)‖²` for `T = 1..=epochs`.
    pub running_min_grad_sq: Vec<f64>,
    pub running_min_nonincreasing: bool,
    pub verdict: Verdict,
}

pub fn summarize_trace(trace: &TrainingTrace) -> Result<TraceSummary> {
    let first = trace.records.first().ok_or(Error::EmptyTrace)?;
    let mut min_sq = f64::INFINITY;
    let running: Vec<f64> = trace
        .records
        .iter()
        .map(|r| {
            min_sq = min_sq.min(r.grad_norm * r.grad_norm);
            min_sq
        })
        .collect();
    Ok(TraceSummary {
        epochs: trace.records.len(),
        initial_objective: first.objective_before,
        best_objective: trace
            .records
            .iter()
            .map(|r| r.objective_after)
            .fold(first.objective_before, f64::min),
        running_min_nonincreasing: running.windows(2).all(|w| w[1] <= w[0]),
        running_min_grad_sq: running,
        verdict: Verdict::Informational,
    })
}

/// `θ²`, a single scalar parameter named `theta`.
pub struct Quadratic;

impl Quadratic {
    pub fn params(theta: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("theta", DenseMatrix::filled(1, 1, theta))
            .expect("fresh set");
        p
    }
}

impl DifferentiableProgram for Quadratic {
    fn loss(&self, params: &ParameterSet) -> Result<f64> {
        let t = params.value("theta").get(0, 0);
        Ok(t * t)
    }

    fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
        let t = params.value("theta").get(0, 0);
        params.set_grad("theta", DenseMatrix::filled(1, 1, 2.0 * t))?;
        Ok(t * t)
    }
}

/// Gradient descent on a trained model's fine-tuning objective with the
/// counterfactual snapshot and λ frozen at the model's state, then the
/// convergence check with the secant estimate of `L`.
pub fn frozen_fairwos_convergence(
    graph: &TrainingGraph<'_>,
    model: &FairwosModel,
    attrs: &PseudoAttrs,
    alpha: f64,
    k: usize,
    lr: f64,
    steps: usize,
) -> Result<(GdTrace, ConvergenceReport)> {
    let x0 = model.inputs(graph)?;
    let arch = model.classifier.arch.clone();
    let neighbors = neighbor_operator(arch.backbone, graph);
    let fwd = model.classifier.forward(&x0, &neighbors)?;
    let train_nodes = graph.nodes_in(Split::Train);
    let active = attrs.active_columns();
    let pl = pseudo_labels(graph, &fwd.probabilities());
    let index = find_counterfactuals(&CfQuery {
        embeddings: &fwd.embeddings,
        bits: attrs.bits(),
        num_columns: attrs.num_columns(),
        active: &active,
        labels: &pl,
        k,
        pool: &train_nodes,
    });
    let targets = CounterfactualTargets::new(fwd.embeddings.clone(), index)?;
    let lambda = match &model.lambda {
        Some(l) => l.clone(),
        None => LambdaVec::uniform(&active)?,
    };
    let labels = graph.dense_labels();
    let labeled = graph.labeled_nodes();
    let program = FairnessProgram {
        arch: &arch,
        x0: &x0,
        neighbors: &neighbors,
        labels: &labels,
        labeled: &labeled,
        disparity_nodes: &train_nodes,
        targets: &targets,
        lambda: &lambda.weights,
        alpha,
    };
    let mut params = model.classifier.params.clone();
    let trace = gradient_descent_trace(&program, &mut params, lr, steps)?;
    let l = estimate_smoothness(&trace);
    let report = check_convergence_bound(&trace, lr, l)?;
    Ok((trace, report))
}

/// [`frozen_fairwos_convergence`] starting at step `lr` and halving it while
/// the secant estimate says `lr ≥ 2/L`.
pub fn frozen_fairwos_convergence_stable(
    graph: &TrainingGraph<'_>,
    model: &FairwosModel,
    attrs: &PseudoAttrs,
    alpha: f64,
    k: usize,
    mut lr: f64,
    steps: usize,
) -> Result<(GdTrace, ConvergenceReport)> {
    loop {
        let out = frozen_fairwos_convergence(graph, model, attrs, alpha, k, lr, steps)?;
        if out.1.bound.verdict != Verdict::AssumptionViolated || lr <= 1e-6 {
            return Ok(out);
        }
        lr /= 2.0;
    }
}
