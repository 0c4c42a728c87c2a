//! Paired runs on the default synthetic graph. The ten-seed runs are shared
//! across tests through `default_runs`.

use std::sync::OnceLock;

use fairwos::experiment::{aggregate, run_seeds, SeedRun, Variant};
use fairwos::fairness::{finetune, pretrain, TrainConfig};
use fairwos::gnn::neighbor_operator;
use fairwos::graph::{generate_synthetic, SyntheticSpec};
use fairwos::metrics::FairnessEvaluator;
use fairwos::pseudo::{encoder_accuracy, pretrain_encoder};
use fairwos::{Graph, Split};

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

struct DefaultRuns {
    vanilla: Vec<SeedRun>,
    fairwos: Vec<SeedRun>,
    no_fairness: Vec<SeedRun>,
}

fn default_graph() -> &'static Graph {
    static GRAPH: OnceLock<Graph> = OnceLock::new();
    GRAPH.get_or_init(|| generate_synthetic(&SyntheticSpec::default()).unwrap())
}

fn default_runs() -> &'static DefaultRuns {
    static RUNS: OnceLock<DefaultRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let g = default_graph();
        let cfg = TrainConfig::default();
        DefaultRuns {
            vanilla: run_seeds(g, &cfg, Variant::Vanilla, &SEEDS).unwrap(),
            fairwos: run_seeds(g, &cfg, Variant::Fairwos, &SEEDS).unwrap(),
            no_fairness: run_seeds(g, &cfg, Variant::NoFairness, &SEEDS).unwrap(),
        }
    })
}

fn mean_dsp(runs: &[SeedRun]) -> f64 {
    let results: Vec<_> = runs.iter().map(|r| r.result.clone()).collect();
    aggregate(&results).dsp_mean.unwrap()
}

fn majority_rate(g: &Graph, split: Split) -> f64 {
    let nodes = g.training_view().labeled_in(split);
    let ones = nodes.iter().filter(|&&v| g.labels()[v] == Some(1)).count() as f64;
    let rate = ones / nodes.len() as f64;
    rate.max(1.0 - rate)
}

// With 250 test nodes the mean |ΔSP| of a group-blind predictor is already
// about 0.05, so this runs on a larger graph.
#[test]
fn unbiased_graph_gives_near_zero_vanilla_gap() {
    let g = generate_synthetic(&SyntheticSpec {
        num_nodes: 4000,
        label_bias: 0.0,
        intra_group_edge_prob: 0.002,
        inter_group_edge_prob: 0.002,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let runs = run_seeds(&g, &TrainConfig::default(), Variant::Vanilla, &SEEDS).unwrap();
    let dsp = mean_dsp(&runs);
    assert!(dsp < 0.05, "mean ΔSP {dsp}");
}

#[test]
fn strongly_biased_graph_gives_a_large_vanilla_gap() {
    let g = generate_synthetic(&SyntheticSpec {
        label_bias: 0.8,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let runs = run_seeds(&g, &TrainConfig::default(), Variant::Vanilla, &SEEDS).unwrap();
    let dsp = mean_dsp(&runs);
    assert!(dsp > 0.15, "mean ΔSP {dsp}");
}

#[test]
fn vanilla_beats_the_majority_rate_on_validation() {
    let g = default_graph();
    let evaluator = FairnessEvaluator::new(g);
    let majority = majority_rate(g, Split::Val);
    for run in &default_runs().vanilla {
        let preds = run.model.predict(&g.training_view()).unwrap();
        let acc = evaluator.evaluate(&preds, Split::Val).unwrap().accuracy;
        assert!(
            acc >= majority + 0.05,
            "seed {}: {acc} vs majority {majority}",
            run.result.seed
        );
    }
}

#[test]
fn encoder_beats_the_majority_rate_on_validation() {
    let g = default_graph();
    let view = g.training_view();
    let cfg = TrainConfig::default();
    let enc =
        pretrain_encoder(&view, 16, cfg.pretrain_epochs, 0, cfg.pretrain_optimizer()).unwrap();
    let acc = encoder_accuracy(&view, &enc, Split::Val).unwrap();
    assert!(acc > majority_rate(g, Split::Val), "{acc}");
}

#[test]
fn fairwos_lowers_the_gap_on_most_seeds() {
    let runs = default_runs();
    let better = runs
        .fairwos
        .iter()
        .zip(&runs.vanilla)
        .filter(|(f, v)| f.result.dsp.unwrap() < v.result.dsp.unwrap())
        .count();
    assert!(better >= 8, "Fairwos below vanilla on {better} of 10 seeds");
}

#[test]
fn disabling_fairness_raises_the_gap() {
    let runs = default_runs();
    let on = mean_dsp(&runs.fairwos);
    let off = mean_dsp(&runs.no_fairness);
    assert!(off > on, "ΔSP with fairness {on}, without {off}");
}

#[test]
fn traces_keep_lambda_on_the_simplex() {
    for run in &default_runs().fairwos {
        for rec in &run.trace.records {
            let sum: f64 = rec.lambda.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9 && rec.lambda.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn fine_tuning_objective_mostly_decreases() {
    let (mut down, mut total) = (0, 0);
    for run in &default_runs().fairwos {
        for rec in &run.trace.records {
            total += 1;
            if rec.objective_after < rec.objective_before {
                down += 1;
            }
        }
    }
    assert!(
        down as f64 >= 0.9 * total as f64,
        "{down} of {total} steps decreased the objective"
    );
}

#[test]
fn utility_only_fine_tuning_preserves_accuracy() {
    let g = default_graph();
    let view = g.training_view();
    let evaluator = FairnessEvaluator::new(g);
    let (mut before, mut after) = (0.0, 0.0);
    for seed in SEEDS {
        let cfg = TrainConfig {
            alpha: 0.0,
            seed,
            ..TrainConfig::default()
        };
        let pre = pretrain(&view, &cfg).unwrap();
        let neighbors = neighbor_operator(cfg.backbone, &view);
        let preds = pre
            .classifier
            .forward(&pre.x0, &neighbors)
            .unwrap()
            .predictions();
        before += evaluator.evaluate(&preds, Split::Test).unwrap().accuracy;
        let (model, _) = finetune(&view, &cfg, &pre, &evaluator).unwrap();
        after += evaluator
            .evaluate(&model.predict(&view).unwrap(), Split::Test)
            .unwrap()
            .accuracy;
    }
    let shift = (after - before) / SEEDS.len() as f64;
    assert!(shift.abs() <= 0.01, "mean accuracy shift {shift}");
}
