use fairwos::experiment::{run_seed, Variant};
use fairwos::fairness::TrainConfig;
use fairwos::gnn::{neighbor_operator, Backbone};
use fairwos::graph::{generate_synthetic, SyntheticSpec};
use fairwos::theory::{
    check_counterfactual_bound, frozen_fairwos_convergence_stable, NormOrder, Verdict,
};
use fairwos::Graph;

fn small_graph() -> Graph {
    generate_synthetic(&SyntheticSpec {
        num_nodes: 300,
        intra_group_edge_prob: 0.04,
        inter_group_edge_prob: 0.007,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn quick_config(backbone: Backbone) -> TrainConfig {
    TrainConfig {
        backbone,
        pretrain_epochs: 200,
        finetune_epochs: 5,
        hidden_dims: vec![16, 8],
        ..TrainConfig::default()
    }
}

#[test]
fn embedding_bound_holds_on_trained_models() {
    let graph = small_graph();
    let view = graph.training_view();
    for backbone in [Backbone::Gcn, Backbone::Gin] {
        let run = run_seed(&graph, &quick_config(backbone), Variant::Fairwos, 3).unwrap();
        let x0 = run.model.inputs(&view).unwrap();
        let neighbors = neighbor_operator(backbone, &view);
        for p in [NormOrder::One, NormOrder::Two, NormOrder::Inf] {
            let report =
                check_counterfactual_bound(&run.model.classifier, &x0, &neighbors, 100, p, 11)
                    .unwrap();
            assert_eq!(report.trials.len(), 100);
            assert_eq!(
                report.verdict,
                Verdict::Pass,
                "{backbone:?} {p:?}: {:?}",
                report.detail
            );
        }
    }
}

#[test]
fn frozen_fairwos_trace_satisfies_the_convergence_bound() {
    let graph = small_graph();
    let view = graph.training_view();
    let cfg = TrainConfig {
        seed: 5,
        ..quick_config(Backbone::Gcn)
    };
    let run = run_seed(&graph, &cfg, Variant::Fairwos, 5).unwrap();
    let pre = fairwos::fairness::pretrain(&view, &cfg).unwrap();
    let (trace, report) = frozen_fairwos_convergence_stable(
        &view, &run.model, &pre.attrs, cfg.alpha, cfg.k, 0.05, 60,
    )
    .unwrap();
    assert_eq!(trace.steps.len(), 60);
    assert!(report.lr * report.l_estimate < 2.0, "{report:?}");
    assert!(report.running_min_nonincreasing);
    assert_eq!(report.bound.verdict, Verdict::Pass, "{report:?}");
}

#[test]
fn halving_the_step_restores_the_smoothness_assumption() {
    let graph = small_graph();
    let view = graph.training_view();
    let cfg = TrainConfig {
        pretrain_epochs: 200,
        finetune_epochs: 5,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = run_seed(&graph, &cfg, Variant::Fairwos, 5).unwrap();
    let pre = fairwos::fairness::pretrain(&view, &cfg).unwrap();
    let (_, report) = frozen_fairwos_convergence_stable(
        &view, &run.model, &pre.attrs, cfg.alpha, cfg.k, 0.05, 60,
    )
    .unwrap();
    assert!(report.lr * report.l_estimate < 2.0, "{report:?}");
    assert!(report.running_min_nonincreasing);
    assert_eq!(report.bound.verdict, Verdict::Pass, "{report:?}");
}
