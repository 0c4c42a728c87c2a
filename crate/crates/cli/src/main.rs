mod config;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fairwos::experiment::{
    load_checkpoint, run_seeds, run_sweep, save_checkpoint, total_times, SeedRun, Variant,
};
use fairwos::fairness::{
    FairwosModel, TrainingTrace, ALPHA_SELECTION_GRID, ALPHA_SENSITIVITY_GRID, ENCODER_DIM_GRID,
    K_SELECTION_GRID, K_SENSITIVITY_GRID,
};
use fairwos::gnn::neighbor_operator;
use fairwos::graph::save_graph_csv;
use fairwos::metrics::FairnessEvaluator;
use fairwos::pseudo::PseudoAttrs;
use fairwos::theory::{
    check_counterfactual_bound, frozen_fairwos_convergence, frozen_fairwos_convergence_stable,
    summarize_trace, BoundCheckReport, ConvergenceReport, NormOrder, TraceSummary,
};
use fairwos::{Split, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use config::{parse_seeds, DataSource, RunConfig};
use report::{Report, Runtime, SCHEMA, SWEEP_HEADER};

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "fairwos",
    version,
    about = "Fair graph learning without sensitive attributes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic biased graph as nodes.csv and edges.csv.
    Generate(GenerateArgs),
    /// Train one variant over a seed list and write report.json, checkpoints and traces.
    Train(RunArgs),
    /// Train every cell of an α × K × encoder-dimension grid and write sweep.csv.
    Sweep(SweepArgs),
    /// Check the embedding and convergence bounds on a checkpoint and its trace.
    Theory(TheoryArgs),
    /// Recompute test metrics from a checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    num_nodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `out` from the config; defaults to ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated; overrides `seeds` from the config.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Vec<u64>>,
    /// Record wall-clock time per pipeline stage.
    #[arg(long)]
    time: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Values or a preset: `selection` or `sensitivity`.
    #[arg(long)]
    alpha: Option<String>,
    /// Values or a preset: `selection` or `sensitivity`.
    #[arg(long)]
    k: Option<String>,
    /// Values or the preset `grid`.
    #[arg(long)]
    encoder_dim: Option<String>,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Where theory.json goes; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Norm order: 1, 2 or inf.
    #[arg(long, default_value = "2")]
    p: NormOrder,
    /// Step size of the frozen-objective descent. Without it the step starts
    /// at 0.05 and is halved until it is below 2/L.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 50)]
    steps: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: Map<String, Value>,
    seed: u64,
    model: FairwosModel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a).map(|()| true),
        Command::Train(a) => train(a).map(|()| true),
        Command::Sweep(a) => sweep(a).map(|()| true),
        Command::Theory(a) => theory(a),
        Command::Eval(a) => eval(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let DataSource::Synthetic(mut spec) = cfg.data else {
        bail!(UsageError(
            "generate needs a synthetic data source, not CSV paths".into()
        ));
    };
    if let Some(n) = args.num_nodes {
        spec.num_nodes = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if spec.num_nodes == 0 {
        bail!(UsageError("num_nodes must be at least 1".into()));
    }
    let graph = fairwos::graph::generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    save_graph_csv(
        &graph,
        args.out.join("nodes.csv"),
        args.out.join("edges.csv"),
    )?;
    println!("nodes {}", graph.num_nodes());
    println!("edges {}", graph.num_edges());
    println!("average degree {:.2}", graph.average_degree());
    Ok(())
}

/// Config with command-line overrides applied, plus the output directory.
fn resolve(args: &RunArgs) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    create_dir(&out)?;
    Ok((cfg, out))
}

fn train(args: RunArgs) -> Result<()> {
    let (cfg, out) = resolve(&args)?;
    let start = Instant::now();
    let graph = cfg.data.load()?;
    let runs = run_seeds(&graph, &cfg.train, cfg.variant, &cfg.seeds)?;
    let echo = cfg.echo();
    for run in &runs {
        let seed = run.result.seed;
        save_checkpoint(
            &out.join(format!("checkpoint_seed{seed}.json")),
            &Checkpoint {
                config: echo.clone(),
                seed,
                model: run.model.clone(),
            },
        )?;
        write(
            &out.join(format!("trace_seed{seed}.jsonl")),
            run.trace.to_jsonl()?,
        )?;
    }
    let runtime = args
        .time
        .then(|| Runtime::new(&total_times(&runs), start.elapsed().as_secs_f64()));
    let report = Report::new(echo, &runs, runtime.clone());
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    write(&out.join("report.schema.json"), SCHEMA)?;
    print_summary(cfg.variant, &runs, &report);
    if let Some(rt) = runtime {
        eprintln!(
            "time: pretrain {:.2}s, finetune {:.2}s, evaluate {:.2}s (summed over seeds), wall {:.2}s",
            rt.pretrain, rt.finetune, rt.evaluate, rt.wall
        );
    }
    Ok(())
}

fn print_summary(variant: Variant, runs: &[SeedRun], report: &Report) {
    let dash = || "-".to_string();
    println!(
        "{} over {} seeds: ACC {}  ΔSP {}  ΔEO {}",
        variant.label(),
        runs.len(),
        report.table.acc,
        report.table.dsp.clone().unwrap_or_else(dash),
        report.table.deo.clone().unwrap_or_else(dash),
    );
}

fn parse_axis<T: std::str::FromStr>(
    name: &str,
    text: &str,
    presets: &[(&str, &[T])],
) -> Result<Vec<T>>
where
    T: Clone,
    T::Err: fmt::Display,
{
    if let Some((_, values)) = presets.iter().find(|(p, _)| *p == text) {
        return Ok(values.to_vec());
    }
    let values = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| UsageError(format!("--{name}: bad value {s:?}: {e}")).into())
        })
        .collect::<Result<Vec<T>>>()?;
    if values.is_empty() {
        bail!(UsageError(format!("--{name}: empty grid axis")));
    }
    Ok(values)
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.alpha.is_none() && args.k.is_none() && args.encoder_dim.is_none() {
        bail!(UsageError(
            "empty grid: give at least one of --alpha, --k, --encoder-dim".into()
        ));
    }
    let (cfg, out) = resolve(&args.run)?;
    if cfg.variant == Variant::Vanilla {
        bail!(UsageError(
            "the vanilla baseline has no α, K or encoder to sweep".into()
        ));
    }
    let base = cfg.variant.configure(&cfg.train);
    let alphas = match &args.alpha {
        Some(t) => parse_axis(
            "alpha",
            t,
            &[
                ("selection", &ALPHA_SELECTION_GRID),
                ("sensitivity", &ALPHA_SENSITIVITY_GRID),
            ],
        )?,
        None => vec![base.alpha],
    };
    let ks = match &args.k {
        Some(t) => parse_axis(
            "k",
            t,
            &[
                ("selection", &K_SELECTION_GRID),
                ("sensitivity", &K_SENSITIVITY_GRID),
            ],
        )?,
        None => vec![base.k],
    };
    let dims = match &args.encoder_dim {
        Some(t) => parse_axis("encoder-dim", t, &[("grid", &ENCODER_DIM_GRID)])?,
        None => vec![base.encoder_dim],
    };
    let mut cells = Vec::with_capacity(alphas.len() * ks.len() * dims.len());
    for &alpha in &alphas {
        for &k in &ks {
            for &encoder_dim in &dims {
                let cell = TrainConfig {
                    alpha,
                    k,
                    encoder_dim,
                    ..base.clone()
                };
                cell.validate().map_err(|e| UsageError(e.to_string()))?;
                cells.push(cell);
            }
        }
    }

    let start = Instant::now();
    let graph = cfg.data.load()?;
    let results = run_sweep(&graph, &cells, &cfg.seeds)?;
    let mut csv = SWEEP_HEADER.join(",") + "\n";
    let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for cell in &results {
        let a = cell.aggregate();
        let row = [
            cell.config.alpha.to_string(),
            cell.config.k.to_string(),
            cell.config.encoder_dim.to_string(),
            cfg.seeds.len().to_string(),
            a.acc_mean.to_string(),
            a.acc_std.to_string(),
            num(a.dsp_mean),
            num(a.dsp_std),
            num(a.deo_mean),
            num(a.deo_std),
        ];
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write(&out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    if args.run.time {
        let runs = results.iter().flat_map(|c| &c.runs);
        let t = total_times(runs);
        eprintln!(
            "time: pretrain {:.2}s (shared across cells), finetune {:.2}s, wall {:.2}s",
            t.pretrain_s,
            t.finetune_s,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

fn load_run(path: &Path) -> Result<(Checkpoint, RunConfig, fairwos::Graph)> {
    let ckpt: Checkpoint =
        load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let cfg = RunConfig::from_map(ckpt.config.clone(), Path::new("/"))
        .context("checkpoint carries an invalid config")?;
    let graph = cfg.data.load()?;
    Ok((ckpt, cfg, graph))
}

const TRACE_FIELDS: [&str; 7] = [
    "epoch",
    "loss_utility",
    "disparity",
    "lambda",
    "grad_norm",
    "objective_before",
    "objective_after",
];

fn read_trace(path: &Path) -> Result<TrainingTrace> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut missing: Vec<&str> = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let value: Value = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: not JSON", path.display(), i + 1))?;
        for field in TRACE_FIELDS {
            if value.get(field).is_none() && !missing.contains(&field) {
                missing.push(field);
            }
        }
    }
    if !missing.is_empty() {
        bail!(
            "trace {} is missing fields: {}",
            path.display(),
            missing.join(", ")
        );
    }
    Ok(TrainingTrace::from_jsonl(&text)?)
}

#[derive(Serialize)]
struct TheoryOutput {
    embedding_bound: BoundCheckReport,
    trace: Option<TraceSummary>,
    frozen_convergence: ConvergenceReport,
    passed: bool,
}

fn theory(args: TheoryArgs) -> Result<bool> {
    let trace = read_trace(&args.trace)?;
    let (ckpt, cfg, graph) = load_run(&args.checkpoint)?;
    let view = graph.training_view();
    let model = &ckpt.model;
    let x0 = model.inputs(&view)?;
    let neighbors = neighbor_operator(model.classifier.arch.backbone, &view);
    let embedding_bound = check_counterfactual_bound(
        &model.classifier,
        &x0,
        &neighbors,
        args.trials,
        args.p,
        ckpt.seed,
    )?;

    let summary = if trace.records.is_empty() {
        None
    } else {
        Some(summarize_trace(&trace)?)
    };

    let train_cfg = cfg.variant.configure(&cfg.train);
    let attrs = PseudoAttrs::from_values(x0, &view.nodes_in(Split::Train))?;
    let alpha = train_cfg.effective_alpha();
    let (_, frozen_convergence) = match args.lr {
        Some(lr) => {
            frozen_fairwos_convergence(&view, model, &attrs, alpha, train_cfg.k, lr, args.steps)?
        }
        None => frozen_fairwos_convergence_stable(
            &view,
            model,
            &attrs,
            alpha,
            train_cfg.k,
            0.05,
            args.steps,
        )?,
    };

    let passed = !embedding_bound.is_failure()
        && !frozen_convergence.is_failure()
        && summary.as_ref().is_none_or(|s| s.running_min_nonincreasing);
    println!(
        "embedding bound (p = {:?}): {:?}, pass rate {:.3} over {} trials",
        args.p,
        embedding_bound.verdict,
        embedding_bound.pass_rate,
        embedding_bound.trials.len()
    );
    match &summary {
        Some(s) => println!(
            "training trace: {} epochs, {:?}, running min of ‖∇ℒ‖² nonincreasing: {}",
            s.epochs, s.verdict, s.running_min_nonincreasing
        ),
        None => println!("training trace: no fine-tuning epochs"),
    }
    println!(
        "frozen convergence bound (lr {}, L ≈ {:.4}, M = {:.4e}): {:?} over {} horizons",
        frozen_convergence.lr,
        frozen_convergence.l_estimate,
        frozen_convergence.m,
        frozen_convergence.bound.verdict,
        frozen_convergence.bound.trials.len()
    );
    let out_dir = args
        .out
        .clone()
        .or_else(|| args.checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    create_dir(&out_dir)?;
    let output = TheoryOutput {
        embedding_bound,
        trace: summary,
        frozen_convergence,
        passed,
    };
    write(
        &out_dir.join("theory.json"),
        serde_json::to_string_pretty(&output)? + "\n",
    )?;
    println!(
        "{}",
        if passed {
            "all hard checks passed"
        } else {
            "hard check failed"
        }
    );
    Ok(passed)
}

fn eval(args: EvalArgs) -> Result<()> {
    let (ckpt, _, graph) = load_run(&args.checkpoint)?;
    let preds = ckpt.model.predict(&graph.training_view())?;
    let report = FairnessEvaluator::new(&graph).evaluate(&preds, args.split)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
