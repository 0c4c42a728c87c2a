//! Seeded runs, model variants, sweeps and checkpoints.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fairness::{
    finetune, pretrain, train_vanilla, FairwosModel, Pretrained, TrainConfig, TrainingTrace,
};
use crate::graph::{Graph, Split};
use crate::metrics::{FairnessEvaluator, FairnessReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fairwos,
    Vanilla,
    NoEncoder,
    NoFairness,
    NoWeightUpdate,
}

impl Variant {
    pub const ABLATIONS: [Variant; 3] = [
        Variant::NoEncoder,
        Variant::NoFairness,
        Variant::NoWeightUpdate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Fairwos => "Fairwos",
            Variant::Vanilla => "Vanilla",
            Variant::NoEncoder => "Fwos w/o E",
            Variant::NoFairness => "Fwos w/o F",
            Variant::NoWeightUpdate => "Fwos w/o W",
        }
    }

    /// `cfg` with this variant's ablation flag switched on.
    pub fn configure(self, cfg: &TrainConfig) -> TrainConfig {
        let mut cfg = cfg.clone();
        match self {
            Variant::NoEncoder => cfg.disable_encoder = true,
            Variant::NoFairness => cfg.disable_fairness = true,
            Variant::NoWeightUpdate => cfg.disable_weight_update = true,
            Variant::Fairwos | Variant::Vanilla => {}
        }
        cfg
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fairwos" => Ok(Self::Fairwos),
            "vanilla" => Ok(Self::Vanilla),
            "no_encoder" => Ok(Self::NoEncoder),
            "no_fairness" => Ok(Self::NoFairness),
            "no_weight_update" => Ok(Self::NoWeightUpdate),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub acc: f64,
    pub dsp: Option<f64>,
    pub deo: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub pretrain_s: f64,
    pub finetune_s: f64,
    pub evaluate_s: f64,
}

impl StageTimes {
    fn add(&mut self, other: &StageTimes) {
        self.pretrain_s += other.pretrain_s;
        self.finetune_s += other.finetune_s;
        self.evaluate_s += other.evaluate_s;
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub test: FairnessReport,
    pub model: FairwosModel,
    pub trace: TrainingTrace,
    pub times: StageTimes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc_mean: f64,
    pub acc_std: f64,
    pub dsp_mean: Option<f64>,
    pub dsp_std: Option<f64>,
    pub deo_mean: Option<f64>,
    pub deo_std: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn aggregate(results: &[SeedResult]) -> Aggregate {
    let acc: Vec<f64> = results.iter().map(|r| r.acc).collect();
    let dsp: Vec<f64> = results.iter().filter_map(|r| r.dsp).collect();
    let deo: Vec<f64> = results.iter().filter_map(|r| r.deo).collect();
    let (acc_mean, acc_std) = mean_std(&acc).unwrap_or((f64::NAN, f64::NAN));
    let dsp = mean_std(&dsp);
    let deo = mean_std(&deo);
    Aggregate {
        acc_mean,
        acc_std,
        dsp_mean: dsp.map(|d| d.0),
        dsp_std: dsp.map(|d| d.1),
        deo_mean: deo.map(|d| d.0),
        deo_std: deo.map(|d| d.1),
    }
}

/// `mean ± std` in percent, as in a results table cell.
pub fn table_cell(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.clone()
    }
}

fn evaluate(
    graph: &Graph,
    evaluator: &FairnessEvaluator,
    seed: u64,
    model: FairwosModel,
    trace: TrainingTrace,
    mut times: StageTimes,
) -> Result<SeedRun> {
    let start = Instant::now();
    let preds = model.predict(&graph.training_view())?;
    let test = evaluator.evaluate(&preds, Split::Test)?;
    times.evaluate_s = start.elapsed().as_secs_f64();
    Ok(SeedRun {
        result: SeedResult {
            seed,
            acc: test.accuracy,
            dsp: test.delta_sp,
            deo: test.delta_eo,
        },
        test,
        model,
        trace,
        times,
    })
}

/// One variant, one seed, evaluated on the test split.
pub fn run_seed(graph: &Graph, cfg: &TrainConfig, variant: Variant, seed: u64) -> Result<SeedRun> {
    let view = graph.training_view();
    let evaluator = FairnessEvaluator::new(graph);
    let cfg = seeded(&variant.configure(cfg), seed);
    let mut times = StageTimes::default();
    let start = Instant::now();
    if variant == Variant::Vanilla {
        let model = train_vanilla(&view, &cfg)?;
        times.pretrain_s = start.elapsed().as_secs_f64();
        return evaluate(
            graph,
            &evaluator,
            seed,
            model,
            TrainingTrace::default(),
            times,
        );
    }
    let pre = pretrain(&view, &cfg)?;
    times.pretrain_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let (model, trace) = finetune(&view, &cfg, &pre, &evaluator)?;
    times.finetune_s = start.elapsed().as_secs_f64();
    evaluate(graph, &evaluator, seed, model, trace, times)
}

/// Seeds run in parallel; results come back in seed-list order.
pub fn run_seeds(
    graph: &Graph,
    cfg: &TrainConfig,
    variant: Variant,
    seeds: &[u64],
) -> Result<Vec<SeedRun>> {
    seeds
        .par_iter()
        .map(|&seed| run_seed(graph, cfg, variant, seed))
        .collect()
}

/// Fields that determine [`pretrain`]'s output.
#[derive(Serialize)]
struct PretrainKey<'a> {
    pretrain_epochs: usize,
    learning_rate: f64,
    optimizer: crate::nn::OptimizerKind,
    backbone: crate::gnn::Backbone,
    encoder_dim: usize,
    hidden_dims: &'a [usize],
    disable_encoder: bool,
}

fn pretrain_key(cfg: &TrainConfig) -> String {
    serde_json::to_string(&PretrainKey {
        pretrain_epochs: cfg.pretrain_epochs,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        backbone: cfg.backbone,
        encoder_dim: cfg.encoder_dim,
        hidden_dims: &cfg.hidden_dims,
        disable_encoder: cfg.disable_encoder,
    })
    .expect("plain struct serializes")
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub config: TrainConfig,
    pub runs: Vec<SeedRun>,
}

impl SweepCell {
    pub fn results(&self) -> Vec<SeedResult> {
        self.runs.iter().map(|r| r.result.clone()).collect()
    }

    pub fn aggregate(&self) -> Aggregate {
        aggregate(&self.results())
    }
}

/// Runs every (non-vanilla) config over every seed. Pretraining is shared by
/// cells that agree on the fields it depends on.
pub fn run_sweep(graph: &Graph, cells: &[TrainConfig], seeds: &[u64]) -> Result<Vec<SweepCell>> {
    if cells.is_empty() {
        return Err(Error::Config("empty sweep grid".into()));
    }
    let view = graph.training_view();
    let evaluator = FairnessEvaluator::new(graph);
    let per_seed: Vec<Vec<SeedRun>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<SeedRun>> {
            let mut cache: HashMap<String, (Pretrained, f64)> = HashMap::new();
            let mut runs = Vec::with_capacity(cells.len());
            for cell in cells {
                let cfg = seeded(cell, seed);
                let key = pretrain_key(&cfg);
                if !cache.contains_key(&key) {
                    let start = Instant::now();
                    let pre = pretrain(&view, &cfg)?;
                    cache.insert(key.clone(), (pre, start.elapsed().as_secs_f64()));
                }
                let (pre, pretrain_s) = &cache[&key];
                let start = Instant::now();
                let (model, trace) = finetune(&view, &cfg, pre, &evaluator)?;
                let times = StageTimes {
                    pretrain_s: *pretrain_s,
                    finetune_s: start.elapsed().as_secs_f64(),
                    evaluate_s: 0.0,
                };
                runs.push(evaluate(graph, &evaluator, seed, model, trace, times)?);
            }
            Ok(runs)
        })
        .collect::<Result<_>>()?;

    let mut out: Vec<SweepCell> = cells
        .iter()
        .map(|c| SweepCell {
            config: c.clone(),
            runs: Vec::with_capacity(seeds.len()),
        })
        .collect();
    for runs in per_seed {
        for (cell, run) in out.iter_mut().zip(runs) {
            cell.runs.push(run);
        }
    }
    Ok(out)
}

/// Summed stage times over runs.
pub fn total_times<'a>(runs: impl IntoIterator<Item = &'a SeedRun>) -> StageTimes {
    let mut total = StageTimes::default();
    for r in runs {
        total.add(&r.times);
    }
    total
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile<'a> {
    sha256: String,
    #[serde(borrow)]
    payload: &'a RawValue,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// JSON checkpoint: the payload plus a SHA-256 of its exact serialized text.
pub fn save_checkpoint<T: Serialize>(path: &Path, payload: &T) -> Result<()> {
    let raw = serde_json::value::to_raw_value(payload)?;
    let file = CheckpointFile {
        sha256: digest(raw.get()),
        payload: &raw,
    };
    std::fs::write(path, serde_json::to_string(&file)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile<'_> = serde_json::from_str(&text)?;
    let found = digest(file.payload.get());
    if found != file.sha256 {
        return Err(Error::Checksum {
            expected: file.sha256,
            found,
        });
    }
    Ok(serde_json::from_str(file.payload.get())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), Some((4.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn cell_formatting() {
        assert_eq!(table_cell(0.6638, 0.0123), "66.38 ± 1.23");
    }

    #[test]
    fn checkpoint_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = TrainConfig::default();
        save_checkpoint(&path, &cfg).unwrap();
        assert_eq!(load_checkpoint::<TrainConfig>(&path).unwrap(), cfg);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"k\":1", "\"k\":2", 1)).unwrap();
        assert!(matches!(
            load_checkpoint::<TrainConfig>(&path),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn variants_set_one_flag_each() {
        let base = TrainConfig::default();
        assert!(Variant::NoEncoder.configure(&base).disable_encoder);
        assert_eq!(Variant::NoFairness.configure(&base).effective_alpha(), 0.0);
        assert!(
            Variant::NoWeightUpdate
                .configure(&base)
                .disable_weight_update
        );
        assert_eq!(Variant::Fairwos.configure(&base), base);
    }

    #[test]
    fn empty_grid_rejected() {
        let g = crate::graph::generate_synthetic(&crate::graph::SyntheticSpec {
            num_nodes: 20,
            ..Default::default()
        })
        .unwrap();
        assert!(run_sweep(&g, &[], &[0]).is_err());
    }
}
