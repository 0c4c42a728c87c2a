//! report.json and the sweep table.

use fairwos::experiment::{aggregate, table_cell, Aggregate, SeedRun, StageTimes};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA: &str = include_str!("../report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub acc: f64,
    pub dsp: Option<f64>,
    pub deo: Option<f64>,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCells {
    pub acc: String,
    pub dsp: Option<String>,
    pub deo: Option<String>,
}

impl TableCells {
    pub fn new(a: &Aggregate) -> Self {
        let cell = |m: Option<f64>, s: Option<f64>| Some(table_cell(m?, s?));
        Self {
            acc: table_cell(a.acc_mean, a.acc_std),
            dsp: cell(a.dsp_mean, a.dsp_std),
            deo: cell(a.deo_mean, a.deo_std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub pretrain: f64,
    pub finetune: f64,
    pub evaluate: f64,
    pub wall: f64,
}

impl Runtime {
    pub fn new(stages: &StageTimes, wall: f64) -> Self {
        Self {
            pretrain: stages.pretrain_s,
            finetune: stages.finetune_s,
            evaluate: stages.evaluate_s,
            wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub config: Map<String, Value>,
    pub per_seed: Vec<SeedEntry>,
    pub aggregate: Aggregate,
    pub table: TableCells,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_s: Option<Runtime>,
    pub timestamp: String,
}

impl Report {
    /// `runs` must already be in seed order.
    pub fn new(config: Map<String, Value>, runs: &[SeedRun], runtime_s: Option<Runtime>) -> Self {
        let results: Vec<_> = runs.iter().map(|r| r.result.clone()).collect();
        let aggregate = aggregate(&results);
        Self {
            config,
            per_seed: runs
                .iter()
                .map(|r| SeedEntry {
                    seed: r.result.seed,
                    acc: r.result.acc,
                    dsp: r.result.dsp,
                    deo: r.result.deo,
                    selected_epoch: r.model.selected_epoch,
                })
                .collect(),
            table: TableCells::new(&aggregate),
            aggregate,
            runtime_s,
            timestamp: humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string(),
        }
    }
}

pub const SWEEP_HEADER: [&str; 10] = [
    "alpha",
    "k",
    "encoder_dim",
    "seeds",
    "acc_mean",
    "acc_std",
    "dsp_mean",
    "dsp_std",
    "deo_mean",
    "deo_std",
];
