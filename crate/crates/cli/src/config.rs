//! Flat TOML run configuration.
//!
//! Keys fall into four groups:
//! - every [`TrainConfig`] field under its own name;
//! - `variant`, `seeds` and `out`;
//! - synthetic data as `synthetic_<field>` for each [`SyntheticSpec`] field;
//! - CSV data as `nodes_csv` and `edges_csv`.
//!
//! Synthetic and CSV keys are mutually exclusive. With neither, the default
//! synthetic graph is used.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fairwos::experiment::Variant;
use fairwos::graph::{generate_synthetic, load_graph_csv, SyntheticSpec};
use fairwos::{Graph, TrainConfig};
use serde_json::{Map, Value};

use crate::UsageError;

const SYNTHETIC_PREFIX: &str = "synthetic_";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv { nodes: PathBuf, edges: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Graph> {
        Ok(match self {
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
            DataSource::Csv { nodes, edges } => load_graph_csv(nodes, edges)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub variant: Variant,
    pub data: DataSource,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            variant: Variant::Fairwos,
            data: DataSource::Synthetic(SyntheticSpec::default()),
            seeds: (0..10).collect(),
            out: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = serde_json::to_value(table)? else {
            unreachable!("a TOML table serializes to an object")
        };
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_map(map, base).with_context(|| format!("in {}", path.display()))
    }

    /// Parses the flat key set; relative CSV paths resolve against `base`.
    pub fn from_map(map: Map<String, Value>, base: &Path) -> Result<Self> {
        let mut train = Map::new();
        let mut synthetic = Map::new();
        let mut cfg = RunConfig::default();
        let mut nodes = None;
        let mut edges = None;
        for (key, value) in map {
            match key.as_str() {
                "variant" => {
                    cfg.variant =
                        serde_json::from_value(value).map_err(|e| usage(format!("variant: {e}")))?
                }
                "seeds" => {
                    cfg.seeds =
                        serde_json::from_value(value).map_err(|e| usage(format!("seeds: {e}")))?
                }
                "out" => cfg.out = Some(path_value(&key, value, base)?),
                "nodes_csv" => nodes = Some(path_value(&key, value, base)?),
                "edges_csv" => edges = Some(path_value(&key, value, base)?),
                _ => {
                    if let Some(field) = key.strip_prefix(SYNTHETIC_PREFIX) {
                        synthetic.insert(field.to_owned(), value);
                    } else {
                        train.insert(key, value);
                    }
                }
            }
        }
        cfg.train =
            serde_json::from_value(Value::Object(train)).map_err(|e| usage(e.to_string()))?;
        cfg.train.validate().map_err(|e| usage(e.to_string()))?;
        cfg.data = match (nodes, edges, synthetic.is_empty()) {
            (None, None, _) => {
                let spec: SyntheticSpec = serde_json::from_value(Value::Object(synthetic))
                    .map_err(|e| usage(format!("synthetic spec: {e}")))?;
                spec.validate().map_err(|e| usage(e.to_string()))?;
                DataSource::Synthetic(spec)
            }
            (Some(_), Some(_), false) => {
                return Err(usage(
                    "ambiguous data source: both synthetic_* and CSV paths are set",
                ))
            }
            (Some(nodes), Some(edges), true) => DataSource::Csv { nodes, edges },
            _ => return Err(usage("nodes_csv and edges_csv must be given together")),
        };
        if cfg.seeds.is_empty() {
            return Err(usage("seeds must not be empty"));
        }
        Ok(cfg)
    }

    /// Flat JSON echo of everything that determines a run's results (`out` excluded).
    pub fn echo(&self) -> Map<String, Value> {
        let Value::Object(mut map) = serde_json::to_value(&self.train).expect("config serializes")
        else {
            unreachable!()
        };
        map.insert(
            "variant".into(),
            serde_json::to_value(self.variant).expect("variant serializes"),
        );
        match &self.data {
            DataSource::Synthetic(spec) => {
                let Value::Object(fields) = serde_json::to_value(spec).expect("spec serializes")
                else {
                    unreachable!()
                };
                for (k, v) in fields {
                    map.insert(format!("{SYNTHETIC_PREFIX}{k}"), v);
                }
            }
            DataSource::Csv { nodes, edges } => {
                map.insert("nodes_csv".into(), nodes.display().to_string().into());
                map.insert("edges_csv".into(), edges.display().to_string().into());
            }
        }
        map.insert("seeds".into(), self.seeds.clone().into());
        map
    }
}

fn path_value(key: &str, value: Value, base: &Path) -> Result<PathBuf> {
    let Value::String(s) = value else {
        bail!(UsageError(format!("{key} must be a string")));
    };
    let p = PathBuf::from(s);
    let p = if p.is_absolute() { p } else { base.join(p) };
    std::path::absolute(&p).with_context(|| format!("{key}: resolving {}", p.display()))
}

/// Parses `--seeds 0,1,2`.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let seeds = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad seed {x:?}: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}
