//! Group fairness metrics. This is the only module that reads the sensitive column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTally {
    pub count: usize,
    pub predicted_positive: usize,
    pub actual_positive: usize,
    pub true_positive: usize,
    pub correct: usize,
}

impl GroupTally {
    pub fn positive_rate(&self) -> Option<f64> {
        (self.count > 0).then(|| self.predicted_positive as f64 / self.count as f64)
    }

    pub fn true_positive_rate(&self) -> Option<f64> {
        (self.actual_positive > 0).then(|| self.true_positive as f64 / self.actual_positive as f64)
    }
}

/// Accuracy, ΔSP and ΔEO with the raw tallies they were computed from.
/// An absent group makes the affected metric `None` (serialized as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub split: Option<Split>,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub delta_sp: Option<f64>,
    pub delta_eo: Option<f64>,
    /// Indexed by sensitive value.
    pub groups: [GroupTally; 2],
}

impl FairnessReport {
    pub fn error_rate(&self) -> f64 {
        (self.evaluated - self.correct) as f64 / self.evaluated as f64
    }
}

fn abs_gap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

/// Empirical accuracy, `|P(ŷ=1|s=0) − P(ŷ=1|s=1)|` and
/// `|P(ŷ=1|y=1,s=0) − P(ŷ=1|y=1,s=1)|` over `mask`.
pub fn fairness_metrics(pred: &[u8], y: &[u8], s: &[u8], mask: &[usize]) -> Result<FairnessReport> {
    if mask.is_empty() {
        return Err(Error::Validation("empty evaluation mask".into()));
    }
    let mut groups = [GroupTally::default(); 2];
    for &v in mask {
        if s[v] > 1 || y[v] > 1 || pred[v] > 1 {
            return Err(Error::Validation(format!("non-binary value at node {v}")));
        }
        let g = &mut groups[usize::from(s[v])];
        let (p, t) = (pred[v] == 1, y[v] == 1);
        g.count += 1;
        g.predicted_positive += usize::from(p);
        g.actual_positive += usize::from(t);
        g.true_positive += usize::from(p && t);
        g.correct += usize::from(p == t);
    }
    let correct = groups[0].correct + groups[1].correct;
    Ok(FairnessReport {
        split: None,
        evaluated: mask.len(),
        correct,
        accuracy: correct as f64 / mask.len() as f64,
        delta_sp: abs_gap(groups[0].positive_rate(), groups[1].positive_rate()),
        delta_eo: abs_gap(
            groups[0].true_positive_rate(),
            groups[1].true_positive_rate(),
        ),
        groups,
    })
}

/// Validation signal handed to training code, which never sees sensitive values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub accuracy: f64,
    pub delta_sp: Option<f64>,
    pub delta_eo: Option<f64>,
}

impl ValidationScore {
    /// Model-selection score: accuracy minus ΔSP (ΔSP counts as 0 when undefined).
    pub fn composite(&self) -> f64 {
        self.accuracy - self.delta_sp.unwrap_or(0.0)
    }
}

pub trait ValidationScorer: Sync {
    fn score(&self, predictions: &[u8]) -> ValidationScore;
}

/// Scores predictions on a split using the graph's labels and sensitive column.
#[derive(Debug, Clone)]
pub struct FairnessEvaluator {
    labels: Vec<u8>,
    sensitive: Vec<u8>,
    split: Vec<Split>,
    usable: Vec<bool>,
    has_sensitive: bool,
}

impl FairnessEvaluator {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let sens = graph.sensitive_eval();
        let labels: Vec<u8> = graph.labels().iter().map(|y| y.unwrap_or(0)).collect();
        let sensitive: Vec<u8> = (0..n)
            .map(|v| sens.and_then(|s| s[v]).unwrap_or(0))
            .collect();
        let usable = (0..n)
            .map(|v| graph.labels()[v].is_some() && sens.is_none_or(|s| s[v].is_some()))
            .collect();
        Self {
            labels,
            sensitive,
            split: graph.split().to_vec(),
            usable,
            has_sensitive: sens.is_some(),
        }
    }

    pub fn mask(&self, split: Split) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&v| self.split[v] == split && self.usable[v])
            .collect()
    }

    /// Full report on `split`. Without a sensitive column both gaps are `None`.
    pub fn evaluate(&self, predictions: &[u8], split: Split) -> Result<FairnessReport> {
        let mask = self.mask(split);
        let mut report = fairness_metrics(predictions, &self.labels, &self.sensitive, &mask)?;
        report.split = Some(split);
        if !self.has_sensitive {
            report.delta_sp = None;
            report.delta_eo = None;
        }
        Ok(report)
    }
}

impl ValidationScorer for FairnessEvaluator {
    fn score(&self, predictions: &[u8]) -> ValidationScore {
        match self.evaluate(predictions, Split::Val) {
            Ok(r) => ValidationScore {
                accuracy: r.accuracy,
                delta_sp: r.delta_sp,
                delta_eo: r.delta_eo,
            },
            Err(_) => ValidationScore {
                accuracy: 0.0,
                delta_sp: None,
                delta_eo: None,
            },
        }
    }
}
