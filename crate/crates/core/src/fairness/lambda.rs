//! Closed-form attribute weights on the probability simplex.
//!
//! Minimizes `Σ cᵢλᵢ + ‖λ‖²` subject to `λ ≥ 0`, `Σλ = 1`, with `c = α·d`.
//! Stationarity gives `λᵢ = max(0, (−b − cᵢ)/2)` for the equality multiplier
//! `b`. Sorting `c` in descending order, the positive weights form a suffix
//! `j..m`; `b = −(2 + Σ_{i≥j} c′ᵢ)/(m − j + 1)` is accepted for the first `j`
//! whose `b` lies in `[−c′_{j−1}, −c′_j]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::objective::DisparityVec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaVec {
    pub weights: Vec<f64>,
    pub active: Vec<bool>,
}

impl LambdaVec {
    /// Equal weight on every active column, zero elsewhere.
    pub fn uniform(active: &[bool]) -> Result<Self> {
        let m = active.iter().filter(|&&a| a).count();
        if m == 0 {
            return Err(Error::NoActiveAttributes);
        }
        Ok(Self {
            weights: active
                .iter()
                .map(|&a| if a { 1.0 / m as f64 } else { 0.0 })
                .collect(),
            active: active.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Nonnegative, zero on inactive columns, sums to 1 within `1e-9`.
    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter().all(|&w| w >= 0.0 && w.is_finite())
            && self
                .weights
                .iter()
                .zip(&self.active)
                .all(|(&w, &a)| a || w == 0.0)
            && (sum - 1.0).abs() <= 1e-9
    }
}

/// Weights and the equality multiplier `b` for costs `c` over the active columns.
pub fn solve_simplex_weights(costs: &[f64], active: &[bool]) -> Result<(Vec<f64>, f64)> {
    if costs.len() != active.len() {
        return Err(Error::Dimension {
            op: "solve_simplex_weights",
            left: (costs.len(), 1),
            right: (active.len(), 1),
        });
    }
    if let Some(bad) = costs.iter().zip(active).find(|(c, &a)| a && !c.is_finite()) {
        return Err(Error::NonFinite(format!("disparity cost {}", bad.0)));
    }
    let mut sorted: Vec<f64> = costs
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&c, _)| c)
        .collect();
    if sorted.is_empty() {
        return Err(Error::NoActiveAttributes);
    }
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = sorted.len();

    // suffix_sums[j] = Σ_{i ≥ j} sorted[i]
    let mut suffix_sums = vec![0.0; m + 1];
    for j in (0..m).rev() {
        suffix_sums[j] = suffix_sums[j + 1] + sorted[j];
    }
    let mut b = None;
    for j in 0..m {
        let candidate = -(2.0 + suffix_sums[j]) / (m - j) as f64;
        let upper_ok = -candidate >= sorted[j];
        let lower_ok = j == 0 || -candidate <= sorted[j - 1];
        if upper_ok && lower_ok {
            b = Some(candidate);
            break;
        }
    }
    // The smallest cost alone always satisfies `−b = c′_m + 2 ≥ c′_m`; the
    // fallback only guards against the lower check failing through rounding.
    let b = b.unwrap_or(-(2.0 + sorted[m - 1]));

    let mut weights: Vec<f64> = costs
        .iter()
        .zip(active)
        .map(|(&c, &a)| if a { (0.5 * (-b - c)).max(0.0) } else { 0.0 })
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok((weights, b))
}

/// Minimizer of `α·Σλᵢdᵢ + ‖λ‖²` over the simplex restricted to active columns.
pub fn solve_lambda(d: &DisparityVec, alpha: f64) -> Result<LambdaVec> {
    if d.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Config("disparities must be nonnegative".into()));
    }
    let costs: Vec<f64> = d.values.iter().map(|v| alpha * v).collect();
    let (weights, _) = solve_simplex_weights(&costs, &d.active)?;
    Ok(LambdaVec {
        weights,
        active: d.active.clone(),
    })
}

/// Residuals of the KKT system `cᵢ + 2λᵢ − aᵢ + b = 0`, `aᵢλᵢ = 0`, `aᵢ ≥ 0`,
/// `λ ≥ 0`, `Σλ = 1` over active columns.
#[derive(Debug, Clone, Serialize)]
pub struct KktAudit {
    pub b: f64,
    pub multipliers: Vec<f64>,
    pub max_stationarity: f64,
    pub max_complementarity: f64,
    pub min_multiplier: f64,
    pub min_weight: f64,
    pub sum_error: f64,
}

impl KktAudit {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.max_stationarity <= tol
            && self.max_complementarity <= tol
            && self.min_multiplier >= -tol
            && self.min_weight >= -tol
            && self.sum_error <= tol
    }
}

/// Recovers `b` from the positive weights and audits every KKT condition.
pub fn kkt_audit(costs: &[f64], weights: &[f64], active: &[bool]) -> KktAudit {
    let support: Vec<usize> = (0..costs.len())
        .filter(|&i| active[i] && weights[i] > 0.0)
        .collect();
    let b = if support.is_empty() {
        0.0
    } else {
        support
            .iter()
            .map(|&i| -(costs[i] + 2.0 * weights[i]))
            .sum::<f64>()
            / support.len() as f64
    };
    let mut audit = KktAudit {
        b,
        multipliers: Vec::new(),
        max_stationarity: 0.0,
        max_complementarity: 0.0,
        min_multiplier: f64::INFINITY,
        min_weight: f64::INFINITY,
        sum_error: 0.0,
    };
    let mut sum = 0.0;
    for i in (0..costs.len()).filter(|&i| active[i]) {
        // a is chosen to zero stationarity off the support; on it a must be 0.
        let a = if weights[i] > 0.0 {
            0.0
        } else {
            costs[i] + 2.0 * weights[i] + b
        };
        let stationarity = (costs[i] + 2.0 * weights[i] - a + b).abs();
        audit.max_stationarity = audit.max_stationarity.max(stationarity);
        audit.max_complementarity = audit.max_complementarity.max((a * weights[i]).abs());
        audit.min_multiplier = audit.min_multiplier.min(a);
        audit.min_weight = audit.min_weight.min(weights[i]);
        audit.multipliers.push(a);
        sum += weights[i];
    }
    audit.sum_error = (sum - 1.0).abs();
    audit
}
