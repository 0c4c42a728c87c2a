use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nn::params::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Stateful first-order optimizer. Adam moments are keyed by parameter position,
/// so one optimizer must always be stepped with the same parameter layout.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        for p in params.iter() {
            if !p.grad().is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (_, value, grad) in params.entries_mut() {
                    for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    for p in params.iter() {
                        let (r, c) = p.value.shape();
                        self.first.push(DenseMatrix::zeros(r, c));
                        self.second.push(DenseMatrix::zeros(r, c));
                    }
                }
                self.step += 1;
                let OptimizerConfig {
                    beta1, beta2, eps, ..
                } = self.config;
                let bias1 = 1.0 - beta1.powi(self.step as i32);
                let bias2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (_, value, grad)) in params.entries_mut().enumerate() {
                    let m = self.first[i].data_mut();
                    let s = self.second[i].data_mut();
                    for (j, (v, &g)) in value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        s[j] = beta2 * s[j] + (1.0 - beta2) * g * g;
                        let m_hat = m[j] / bias1;
                        let s_hat = s[j] / bias2;
                        *v -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParameterSet {
        let mut set = ParameterSet::new();
        set.insert("p", DenseMatrix::filled(1, 1, value)).unwrap();
        set.set_grad("p", DenseMatrix::filled(1, 1, grad)).unwrap();
        set
    }

    #[test]
    fn sgd_step_matches_definition() {
        let mut set = single(1.0, 2.0);
        Optimizer::new(OptimizerConfig::sgd(0.1))
            .step(&mut set)
            .unwrap();
        assert!((set.value("p").get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1)] {
            let mut set = single(1.5, 0.0);
            Optimizer::new(cfg).step(&mut set).unwrap();
            assert_eq!(set.value("p").get(0, 0), 1.5);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        for cfg in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
            let mut set = single(-0.25, 3.0);
            Optimizer::new(cfg).step(&mut set).unwrap();
            assert_eq!(set.value("p").get(0, 0), -0.25);
        }
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let lr = 1e-3;
        let mut set = single(0.0, 0.7);
        let mut opt = Optimizer::new(OptimizerConfig::adam(lr));
        let mut last = 0.0;
        let mut delta = 0.0;
        for _ in 0..1000 {
            opt.step(&mut set).unwrap();
            let now = set.value("p").get(0, 0);
            delta = (now - last).abs();
            last = now;
        }
        assert!((delta - lr).abs() <= 0.05 * lr, "step {delta}");
        assert!(last < 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut set = single(0.0, f64::NAN);
        let err = Optimizer::new(OptimizerConfig::sgd(0.1))
            .step(&mut set)
            .unwrap_err();
        assert!(err.to_string().contains("gradient of p"), "{err}");
    }
}
