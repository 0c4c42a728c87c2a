use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: DenseMatrix,
    #[serde(skip)]
    grad: Option<DenseMatrix>,
}

/// Gradient buffers are scratch space and do not take part in equality.
impl PartialEq for Parameter {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.value == other.value
    }
}

impl Parameter {
    pub fn grad(&self) -> &DenseMatrix {
        self.grad
            .as_ref()
            .expect("gradient buffer is allocated on insert")
    }
}

/// Named parameters, each with a gradient buffer of the same shape.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Parameter>", into = "Vec<Parameter>")]
pub struct ParameterSet {
    entries: Vec<Parameter>,
}

impl From<Vec<Parameter>> for ParameterSet {
    fn from(entries: Vec<Parameter>) -> Self {
        let mut set = ParameterSet::default();
        for p in entries {
            // Names in a deserialized set are validated by `validate_unique_names`.
            set.entries.push(Parameter {
                grad: Some(DenseMatrix::zeros(p.value.rows(), p.value.cols())),
                ..p
            });
        }
        set
    }
}

impl From<ParameterSet> for Vec<Parameter> {
    fn from(set: ParameterSet) -> Self {
        set.entries
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseMatrix) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = DenseMatrix::zeros(value.rows(), value.cols());
        self.entries.push(Parameter {
            name,
            value,
            grad: Some(grad),
        });
        Ok(())
    }

    pub fn validate_unique_names(&self) -> Result<()> {
        for (i, p) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!(
                    "duplicate parameter name {}",
                    p.name
                )));
            }
        }
        Ok(())
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    /// Panics on an unknown name; parameter names are fixed by model constructors.
    pub fn value(&self, name: &str) -> &DenseMatrix {
        &self.entries[self.expect_index(name)].value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut DenseMatrix {
        let i = self.expect_index(name);
        &mut self.entries[i].value
    }

    pub fn grad(&self, name: &str) -> &DenseMatrix {
        self.entries[self.expect_index(name)].grad()
    }

    pub fn set_grad(&mut self, name: &str, grad: DenseMatrix) -> Result<()> {
        let i = self.expect_index(name);
        let p = &mut self.entries[i];
        if grad.shape() != p.value.shape() {
            return Err(Error::Dimension {
                op: "set_grad",
                left: p.value.shape(),
                right: grad.shape(),
            });
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = Some(DenseMatrix::zeros(p.value.rows(), p.value.cols()));
        }
    }

    pub(crate) fn entries_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut DenseMatrix, &DenseMatrix)> {
        self.entries.iter_mut().map(|p| {
            let grad = p
                .grad
                .as_ref()
                .expect("gradient buffer is allocated on insert");
            (p.name.as_str(), &mut p.value, grad)
        })
    }

    fn expect_index(&self, name: &str) -> usize {
        self.index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// All parameter values concatenated in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// All gradients concatenated in insertion order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|p| p.grad().data().iter().copied())
            .collect()
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|p| p.grad().frobenius_sq())
            .sum::<f64>()
            .sqrt()
    }
}

/// Glorot-uniform weights: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut set = ParameterSet::new();
        set.insert("w", DenseMatrix::zeros(1, 1)).unwrap();
        assert!(set.insert("w", DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn grad_shape_checked() {
        let mut set = ParameterSet::new();
        set.insert("w", DenseMatrix::zeros(2, 3)).unwrap();
        assert_eq!(set.grad("w").shape(), (2, 3));
        assert!(set.set_grad("w", DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let a = glorot_uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(3));
        let b = glorot_uniform(4, 6, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn serde_round_trip_reallocates_grads() {
        let mut set = ParameterSet::new();
        set.insert("a", DenseMatrix::filled(2, 2, 0.5)).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: ParameterSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.value("a"), set.value("a"));
        assert_eq!(back.grad("a").shape(), (2, 2));
    }
}
