//! Minimal dense numerical kernel: layers, activations, losses, optimizers and
//! gradient verification.

pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, relative_error, DifferentiableProgram, GradCheckReport};
pub use ops::{
    activation, binary_cross_entropy, linear_forward, sigmoid, softmax_cross_entropy, Activation,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{glorot_uniform, Parameter, ParameterSet};

#[cfg(test)]
mod tests {
    use super::ops::{binary_cross_entropy_logit_grad, softmax_cross_entropy_logit_grad};
    use super::*;
    use crate::error::Result;
    use crate::matrix::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `sigmoid(x·w + b)` with binary cross-entropy over all rows.
    struct LogisticProgram {
        x: DenseMatrix,
        labels: Vec<u8>,
    }

    impl DifferentiableProgram for LogisticProgram {
        fn loss(&self, params: &ParameterSet) -> Result<f64> {
            let z = linear_forward(&self.x, params.value("w"), Some(params.value("b")))?;
            let p = activation(&z, Activation::Sigmoid)?;
            let mask: Vec<usize> = (0..self.x.rows()).collect();
            binary_cross_entropy(&p, &self.labels, &mask)
        }

        fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
            let z = linear_forward(&self.x, params.value("w"), Some(params.value("b")))?;
            let p = activation(&z, Activation::Sigmoid)?;
            let mask: Vec<usize> = (0..self.x.rows()).collect();
            let loss = binary_cross_entropy(&p, &self.labels, &mask)?;
            let dz = binary_cross_entropy_logit_grad(&p, &self.labels, &mask);
            params.set_grad("w", self.x.t_matmul(&dz)?)?;
            params.set_grad("b", dz.column_sums())?;
            Ok(loss)
        }
    }

    /// Two-layer relu/softmax network, exercising the multi-class head.
    struct SoftmaxProgram {
        x: DenseMatrix,
        labels: Vec<u8>,
    }

    impl SoftmaxProgram {
        fn forward(
            &self,
            params: &ParameterSet,
        ) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
            let pre = linear_forward(&self.x, params.value("w1"), None)?;
            let h = activation(&pre, Activation::Relu)?;
            let logits = linear_forward(&h, params.value("w2"), Some(params.value("b2")))?;
            let probs = activation(&logits, Activation::SoftmaxRows)?;
            Ok((pre, h, probs))
        }
    }

    impl DifferentiableProgram for SoftmaxProgram {
        fn loss(&self, params: &ParameterSet) -> Result<f64> {
            let (_, _, probs) = self.forward(params)?;
            let mask: Vec<usize> = (0..self.x.rows()).collect();
            softmax_cross_entropy(&probs, &self.labels, &mask)
        }

        fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
            let (pre, h, probs) = self.forward(params)?;
            let mask: Vec<usize> = (0..self.x.rows()).collect();
            let loss = softmax_cross_entropy(&probs, &self.labels, &mask)?;
            let dlogits = softmax_cross_entropy_logit_grad(&probs, &self.labels, &mask);
            params.set_grad("w2", h.t_matmul(&dlogits)?)?;
            params.set_grad("b2", dlogits.column_sums())?;
            let dh = dlogits.matmul_t(params.value("w2"))?;
            let dpre = ops::activation_backward(&pre, &dh, Activation::Relu);
            params.set_grad("w1", self.x.t_matmul(&dpre)?)?;
            Ok(loss)
        }
    }

    /// Loss that ignores parameter `unused` entirely.
    struct ConstantInOne;

    impl DifferentiableProgram for ConstantInOne {
        fn loss(&self, params: &ParameterSet) -> Result<f64> {
            Ok(params.value("used").frobenius_sq())
        }

        fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64> {
            let g = params.value("used").scale(2.0);
            params.set_grad("used", g)?;
            params.zero_grads_of("unused");
            Ok(params.value("used").frobenius_sq())
        }
    }

    impl ParameterSet {
        fn zero_grads_of(&mut self, name: &str) {
            let (r, c) = self.value(name).shape();
            self.set_grad(name, DenseMatrix::zeros(r, c)).unwrap();
        }
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn logistic_gradients_pass_on_random_instances() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let program = LogisticProgram {
                x: random_matrix(5, 3, &mut rng),
                labels: (0..5).map(|_| rng.random_range(0..2)).collect(),
            };
            let mut params = ParameterSet::new();
            params.insert("w", random_matrix(3, 1, &mut rng)).unwrap();
            params.insert("b", random_matrix(1, 1, &mut rng)).unwrap();
            let report = grad_check(&program, &params, 1e-5, 1e-4, seed).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn softmax_gradients_pass_on_random_instances() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let program = SoftmaxProgram {
                x: random_matrix(6, 4, &mut rng),
                labels: (0..6).map(|_| rng.random_range(0..3)).collect(),
            };
            let mut params = ParameterSet::new();
            params.insert("w1", random_matrix(4, 5, &mut rng)).unwrap();
            params.insert("w2", random_matrix(5, 3, &mut rng)).unwrap();
            params.insert("b2", random_matrix(1, 3, &mut rng)).unwrap();
            let report = grad_check(&program, &params, 1e-5, 1e-4, seed).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    #[test]
    fn parameter_without_influence_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParameterSet::new();
        params
            .insert("used", random_matrix(2, 2, &mut rng))
            .unwrap();
        params
            .insert("unused", random_matrix(3, 1, &mut rng))
            .unwrap();
        let report = grad_check(&ConstantInOne, &params, 1e-5, 1e-4, 0).unwrap();
        assert!(report.passed);
        let unused = report
            .per_param
            .iter()
            .find(|p| p.name == "unused")
            .unwrap();
        assert_eq!(unused.max_rel_error, 0.0);
    }
}
