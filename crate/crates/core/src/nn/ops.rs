//! Forward kernels and their local derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    SoftmaxRows,
}

/// `x · w (+ bias)`; the bias is a `1 × out` row broadcast over rows.
pub fn linear_forward(
    x: &DenseMatrix,
    w: &DenseMatrix,
    bias: Option<&DenseMatrix>,
) -> Result<DenseMatrix> {
    x.ensure_finite("linear input")?;
    w.ensure_finite("linear weight")?;
    let mut out = x.matmul(w)?;
    if let Some(b) = bias {
        b.ensure_finite("linear bias")?;
        out.add_row_broadcast(b)?;
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &DenseMatrix, kind: Activation) -> Result<DenseMatrix> {
    x.ensure_finite("activation input")?;
    Ok(apply_activation(x, kind))
}

pub(crate) fn apply_activation(x: &DenseMatrix, kind: Activation) -> DenseMatrix {
    match kind {
        Activation::Identity => x.clone(),
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::SoftmaxRows => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            out
        }
    }
}

/// Chain rule through an element-wise activation: `upstream ⊙ σ'(pre)`.
///
/// `SoftmaxRows` is not element-wise and is only ever paired with the
/// cross-entropy shortcut, so it is rejected here.
pub(crate) fn activation_backward(
    pre: &DenseMatrix,
    upstream: &DenseMatrix,
    kind: Activation,
) -> DenseMatrix {
    match kind {
        Activation::Identity => upstream.clone(),
        Activation::Relu => {
            let mut out = upstream.clone();
            for (o, &p) in out.data_mut().iter_mut().zip(pre.data()) {
                if p <= 0.0 {
                    *o = 0.0;
                }
            }
            out
        }
        Activation::Sigmoid => {
            let mut out = upstream.clone();
            for (o, &p) in out.data_mut().iter_mut().zip(pre.data()) {
                let s = sigmoid(p);
                *o *= s * (1.0 - s);
            }
            out
        }
        Activation::SoftmaxRows => unreachable!("softmax is differentiated jointly with its loss"),
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn check_mask(mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        Err(Error::NoLabeledNodes)
    } else {
        Ok(())
    }
}

/// Binary cross-entropy over the masked rows of a single-column probability matrix.
pub fn binary_cross_entropy(pred: &DenseMatrix, labels: &[u8], mask: &[usize]) -> Result<f64> {
    check_mask(mask)?;
    pred.ensure_finite("binary cross-entropy input")?;
    let mut total = 0.0;
    for &v in mask {
        let p = clip(pred.get(v, 0));
        total -= if labels[v] == 1 {
            p.ln()
        } else {
            (1.0 - p).ln()
        };
    }
    Ok(total / mask.len() as f64)
}

/// Gradient of [`binary_cross_entropy`] with respect to the pre-sigmoid logits.
///
/// Rows outside the mask, and rows whose probability sits on a clip boundary,
/// get zero gradient.
pub(crate) fn binary_cross_entropy_logit_grad(
    probs: &DenseMatrix,
    labels: &[u8],
    mask: &[usize],
) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(probs.rows(), 1);
    let scale = 1.0 / mask.len() as f64;
    for &v in mask {
        let p = probs.get(v, 0);
        if p > PROB_EPS && p < 1.0 - PROB_EPS {
            grad.set(v, 0, (p - f64::from(labels[v])) * scale);
        }
    }
    grad
}

/// Multi-class cross-entropy `-(1/|mask|) Σ log p[v, y_v]` over softmax rows.
pub fn softmax_cross_entropy(probs: &DenseMatrix, labels: &[u8], mask: &[usize]) -> Result<f64> {
    check_mask(mask)?;
    probs.ensure_finite("cross-entropy input")?;
    let mut total = 0.0;
    for &v in mask {
        total -= clip(probs.get(v, usize::from(labels[v]))).ln();
    }
    Ok(total / mask.len() as f64)
}

/// Gradient of [`softmax_cross_entropy`] with respect to the pre-softmax logits.
pub(crate) fn softmax_cross_entropy_logit_grad(
    probs: &DenseMatrix,
    labels: &[u8],
    mask: &[usize],
) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(probs.rows(), probs.cols());
    let scale = 1.0 / mask.len() as f64;
    for &v in mask {
        let y = usize::from(labels[v]);
        let p_true = probs.get(v, y);
        if p_true <= PROB_EPS || p_true >= 1.0 - PROB_EPS {
            continue;
        }
        for c in 0..probs.cols() {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad.set(v, c, (probs.get(v, c) - onehot) * scale);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn linear_identity_returns_weight() {
        let w = m(&[vec![0.3, -1.0], vec![2.0, 5.5]]);
        let out = linear_forward(&DenseMatrix::identity(2), &w, None).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn linear_hand_computed() {
        let out = linear_forward(&m(&[vec![1.0, 2.0]]), &m(&[vec![3.0], vec![4.0]]), None).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = DenseMatrix::zeros(2, 3);
        let err = linear_forward(&x, &x, None).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                left: (2, 3),
                right: (2, 3),
                ..
            }
        ));
    }

    #[test]
    fn linear_rejects_nan() {
        let x = m(&[vec![f64::NAN]]);
        assert!(matches!(
            linear_forward(&x, &DenseMatrix::identity(1), None),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn activations_basic() {
        let eq = activation(&m(&[vec![3.0, 3.0, 3.0, 3.0]]), Activation::SoftmaxRows).unwrap();
        for &v in eq.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(
            activation(&m(&[vec![0.0]]), Activation::Sigmoid)
                .unwrap()
                .data(),
            &[0.5]
        );
        assert_eq!(
            activation(&m(&[vec![-1.0, 2.0]]), Activation::Relu)
                .unwrap()
                .data(),
            &[0.0, 2.0]
        );
        assert!(activation(&m(&[vec![f64::INFINITY]]), Activation::Relu).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let half = m(&[vec![0.5]]);
        let l = binary_cross_entropy(&half, &[1], &[0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let perfect = m(&[vec![1.0]]);
        assert!(binary_cross_entropy(&perfect, &[1], &[0]).unwrap() <= 1e-11);

        let two = m(&[vec![0.9], vec![0.2]]);
        let a = binary_cross_entropy(&two, &[1, 1], &[0]).unwrap();
        let b = binary_cross_entropy(&two, &[1, 1], &[1]).unwrap();
        let both = binary_cross_entropy(&two, &[1, 1], &[0, 1]).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);

        assert!(matches!(
            binary_cross_entropy(&two, &[1, 1], &[]),
            Err(Error::NoLabeledNodes)
        ));
    }

    #[test]
    fn softmax_cross_entropy_matches_binary_on_two_columns() {
        let probs = m(&[vec![0.3, 0.7], vec![0.6, 0.4]]);
        let binary = m(&[vec![0.7], vec![0.4]]);
        let a = softmax_cross_entropy(&probs, &[1, 0], &[0, 1]).unwrap();
        let b = binary_cross_entropy(&binary, &[1, 0], &[0, 1]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}
