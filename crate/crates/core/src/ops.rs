//! Plain (non-recorded) forms of the elementwise and loss operations.
//!
//! The tape records these same functions, so a value computed here is
//! bit-identical to the forward value of the corresponding tape node.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// Derivative of the exact GELU: `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn gelu(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

pub(crate) fn check_labels(logits: &Matrix, labels: &[usize], op: &'static str) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::dim(
            op,
            format!("{} logit rows for {} labels", logits.rows(), labels.len()),
        ));
    }
    if logits.rows() == 0 {
        return Err(Error::contract(op, "empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::Index {
            op,
            index: bad,
            bound: logits.cols(),
        });
    }
    Ok(())
}

/// Mean categorical cross-entropy with a fused log-sum-exp.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels, "cross_entropy")?;
    let mut total = 0.0;
    for (row, &label) in logits.row_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Mean over all entries of `(a − b)²`.
pub fn mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    if a.is_empty() {
        return Err(Error::contract("mse", "empty input"));
    }
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(20.0) - 20.0).abs() < 1e-12);
        assert!(gelu_scalar(-20.0).abs() < 1e-12);
        // Φ(1) to 22 digits, from the standard normal table
        let phi_1 = 0.841_344_746_068_542_948_585_232_5;
        assert!((gelu_scalar(1.0) - phi_1).abs() < 1e-15);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 2.5] {
            let h = 1e-5;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap());
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.get(1, 0) - 1.0).abs() < 1e-15 && s.get(1, 1) < 1e-300);
        // [1,2,3]: e^k / (e + e² + e³), evaluated to 20 digits offline
        let s = softmax_rows(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        let expected = [
            0.090_030_573_170_380_462,
            0.244_728_471_054_797_64,
            0.665_240_955_774_821_9,
        ];
        for (a, b) in s.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(2);
        let x = Matrix::from_fn(20, 7, |_, _| rng.uniform_in(-50.0, 50.0));
        for row in softmax_rows(&x).row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = Matrix::zeros(3, 2);
        let ce = cross_entropy(&uniform, &[0, 1, 1]).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
        let confident = Matrix::from_rows(&[vec![1e4, 0.0]]).unwrap();
        assert!(cross_entropy(&confident, &[0]).unwrap() < 1e-12);
        assert!(matches!(
            cross_entropy(&uniform, &[0, 2, 1]),
            Err(Error::Index { index: 2, .. })
        ));
        assert!(cross_entropy(&uniform, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_matches_two_step() {
        let mut rng = Rng::new(8);
        let logits = Matrix::from_fn(4, 3, |_, _| rng.uniform_in(-3.0, 3.0));
        let labels = [2, 0, 1, 1];
        let probs = softmax_rows(&logits);
        let two_step = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| probs.get(i, l).ln())
            .sum::<f64>()
            / 4.0;
        assert!((cross_entropy(&logits, &labels).unwrap() - two_step).abs() < 1e-12);
    }

    #[test]
    fn mse_cases() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&Matrix::scalar(0.0), &Matrix::scalar(2.0)).unwrap(), 4.0);
        assert!(mse(&a, &Matrix::scalar(1.0)).is_err());
        let mut rng = Rng::new(4);
        let x = Matrix::from_fn(5, 3, |_, _| rng.uniform());
        let y = Matrix::from_fn(5, 3, |_, _| rng.uniform());
        let mut s = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                s += (x.get(i, j) - y.get(i, j)).powi(2);
            }
        }
        assert!((mse(&x, &y).unwrap() - s / 15.0).abs() < 1e-12);
    }
}
