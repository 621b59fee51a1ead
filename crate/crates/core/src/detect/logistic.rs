use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

pub const DEFAULT_L2: f64 = 1e-4;
const MAX_ITER: usize = 5000;
const GRAD_TOL: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const RISK_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations: usize,
    pub final_loss: f64,
    pub gradient_norm: f64,
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `l2/2 · ‖w‖²` (bias unpenalized).
pub fn logistic_loss(x: &Matrix, y: &[u8], weights: &[f64], bias: f64, l2: f64) -> f64 {
    let n = x.rows() as f64;
    let data: f64 = (0..x.rows())
        .map(|i| {
            let z = dot(x.row(i), weights) + bias;
            if y[i] == 1 {
                log1p_exp(-z)
            } else {
                log1p_exp(z)
            }
        })
        .sum();
    data / n + 0.5 * l2 * dot(weights, weights)
}

fn gradient(x: &Matrix, y: &[u8], weights: &[f64], bias: f64, l2: f64) -> (Vec<f64>, f64) {
    let n = x.rows() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for i in 0..x.rows() {
        let r = sigmoid(dot(x.row(i), weights) + bias) - f64::from(y[i]);
        for (g, v) in gw.iter_mut().zip(x.row(i)) {
            *g += r * v;
        }
        gb += r;
    }
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Full-batch gradient descent with backtracking line search, stopping at
/// gradient norm below 1e-6 or after 5000 iterations.
pub fn fit_logistic(x: &Matrix, y: &[u8], l2: f64) -> Result<LogisticModel> {
    if y.len() != x.rows() {
        return Err(Error::Dimension { context: "logistic labels", expected: x.rows(), found: y.len() });
    }
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::Training("logistic regression needs both classes".into()));
    }
    let p = x.cols();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut loss = logistic_loss(x, y, &w, b, l2);
    let mut step = 1.0;
    let mut iterations = 0;
    let (mut gw, mut gb) = gradient(x, y, &w, b, l2);
    let mut gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
    while gnorm >= GRAD_TOL && iterations < MAX_ITER {
        iterations += 1;
        step *= 2.0;
        loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let b_new = b - step * gb;
            let new_loss = logistic_loss(x, y, &w_new, b_new, l2);
            if new_loss <= loss - ARMIJO * step * gnorm * gnorm {
                w = w_new;
                b = b_new;
                loss = new_loss;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break;
            }
        }
        if step < 1e-20 {
            break;
        }
        (gw, gb) = gradient(x, y, &w, b, l2);
        gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Training("logistic weights diverged".into()));
    }
    Ok(LogisticModel { weights: w, bias: b, l2, iterations, final_loss: loss, gradient_norm: gnorm })
}

impl LogisticModel {
    pub fn decision(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(Error::Dimension {
                context: "logistic features",
                expected: self.weights.len(),
                found: x.cols(),
            });
        }
        Ok((0..x.rows()).map(|i| dot(x.row(i), &self.weights) + self.bias).collect())
    }

    /// Hallucination risk in (0, 1) for standardized rows.
    pub fn predict_risk(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.decision(x)?.into_iter().map(|z| sigmoid(z).clamp(RISK_FLOOR, 1.0 - RISK_FLOOR)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Matrix, Vec<u8>) {
        let x = Matrix::from_rows(&[vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]]).unwrap();
        (x, vec![0, 0, 1, 1])
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (x, y) = separable();
        let m = fit_logistic(&x, &y, DEFAULT_L2).unwrap();
        let risk = m.predict_risk(&x).unwrap();
        let correct = risk.iter().zip(&y).filter(|(r, &l)| (**r >= 0.5) == (l == 1)).count();
        assert_eq!(correct, 4);
        assert!(m.gradient_norm < 1e-6, "{}", m.gradient_norm);
        assert!(m.final_loss <= logistic_loss(&x, &y, &[0.0], 0.0, DEFAULT_L2));
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = separable();
        assert!(matches!(fit_logistic(&x, &[1, 1, 1, 1], DEFAULT_L2), Err(Error::Training(_))));
    }

    #[test]
    fn risk_identities() {
        let x = Matrix::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]).unwrap();
        let zero = LogisticModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            l2: 0.0,
            iterations: 0,
            final_loss: 0.0,
            gradient_norm: 0.0,
        };
        assert_eq!(zero.predict_risk(&x).unwrap(), vec![0.5, 0.5]);
        let m = LogisticModel { weights: vec![0.7, -0.2], bias: 0.1, ..zero.clone() };
        let neg = LogisticModel { weights: vec![-0.7, 0.2], bias: -0.1, ..zero };
        for (a, b) in m.predict_risk(&x).unwrap().iter().zip(neg.predict_risk(&x).unwrap()) {
            assert!((a + b - 1.0).abs() < 1e-15);
        }
        assert!(m.predict_risk(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn duplicating_rows_keeps_decision_function() {
        let x = Matrix::from_rows(&[
            vec![0.1, 1.0],
            vec![-0.4, 0.3],
            vec![1.2, -0.5],
            vec![0.9, 0.2],
            vec![-1.0, -1.0],
        ])
        .unwrap();
        let y = vec![0, 0, 1, 1, 0];
        let mut rows2 = Vec::new();
        let mut y2 = Vec::new();
        for i in 0..5 {
            rows2.push(x.row(i).to_vec());
            rows2.push(x.row(i).to_vec());
            y2.push(y[i]);
            y2.push(y[i]);
        }
        let a = fit_logistic(&x, &y, DEFAULT_L2).unwrap();
        let b = fit_logistic(&Matrix::from_rows(&rows2).unwrap(), &y2, DEFAULT_L2).unwrap();
        for (u, v) in a.decision(&x).unwrap().iter().zip(b.decision(&x).unwrap()) {
            assert!((u - v).abs() < 1e-9, "{u} vs {v}");
        }
    }
}
