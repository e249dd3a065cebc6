//! Least-squares polynomial fits on an interval.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HzdError, Result};

/// Polynomial in the variable `x = (2t − lo − hi)/(hi − lo) ∈ [−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub domain: [f64; 2],
    /// Coefficients in increasing degree.
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn normalize(&self, t: f64) -> f64 {
        let [lo, hi] = self.domain;
        (2.0 * t - lo - hi) / (hi - lo)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = self.normalize(t);
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Least-squares fit of `values` sampled at `points`.
    pub fn fit(points: &[f64], values: &[f64], degree: usize, domain: [f64; 2]) -> Result<Self> {
        if points.len() != values.len() || points.len() <= degree {
            return Err(HzdError::FitQuality(format!(
                "{} samples cannot determine a degree-{degree} polynomial",
                points.len()
            )));
        }
        let shell = Polynomial {
            domain,
            coeffs: Vec::new(),
        };
        let v = DMatrix::from_fn(points.len(), degree + 1, |i, j| shell.normalize(points[i]).powi(j as i32));
        let rhs = DVector::from_column_slice(values);
        let svd = v.svd(true, true);
        let sol = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| HzdError::FitQuality(format!("least squares failed: {e}")))?;
        Ok(Polynomial {
            domain,
            coeffs: sol.iter().copied().collect(),
        })
    }
}

/// Uniform grid of `n ≥ 2` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_polynomial() {
        let xs = linspace(-0.3, 0.5, 41);
        let f = |t: f64| 2.0 - 3.0 * t + 0.5 * t.powi(3);
        let ys: Vec<f64> = xs.iter().map(|&t| f(t)).collect();
        let p = Polynomial::fit(&xs, &ys, 3, [-0.3, 0.5]).unwrap();
        for t in linspace(-0.3, 0.5, 97) {
            assert!((p.eval(t) - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_fit_is_exact() {
        let xs = linspace(0.0, 1.0, 11);
        let p = Polynomial::fit(&xs, &[4.25; 11], 0, [0.0, 1.0]).unwrap();
        assert!((p.eval(0.37) - 4.25).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_rejected() {
        assert!(Polynomial::fit(&[0.0, 1.0], &[1.0, 2.0], 3, [0.0, 1.0]).is_err());
    }
}
