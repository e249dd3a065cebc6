//! Gait-timing variable and Bezier virtual constraints `q_b = h_d(α)`.

mod design;

pub use design::{design_nominal_gait, DesignReport, GaitSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HzdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaitParams {
    /// Timing combination, `α = c·q`.
    pub c: Vec<f64>,
    /// Row `i` holds the `M + 1` Bezier coefficients of output `i`.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub alpha_i: f64,
    pub alpha_f: f64,
    #[serde(rename = "bezier_order_M")]
    pub bezier_order_m: usize,
}

/// Virtual constraint and its derivatives with respect to `α`.
#[derive(Debug, Clone)]
pub struct BezierPoint {
    pub h: DVector<f64>,
    pub dh: DVector<f64>,
    pub ddh: DVector<f64>,
    /// `s` fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis of order `m` at `s`.
fn bernstein(m: usize, s: f64) -> Vec<f64> {
    (0..=m)
        .map(|k| binomial(m, k) * s.powi(k as i32) * (1.0 - s).powi((m - k) as i32))
        .collect()
}

/// Evaluates a single Bezier polynomial and its first two `s`-derivatives.
pub fn bezier_scalar(coeffs: &[f64], s: f64) -> (f64, f64, f64) {
    let m = coeffs.len() - 1;
    let b0 = bernstein(m, s);
    let value = coeffs.iter().zip(&b0).map(|(a, b)| a * b).sum();
    let d1 = if m >= 1 {
        let b1 = bernstein(m - 1, s);
        m as f64 * (0..m).map(|k| (coeffs[k + 1] - coeffs[k]) * b1[k]).sum::<f64>()
    } else {
        0.0
    };
    let d2 = if m >= 2 {
        let b2 = bernstein(m - 2, s);
        (m * (m - 1)) as f64
            * (0..m - 1)
                .map(|k| (coeffs[k + 2] - 2.0 * coeffs[k + 1] + coeffs[k]) * b2[k])
                .sum::<f64>()
    } else {
        0.0
    };
    (value, d1, d2)
}

const NOMINAL_JSON: &str = include_str!("../../gaits/nominal.json");

impl GaitParams {
    /// The shipped nominal gait for the default model.
    pub fn nominal() -> Self {
        serde_json::from_str(NOMINAL_JSON).expect("shipped gait fixture parses")
    }

    pub fn dof(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if n < 2 {
            return Err(HzdError::InvalidGait("timing vector needs at least two entries".into()));
        }
        if self.bezier_order_m < 3 {
            return Err(HzdError::InvalidGait(format!("Bezier order {} < 3", self.bezier_order_m)));
        }
        if self.a.len() != n - 1 {
            return Err(HzdError::InvalidGait(format!("A has {} rows, expected {}", self.a.len(), n - 1)));
        }
        if self.a.iter().any(|row| row.len() != self.bezier_order_m + 1) {
            return Err(HzdError::InvalidGait(format!(
                "every row of A needs {} coefficients",
                self.bezier_order_m + 1
            )));
        }
        let finite = self.c.iter().chain(self.a.iter().flatten()).all(|v| v.is_finite())
            && self.alpha_i.is_finite()
            && self.alpha_f.is_finite();
        if !finite {
            return Err(HzdError::InvalidGait("non-finite gait parameter".into()));
        }
        if self.alpha_i == self.alpha_f {
            return Err(HzdError::InvalidGait("alpha_i equals alpha_f".into()));
        }
        if self.c[n - 1] == 0.0 {
            return Err(HzdError::InvalidGait("timing vector has no weight on the unactuated coordinate".into()));
        }
        Ok(())
    }

    /// `α = c·q` and the normalized phase `s` clamped to `[0, 1]`.
    pub fn timing_variable(&self, q: &DVector<f64>) -> (f64, f64) {
        let alpha = self.alpha(q);
        (alpha, self.phase(alpha).clamp(0.0, 1.0))
    }

    pub fn alpha(&self, q: &DVector<f64>) -> f64 {
        self.c.iter().zip(q.iter()).map(|(c, x)| c * x).sum()
    }

    pub fn phase(&self, alpha: f64) -> f64 {
        (alpha - self.alpha_i) / (self.alpha_f - self.alpha_i)
    }

    pub fn alpha_at(&self, s: f64) -> f64 {
        self.alpha_i + s * (self.alpha_f - self.alpha_i)
    }

    pub fn alpha_mid(&self) -> f64 {
        0.5 * (self.alpha_i + self.alpha_f)
    }

    /// Evaluates `h_d` at phase `s`, derivatives taken with respect to `α`.
    pub fn bezier_eval(&self, s: f64) -> BezierPoint {
        let clamped = !(0.0..=1.0).contains(&s);
        let s = s.clamp(0.0, 1.0);
        let span = self.alpha_f - self.alpha_i;
        let rows = self.a.len();
        let mut p = BezierPoint {
            h: DVector::zeros(rows),
            dh: DVector::zeros(rows),
            ddh: DVector::zeros(rows),
            clamped,
        };
        for (i, row) in self.a.iter().enumerate() {
            let (v, d1, d2) = bezier_scalar(row, s);
            p.h[i] = v;
            p.dh[i] = d1 / span;
            p.ddh[i] = d2 / (span * span);
        }
        p
    }

    pub fn eval_alpha(&self, alpha: f64) -> BezierPoint {
        self.bezier_eval(self.phase(alpha))
    }

    /// Outputs `y = q_b − h_d(α)` and `ẏ`.
    pub fn output(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.dof();
        let (alpha, _) = self.timing_variable(q);
        let alpha_dot = self.alpha(qdot);
        let b = self.bezier_eval(self.phase(alpha));
        let y = q.rows(0, n - 1) - &b.h;
        let ydot = qdot.rows(0, n - 1) - &b.dh * alpha_dot;
        (y, ydot)
    }

    /// `H = [I 0; c]`, mapping `q` to `(q_b, α)`.
    pub fn coordinate_matrix(&self) -> DMatrix<f64> {
        let n = self.dof();
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            h[(i, i)] = 1.0;
        }
        for j in 0..n {
            h[(n - 1, j)] = self.c[j];
        }
        h
    }

    pub fn coordinate_matrix_inverse(&self) -> Result<DMatrix<f64>> {
        self.coordinate_matrix()
            .try_inverse()
            .ok_or_else(|| HzdError::InvalidGait("timing vector makes H singular".into()))
    }

    /// Configuration on the constraint surface at `α`.
    pub fn manifold_configuration(&self, alpha: f64) -> DVector<f64> {
        let n = self.dof();
        let b = self.eval_alpha(alpha);
        let c_n = self.c[n - 1];
        let mut q = DVector::zeros(n);
        q.rows_mut(0, n - 1).copy_from(&b.h);
        let cb: f64 = (0..n - 1).map(|i| self.c[i] * b.h[i]).sum();
        q[n - 1] = (alpha - cb) / c_n;
        q
    }

    /// Tangent `dq/dα` of the constraint surface.
    pub fn manifold_tangent(&self, alpha: f64) -> DVector<f64> {
        let n = self.dof();
        let b = self.eval_alpha(alpha);
        let mut t = DVector::zeros(n);
        t.rows_mut(0, n - 1).copy_from(&b.dh);
        let cb: f64 = (0..n - 1).map(|i| self.c[i] * b.dh[i]).sum();
        t[n - 1] = (1.0 - cb) / self.c[n - 1];
        t
    }
}
