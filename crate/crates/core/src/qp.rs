//! Dual active-set method for `min ½‖x‖²` subject to `A x = b`, `G x ≥ h`.
//!
//! Starts from the minimum-norm point of the equality constraints and adds
//! the most violated inequality at each iteration, so no feasible starting
//! point is needed and infeasibility is detected with the offending row.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// Equalities cannot be met (rank deficient and inconsistent).
    InconsistentEqualities,
    /// Inequality row that cannot be satisfied together with the active set.
    Infeasible { row: usize },
    IterationLimit,
}

const TOL: f64 = 1e-10;

/// Minimum-norm solution of the problem; `g`'s rows are inequality normals.
pub fn solve_min_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> std::result::Result<QpSolution, QpError> {
    let n = a.ncols().max(g.ncols());
    let m_eq = a.nrows();
    // active constraints: equalities first (never dropped), then inequality rows
    let mut active: Vec<usize> = Vec::new();
    let normals = |act: &[usize]| -> DMatrix<f64> {
        let mut nm = DMatrix::zeros(n, m_eq + act.len());
        for i in 0..m_eq {
            nm.column_mut(i).copy_from(&a.row(i).transpose());
        }
        for (k, &r) in act.iter().enumerate() {
            nm.column_mut(m_eq + k).copy_from(&g.row(r).transpose());
        }
        nm
    };

    let mut x = if m_eq > 0 {
        let svd = a.clone().svd(true, true);
        let x = svd.solve(b, 1e-13).map_err(|_| QpError::InconsistentEqualities)?;
        if (a * &x - b).amax() > 1e-9 * (1.0 + b.amax()) {
            return Err(QpError::InconsistentEqualities);
        }
        x
    } else {
        DVector::zeros(n)
    };
    let mut u_ineq: Vec<f64> = Vec::new();

    let scale: Vec<f64> = (0..g.nrows()).map(|i| g.row(i).norm().max(1e-300)).collect();
    let max_iter = 50 * (g.nrows() + n + 1);
    for iteration in 0..max_iter {
        // most violated inequality, measured in normalized distance
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..g.nrows() {
            if active.contains(&i) {
                continue;
            }
            let s = ((g.row(i) * &x)[0] - h[i]) / scale[i];
            if s < -TOL && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((p, _)) = worst else {
            return Ok(QpSolution {
                x,
                active,
                iterations: iteration,
            });
        };
        let np = g.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            let nm = normals(&active);
            let (z, r) = if nm.ncols() == 0 {
                (np.clone(), DVector::zeros(0))
            } else {
                let gram = nm.transpose() * &nm;
                let r = gram
                    .clone()
                    .svd(true, true)
                    .solve(&(nm.transpose() * &np), 1e-13)
                    .map_err(|_| QpError::Infeasible { row: p })?;
                (&np - &nm * &r, r)
            };
            let r_ineq: Vec<f64> = (0..active.len()).map(|k| r[m_eq + k]).collect();
            // largest step before an active inequality multiplier hits zero
            let mut t2 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in r_ineq.iter().enumerate() {
                if rk > TOL {
                    let t = u_ineq[k] / rk;
                    if t < t2 {
                        t2 = t;
                        drop = Some(k);
                    }
                }
            }
            let zz = z.dot(&np);
            if zz <= TOL * np.norm_squared() {
                if drop.is_none() {
                    return Err(QpError::Infeasible { row: p });
                }
                for (k, rk) in r_ineq.iter().enumerate() {
                    u_ineq[k] -= t2 * rk;
                }
                u_p += t2;
                let k = drop.expect("checked above");
                active.remove(k);
                u_ineq.remove(k);
                continue;
            }
            let slack = (np.dot(&x)) - h[p];
            let t1 = -slack / zz;
            let t = t1.min(t2);
            x += &z * t;
            for (k, rk) in r_ineq.iter().enumerate() {
                u_ineq[k] -= t * rk;
            }
            u_p += t;
            if t1 <= t2 {
                active.push(p);
                u_ineq.push(u_p);
                break;
            }
            let k = drop.expect("t2 finite implies a blocking constraint");
            active.remove(k);
            u_ineq.remove(k);
        }
    }
    Err(QpError::IterationLimit)
}
