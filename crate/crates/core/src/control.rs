//! Partial feedback linearization and the output-zeroing outer loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HzdError, Result};
use crate::gait::GaitParams;
use crate::model::{Biped, PinnedTerms};

/// Above this condition number the decoupling matrix is reported as ill-conditioned.
pub const DECOUPLING_COND_WARN: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainsRepr", into = "GainsRepr")]
pub struct Gains {
    pub kp: DMatrix<f64>,
    pub kd: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GainsRepr {
    Matrices { kp: Vec<Vec<f64>>, kd: Vec<Vec<f64>> },
    Epsilon { epsilon: f64, outputs: usize },
}

impl TryFrom<GainsRepr> for Gains {
    type Error = HzdError;
    fn try_from(r: GainsRepr) -> Result<Self> {
        let g = match r {
            GainsRepr::Epsilon { epsilon, outputs } => Gains::from_epsilon(outputs, epsilon)?,
            GainsRepr::Matrices { kp, kd } => {
                let to_mat = |rows: Vec<Vec<f64>>, name: &str| -> Result<DMatrix<f64>> {
                    let n = rows.len();
                    if n == 0 || rows.iter().any(|r| r.len() != n) {
                        return Err(HzdError::Config(format!("{name} must be a non-empty square matrix")));
                    }
                    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
                };
                Gains {
                    kp: to_mat(kp, "kp")?,
                    kd: to_mat(kd, "kd")?,
                }
            }
        };
        g.validate()?;
        Ok(g)
    }
}

impl From<Gains> for GainsRepr {
    fn from(g: Gains) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        GainsRepr::Matrices {
            kp: rows(&g.kp),
            kd: rows(&g.kd),
        }
    }
}

impl Gains {
    /// `K_p = I/ε²`, `K_d = 2I/ε`: critically damped outputs with time constant `ε`.
    pub fn from_epsilon(outputs: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(HzdError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            kp: DMatrix::identity(outputs, outputs) / (epsilon * epsilon),
            kd: DMatrix::identity(outputs, outputs) * (2.0 / epsilon),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("kp", &self.kp), ("kd", &self.kd)] {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(HzdError::Config(format!("{name} must be symmetric")));
            }
            if m.clone().cholesky().is_none() {
                return Err(HzdError::Config(format!("{name} must be positive definite")));
            }
        }
        if self.kp.nrows() != self.kd.nrows() {
            return Err(HzdError::Config("kp and kd sizes differ".into()));
        }
        Ok(())
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self::from_epsilon(2, 0.05).expect("default gains are valid")
    }
}

fn d_nn_checked(terms: &PinnedTerms) -> Result<f64> {
    let d_nn = terms.d_nn();
    if !(d_nn.abs() > 1e-12 * terms.d.amax()) {
        return Err(HzdError::NumericalSingularity(format!("D_NN = {d_nn}")));
    }
    Ok(d_nn)
}

/// Joint torques that make `q̈_b = v` exactly for a measured thrust `F_T`.
pub fn torque_from_v(terms: &PinnedTerms, v: &DVector<f64>, thrust: f64) -> Result<DVector<f64>> {
    let d_nn = d_nn_checked(terms)?;
    let d_bn = terms.d_bn();
    let schur = terms.d_bb() - &d_bn * d_bn.transpose() / d_nn;
    let thrust_gain = terms.b_b() - &d_bn * (terms.b_n() / d_nn);
    Ok(schur * v + terms.omega_b() - &d_bn * (terms.omega_n() / d_nn) - thrust_gain * thrust)
}

/// Decoupling matrix `L_g L_f y` and drift `L_f² y` of the output dynamics
/// under `q̈_b = v`.
#[derive(Debug, Clone)]
pub struct OutputDynamics {
    pub decoupling: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub y: DVector<f64>,
    pub ydot: DVector<f64>,
}

pub fn output_dynamics(
    terms: &PinnedTerms,
    gait: &GaitParams,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    thrust: f64,
) -> Result<OutputDynamics> {
    let n = gait.dof();
    let d_nn = d_nn_checked(terms)?;
    let alpha = gait.alpha(q);
    let alpha_dot = gait.alpha(qdot);
    let bez = gait.eval_alpha(alpha);
    let c_b = DVector::from_iterator(n - 1, gait.c[..n - 1].iter().copied());
    let c_n = gait.c[n - 1];
    let d_nb = terms.d_bn();
    let decoupling = DMatrix::identity(n - 1, n - 1) - &bez.dh * c_b.transpose()
        + &bez.dh * d_nb.transpose() * (c_n / d_nn);
    let drift = -&bez.ddh * (alpha_dot * alpha_dot)
        - &bez.dh * (c_n * (terms.b_n() * thrust - terms.omega_n()) / d_nn);
    let (y, ydot) = gait.output(q, qdot);
    Ok(OutputDynamics {
        decoupling,
        drift,
        y,
        ydot,
    })
}

#[derive(Debug, Clone)]
pub struct VirtualInput {
    pub v: DVector<f64>,
    pub condition_number: f64,
}

/// `v = −(L_g L_f y)⁻¹ (L_f² y + K_d ẏ + K_p y)`.
pub fn feedback_linearizing_v(
    terms: &PinnedTerms,
    gait: &GaitParams,
    gains: &Gains,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    thrust: f64,
) -> Result<VirtualInput> {
    let od = output_dynamics(terms, gait, q, qdot, thrust)?;
    let sv = od.decoupling.singular_values();
    let condition_number = sv.max() / sv.min();
    if !condition_number.is_finite() {
        return Err(HzdError::NumericalSingularity("decoupling matrix is singular".into()));
    }
    if condition_number > DECOUPLING_COND_WARN {
        log::warn!("decoupling matrix ill-conditioned: cond = {condition_number:.3e}");
    }
    let rhs = -(od.drift + &gains.kd * od.ydot + &gains.kp * od.y);
    let v = od
        .decoupling
        .lu()
        .solve(&rhs)
        .ok_or_else(|| HzdError::NumericalSingularity("decoupling matrix is singular".into()))?;
    Ok(VirtualInput { v, condition_number })
}

/// Evaluation of the closed loop at one state.
#[derive(Debug, Clone)]
pub struct ClosedLoopEval {
    pub terms: PinnedTerms,
    pub v: DVector<f64>,
    pub u: DVector<f64>,
    pub qddot: DVector<f64>,
    pub condition_number: f64,
}

/// The plant of the pinned model driven by the two-layer controller.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub biped: Biped,
    pub gait: GaitParams,
    pub gains: Gains,
}

impl ClosedLoop {
    pub fn new(biped: Biped, gait: GaitParams, gains: Gains) -> Result<Self> {
        gait.validate()?;
        gains.validate()?;
        if gait.dof() != biped.dof() || gains.kp.nrows() != biped.dof() - 1 {
            return Err(HzdError::Config("model, gait and gains dimensions disagree".into()));
        }
        Ok(Self { biped, gait, gains })
    }

    /// Controller torques and the resulting plant accelerations.
    pub fn evaluate(&self, q: &DVector<f64>, qdot: &DVector<f64>, thrust: f64) -> Result<ClosedLoopEval> {
        let terms = self.biped.pinned_dynamics(q, qdot)?;
        let vi = feedback_linearizing_v(&terms, &self.gait, &self.gains, q, qdot, thrust)?;
        let u = torque_from_v(&terms, &vi.v, thrust)?;
        let qddot = self.biped.pinned_accel(&terms, &u, thrust)?;
        Ok(ClosedLoopEval {
            terms,
            v: vi.v,
            u,
            qddot,
            condition_number: vi.condition_number,
        })
    }

    /// Vector field of `x = [q; q̇]`.
    pub fn vector_field(&self, x: &[f64], thrust: f64, dx: &mut [f64]) -> Result<()> {
        let n = self.biped.dof();
        let q = DVector::from_column_slice(&x[..n]);
        let qd = DVector::from_column_slice(&x[n..2 * n]);
        let e = self.evaluate(&q, &qd, thrust)?;
        dx[..n].copy_from_slice(&x[n..2 * n]);
        dx[n..2 * n].copy_from_slice(e.qddot.as_slice());
        Ok(())
    }

    /// Vector field in momentum coordinates `x = (q_b, q_N, q̇_b, σ_N)`.
    pub fn momentum_vector_field(&self, x: &[f64], thrust: f64, dx: &mut [f64]) -> Result<()> {
        let n = self.biped.dof();
        let q = DVector::from_column_slice(&x[..n]);
        let qd = self.velocity_from_momentum(&q, &x[n..2 * n - 1], x[2 * n - 1])?;
        let terms = self.biped.pinned_dynamics(&q, &qd)?;
        let vi = feedback_linearizing_v(&terms, &self.gait, &self.gains, &q, &qd, thrust)?;
        dx[..n].copy_from_slice(qd.as_slice());
        dx[n..2 * n - 1].copy_from_slice(vi.v.as_slice());
        dx[2 * n - 1] = terms.b_n() * thrust - terms.g[n - 1];
        Ok(())
    }

    /// Recovers `q̇` from `(q, q̇_b, σ_N)`.
    pub fn velocity_from_momentum(&self, q: &DVector<f64>, qdot_b: &[f64], sigma: f64) -> Result<DVector<f64>> {
        let n = self.biped.dof();
        let d = self.biped.inertia(q);
        let d_nn = d[(n - 1, n - 1)];
        if d_nn.abs() < 1e-12 {
            return Err(HzdError::NumericalSingularity(format!("D_NN = {d_nn}")));
        }
        let mut qd = DVector::zeros(n);
        let mut coupling = 0.0;
        for i in 0..n - 1 {
            qd[i] = qdot_b[i];
            coupling += d[(n - 1, i)] * qdot_b[i];
        }
        qd[n - 1] = (sigma - coupling) / d_nn;
        Ok(qd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::ode::Dopri5;
    use proptest::prelude::*;

    fn setup() -> ClosedLoop {
        let gait = crate::gait::tests_support::sample_gait();
        ClosedLoop::new(Biped::new(ModelParams::default()).unwrap(), gait, Gains::default()).unwrap()
    }

    #[test]
    fn gains_serde_forms() {
        let g: Gains = serde_json::from_str(r#"{"epsilon": 0.05, "outputs": 2}"#).unwrap();
        assert!((g.kp[(0, 0)] - 400.0).abs() < 1e-9);
        assert!((g.kd[(1, 1)] - 40.0).abs() < 1e-12);
        let back: Gains = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        let bad = serde_json::from_str::<Gains>(r#"{"kp": [[1, 2], [0, 1]], "kd": [[1, 0], [0, 1]]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn static_equilibrium_balances_gravity() {
        let cl = setup();
        let q = DVector::from_vec(vec![0.3, 0.1, -0.05]);
        let terms = cl.biped.pinned_dynamics(&q, &DVector::zeros(3)).unwrap();
        let u = torque_from_v(&terms, &DVector::zeros(2), 0.0).unwrap();
        let d_bn = terms.d_bn();
        let expected = terms.g.rows(0, 2) - d_bn * (terms.g[2] / terms.d_nn());
        assert!((u - expected).amax() < 1e-12);
    }

    #[test]
    fn torque_affine_in_thrust() {
        let cl = setup();
        let q = DVector::from_vec(vec![0.2, 0.6, -0.1]);
        let qd = DVector::from_vec(vec![0.5, -1.0, 0.9]);
        let terms = cl.biped.pinned_dynamics(&q, &qd).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let u0 = torque_from_v(&terms, &v, 0.0).unwrap();
        let u1 = torque_from_v(&terms, &v, 10.0).unwrap();
        let u2 = torque_from_v(&terms, &v, 20.0).unwrap();
        let slope = terms.b_b() - terms.d_bn() * (terms.b_n() / terms.d_nn());
        assert!((&u1 - &u0 + &slope * 10.0).amax() < 1e-10);
        assert!((&u2 - &u1 - (&u1 - &u0)).amax() < 1e-10);
    }

    #[test]
    fn thrust_cancelled_from_output_dynamics() {
        let cl = setup();
        let q = DVector::from_vec(vec![0.32, 0.7, -0.05]);
        let qd = DVector::from_vec(vec![0.1, -0.3, 1.1]);
        let e0 = cl.evaluate(&q, &qd, 0.0).unwrap();
        let e1 = cl.evaluate(&q, &qd, 30.0).unwrap();
        // ÿ = q̈_b − h' α̈ − h'' α̇² must not depend on thrust
        let ydd = |e: &ClosedLoopEval| {
            let b = cl.gait.eval_alpha(cl.gait.alpha(&q));
            let add = cl.gait.alpha(&e.qddot);
            let ad = cl.gait.alpha(&qd);
            e.qddot.rows(0, 2) - &b.dh * add - &b.ddh * (ad * ad)
        };
        assert!((ydd(&e0) - ydd(&e1)).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn torque_realizes_v(a in -0.6f64..0.6, b in -0.6f64..0.6, c in -0.4f64..0.4,
                             w0 in -2.0f64..2.0, w1 in -2.0f64..2.0, w2 in -2.0f64..2.0,
                             v0 in -50.0f64..50.0, v1 in -50.0f64..50.0, f in -60.0f64..60.0) {
            let cl = setup();
            let q = DVector::from_vec(vec![a, b, c]);
            let qd = DVector::from_vec(vec![w0, w1, w2]);
            let terms = cl.biped.pinned_dynamics(&q, &qd).unwrap();
            let v = DVector::from_vec(vec![v0, v1]);
            let u = torque_from_v(&terms, &v, f).unwrap();
            let qdd = cl.biped.pinned_accel(&terms, &u, f).unwrap();
            prop_assert!((qdd.rows(0, 2) - v).amax() < 1e-9);
        }

        #[test]
        fn closed_loop_output_is_linear(a in -0.15f64..0.15, e0 in -0.05f64..0.05, e1 in -0.05f64..0.05,
                                        ed0 in -0.5f64..0.5, ed1 in -0.5f64..0.5, f in -40.0f64..40.0) {
            let cl = setup();
            let mut q = cl.gait.manifold_configuration(a);
            q[0] += e0;
            q[1] += e1;
            let mut qd = cl.gait.manifold_tangent(a) * 1.2;
            qd[0] += ed0;
            qd[1] += ed1;
            let e = cl.evaluate(&q, &qd, f).unwrap();
            let b = cl.gait.eval_alpha(cl.gait.alpha(&q));
            let ad = cl.gait.alpha(&qd);
            let ydd = e.qddot.rows(0, 2) - &b.dh * cl.gait.alpha(&e.qddot) - &b.ddh * (ad * ad);
            let (y, yd) = cl.gait.output(&q, &qd);
            let residual = ydd + &cl.gains.kd * yd + &cl.gains.kp * y;
            prop_assert!(residual.amax() < 1e-7);
        }
    }

    #[test]
    fn momentum_field_on_manifold_reduces_to_gravity() {
        let cl = setup();
        let alpha = 0.05;
        let q = cl.gait.manifold_configuration(alpha);
        let qd = cl.gait.manifold_tangent(alpha) * 0.8;
        let sigma = cl.biped.angular_momentum(&q, &qd);
        let x: Vec<f64> = q.iter().chain(qd.rows(0, 2).iter()).copied().chain([sigma]).collect();
        let mut dx = vec![0.0; 6];
        cl.momentum_vector_field(&x, 0.0, &mut dx).unwrap();
        let g = cl.biped.gravity_vector(&q);
        assert!((dx[5] + g[2]).abs() < 1e-12);
        let mut dx_f = vec![0.0; 6];
        cl.momentum_vector_field(&x, 25.0, &mut dx_f).unwrap();
        let b_n = cl.biped.thrust_map(&q)[2];
        assert!((dx_f[5] - dx[5] - 25.0 * b_n).abs() < 1e-12);
    }

    /// Output error decays like `ÿ + K_d ẏ + K_p y = 0`; compared with the
    /// analytic critically damped response.
    #[test]
    fn output_error_follows_linear_ode() {
        let cl = setup();
        let eps = 0.05;
        let alpha0 = -0.15;
        let mut q = cl.gait.manifold_configuration(alpha0);
        let y0 = [0.01, -0.008];
        q[0] += y0[0];
        q[1] += y0[1];
        let qd = cl.gait.manifold_tangent(alpha0) * 1.0;
        let x0: Vec<f64> = q.iter().chain(qd.iter()).copied().collect();
        let ode = Dopri5::default();
        let analytic = |t: f64, y0: f64| y0 * (1.0 + t / eps) * (-t / eps).exp();
        for &t_end in &[0.05, 0.1, 0.2] {
            let out = ode
                .integrate(|_t, x, dx| cl.vector_field(x, 7.0, dx), 0.0, &x0, t_end, &[], |_, _| Ok(()))
                .unwrap();
            let qe = DVector::from_column_slice(&out.y[..3]);
            let qde = DVector::from_column_slice(&out.y[3..]);
            let (y, _) = cl.gait.output(&qe, &qde);
            for i in 0..2 {
                assert!((y[i] - analytic(t_end, y0[i])).abs() < 1e-4, "t={t_end} i={i}");
            }
        }
    }

    #[test]
    fn momentum_and_velocity_forms_agree() {
        let cl = setup();
        let alpha0 = -0.18;
        let q = cl.gait.manifold_configuration(alpha0);
        let mut qd = cl.gait.manifold_tangent(alpha0) * 1.1;
        qd[0] += 0.2;
        let sigma = cl.biped.angular_momentum(&q, &qd);
        let x0: Vec<f64> = q.iter().chain(qd.iter()).copied().collect();
        let m0: Vec<f64> = q.iter().chain(qd.rows(0, 2).iter()).copied().chain([sigma]).collect();
        let ode = Dopri5::with_tolerances(1e-11, 1e-11);
        let t_end = 0.3;
        let a = ode
            .integrate(|_t, x, dx| cl.vector_field(x, 12.0, dx), 0.0, &x0, t_end, &[], |_, _| Ok(()))
            .unwrap();
        let b = ode
            .integrate(|_t, x, dx| cl.momentum_vector_field(x, 12.0, dx), 0.0, &m0, t_end, &[], |_, _| Ok(()))
            .unwrap();
        let qa = DVector::from_column_slice(&a.y[..3]);
        let sa = cl.biped.angular_momentum(&qa, &DVector::from_column_slice(&a.y[3..]));
        for i in 0..5 {
            assert!((a.y[i] - b.y[i]).abs() < 1e-7);
        }
        assert!((sa - b.y[5]).abs() < 1e-7);
    }
}
