//! Lagrangian model of the planar three-link walker.
//!
//! The robot is described as a planar chain of point masses whose positions
//! are affine in the unit vectors `e(φ) = (sin φ, cos φ)` of a set of absolute
//! link angles `φ` (measured from the upward vertical, clockwise positive).
//! The generalized coordinates are `q = [q_b; q_N]` with
//!
//! * `q_b[0] = φ_torso − φ_stance` (stance hip joint),
//! * `q_b[1] = φ_torso − φ_swing` (swing hip joint),
//! * `q_N = φ_stance`,
//!
//! so `φ = T q` for a constant matrix `T` and the joint torques enter as
//! `B_τ = [I; 0]`. Leg angles are the direction from foot to hip, so at a
//! symmetric double-support posture `φ_swing = −φ_stance`.
//!
//! For a chain of this form the inertia matrix in absolute angles is
//! `D_φ[j][l] = M[j][l] cos(φ_j − φ_l)` with `M = Σ_k m_k c_k c_kᵀ`, and the
//! Christoffel Coriolis matrix is `C_φ[j][l] = M[j][l] sin(φ_j − φ_l) φ̇_l`.
//! Both are pulled back to `q` with `T`. The derivation is in
//! `docs/dynamics.md`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{HzdError, Result};

/// Frame in which the thrust direction angle is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThrustFrame {
    #[default]
    World,
    /// Rotates with the torso; `thruster_angle_theta` is the world angle when the torso is upright.
    Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub leg_mass: f64,
    pub hip_mass: f64,
    pub torso_mass: f64,
    pub leg_length: f64,
    pub torso_length: f64,
    /// Distance of the leg mass from the hip as a fraction of the leg length.
    pub leg_com_ratio: f64,
    pub gravity: f64,
    /// Thruster attachment in torso coordinates: (along the torso from the hip, perpendicular).
    pub thruster_mount: [f64; 2],
    /// Angle between the horizontal axis and the thrust line (rad).
    pub thruster_angle_theta: f64,
    pub friction_mu: f64,
    #[serde(default)]
    pub thrust_frame: ThrustFrame,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            leg_mass: 5.0,
            hip_mass: 15.0,
            torso_mass: 10.0,
            leg_length: 1.0,
            torso_length: 0.5,
            leg_com_ratio: 0.5,
            gravity: 9.81,
            thruster_mount: [0.5, 0.0],
            thruster_angle_theta: std::f64::consts::FRAC_PI_2,
            friction_mu: 0.7,
            thrust_frame: ThrustFrame::World,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("leg_mass", self.leg_mass),
            ("hip_mass", self.hip_mass),
            ("torso_mass", self.torso_mass),
            ("leg_length", self.leg_length),
            ("torso_length", self.torso_length),
            ("gravity", self.gravity),
            ("friction_mu", self.friction_mu),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(HzdError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.leg_com_ratio > 0.0 && self.leg_com_ratio <= 1.0) {
            return Err(HzdError::InvalidParams(format!(
                "leg_com_ratio must lie in (0, 1], got {}",
                self.leg_com_ratio
            )));
        }
        if !self.thruster_mount.iter().all(|v| v.is_finite()) || !self.thruster_angle_theta.is_finite() {
            return Err(HzdError::InvalidParams("thruster geometry must be finite".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        2.0 * self.leg_mass + self.hip_mass + self.torso_mass
    }
}

/// Pinned (stance foot fixed) Euler–Lagrange terms.
#[derive(Debug, Clone)]
pub struct PinnedTerms {
    pub d: DMatrix<f64>,
    /// Christoffel Coriolis matrix, `C(q, q̇) q̇` is the velocity term of `Ω`.
    pub c: DMatrix<f64>,
    pub g: DVector<f64>,
    /// `Ω = C(q, q̇) q̇ + G(q)`.
    pub omega: DVector<f64>,
    pub b_tau: DMatrix<f64>,
    /// Generalized force of a unit thrust, `[b_b; b_N]`.
    pub b_f: DVector<f64>,
}

impl PinnedTerms {
    pub fn dof(&self) -> usize {
        self.d.nrows()
    }
    pub fn d_bb(&self) -> DMatrix<f64> {
        let n = self.dof();
        self.d.view((0, 0), (n - 1, n - 1)).into_owned()
    }
    pub fn d_bn(&self) -> DVector<f64> {
        let n = self.dof();
        self.d.view((0, n - 1), (n - 1, 1)).column(0).into_owned()
    }
    pub fn d_nn(&self) -> f64 {
        let n = self.dof();
        self.d[(n - 1, n - 1)]
    }
    pub fn omega_b(&self) -> DVector<f64> {
        self.omega.rows(0, self.dof() - 1).into_owned()
    }
    pub fn omega_n(&self) -> f64 {
        self.omega[self.dof() - 1]
    }
    pub fn b_b(&self) -> DVector<f64> {
        self.b_f.rows(0, self.dof() - 1).into_owned()
    }
    pub fn b_n(&self) -> f64 {
        self.b_f[self.dof() - 1]
    }
}

/// Unpinned terms in `q_u = [q_b; q_N; x_1; y_1]`.
#[derive(Debug, Clone)]
pub struct UnpinnedTerms {
    pub d: DMatrix<f64>,
    pub omega: DVector<f64>,
    pub g: DVector<f64>,
    /// Input map of `[u; F_T]` with the translational thrust lumped into `F_r`.
    pub b1: DMatrix<f64>,
    /// Thrust direction `[b_x; b_y]`.
    pub b_fu: Vector2<f64>,
    /// Swing-foot Jacobian `∂p_2/∂q_u`.
    pub e2: DMatrix<f64>,
}

/// A point on the chain: `p = p_1 + Σ_j coef[j] e(φ_j) + perp[j] e'(φ_j)`.
#[derive(Debug, Clone)]
struct ChainPoint {
    coef: Vec<f64>,
    perp: Vec<f64>,
}

impl ChainPoint {
    fn along(coef: Vec<f64>) -> Self {
        let perp = vec![0.0; coef.len()];
        Self { coef, perp }
    }

    fn position(&self, phi: &[f64]) -> Vector2<f64> {
        let mut p = Vector2::zeros();
        for (j, &a) in phi.iter().enumerate() {
            let (s, c) = a.sin_cos();
            p += self.coef[j] * Vector2::new(s, c) + self.perp[j] * Vector2::new(c, -s);
        }
        p
    }

    /// Derivative of the position with respect to the absolute angles (2 × n).
    fn jacobian_phi(&self, phi: &[f64]) -> DMatrix<f64> {
        let mut j_phi = DMatrix::zeros(2, phi.len());
        for (j, &a) in phi.iter().enumerate() {
            let (s, c) = a.sin_cos();
            j_phi[(0, j)] = self.coef[j] * c - self.perp[j] * s;
            j_phi[(1, j)] = -self.coef[j] * s - self.perp[j] * c;
        }
        j_phi
    }
}

/// The walker built from [`ModelParams`]; all methods are pure.
#[derive(Debug, Clone)]
pub struct Biped {
    params: ModelParams,
    /// `φ = T q`.
    t: DMatrix<f64>,
    /// Relabeling map `q⁺ = R q` (swap of stance and swing legs).
    relabel: DMatrix<f64>,
    masses: Vec<(f64, ChainPoint)>,
    /// `M[j][l] = Σ m c_j c_l`.
    m_coupling: DMatrix<f64>,
    /// `w[j] = Σ m c_j`.
    w: DVector<f64>,
    swing_foot: ChainPoint,
    mount: ChainPoint,
    hip: ChainPoint,
    torso_index: usize,
}

fn check_finite(name: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HzdError::InvalidState(format!("{name} contains non-finite entries")))
    }
}

impl Biped {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let l = params.leg_length;
        let r = params.torso_length;
        let rho = params.leg_com_ratio;
        // absolute angles: [stance, swing, torso]
        let t = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 1.0, -1.0, 1.0, 1.0, 0.0, 1.0]);
        let perm = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| HzdError::InvalidParams("coordinate map is singular".into()))?;
        let relabel = &t_inv * perm * &t;

        let masses = vec![
            (params.leg_mass, ChainPoint::along(vec![(1.0 - rho) * l, 0.0, 0.0])),
            (params.hip_mass, ChainPoint::along(vec![l, 0.0, 0.0])),
            (params.torso_mass, ChainPoint::along(vec![l, 0.0, r])),
            (params.leg_mass, ChainPoint::along(vec![l, -rho * l, 0.0])),
        ];
        let n = 3;
        let mut m_coupling = DMatrix::zeros(n, n);
        let mut w = DVector::zeros(n);
        for (m, p) in &masses {
            for j in 0..n {
                w[j] += m * p.coef[j];
                for k in 0..n {
                    m_coupling[(j, k)] += m * p.coef[j] * p.coef[k];
                }
            }
        }
        let mount = ChainPoint {
            coef: vec![l, 0.0, params.thruster_mount[0]],
            perp: vec![0.0, 0.0, params.thruster_mount[1]],
        };
        Ok(Self {
            t,
            relabel,
            masses,
            m_coupling,
            w,
            swing_foot: ChainPoint::along(vec![l, -l, 0.0]),
            mount,
            hip: ChainPoint::along(vec![l, 0.0, 0.0]),
            torso_index: 2,
            params,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Number of pinned degrees of freedom `N`.
    pub fn dof(&self) -> usize {
        self.t.ncols()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().map(|(m, _)| m).sum()
    }

    pub fn abs_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        (&self.t * q).iter().copied().collect()
    }

    pub fn coordinate_map(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn relabel_matrix(&self) -> &DMatrix<f64> {
        &self.relabel
    }

    fn thrust_direction(&self, phi: &[f64]) -> Vector2<f64> {
        let th = match self.params.thrust_frame {
            ThrustFrame::World => self.params.thruster_angle_theta,
            ThrustFrame::Body => self.params.thruster_angle_theta - phi[self.torso_index],
        };
        Vector2::new(th.cos(), th.sin())
    }

    fn inertia_phi(&self, phi: &[f64]) -> DMatrix<f64> {
        let n = phi.len();
        DMatrix::from_fn(n, n, |j, l| self.m_coupling[(j, l)] * (phi[j] - phi[l]).cos())
    }

    /// Inertia matrix `D(q)`; depends on `q_b` only.
    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let phi = self.abs_angles(q);
        self.t.transpose() * self.inertia_phi(&phi) * &self.t
    }

    /// Gravity vector `G(q) = ∂V/∂q`.
    pub fn gravity_vector(&self, q: &DVector<f64>) -> DVector<f64> {
        let phi = self.abs_angles(q);
        let g = self.params.gravity;
        let g_phi = DVector::from_fn(phi.len(), |j, _| -g * self.w[j] * phi[j].sin());
        self.t.transpose() * g_phi
    }

    pub fn pinned_dynamics(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<PinnedTerms> {
        let n = self.dof();
        if q.len() != n || qdot.len() != n {
            return Err(HzdError::InvalidState(format!("expected {n}-vectors")));
        }
        check_finite("q", q)?;
        check_finite("qdot", qdot)?;
        let phi = self.abs_angles(q);
        let phid = &self.t * qdot;
        let d_phi = self.inertia_phi(&phi);
        let c_phi = DMatrix::from_fn(n, n, |j, l| self.m_coupling[(j, l)] * (phi[j] - phi[l]).sin() * phid[l]);
        let tt = self.t.transpose();
        let d = &tt * d_phi * &self.t;
        let c = &tt * c_phi * &self.t;
        let g = self.gravity_vector(q);
        let omega = &c * qdot + &g;
        let mut b_tau = DMatrix::zeros(n, n - 1);
        for i in 0..n - 1 {
            b_tau[(i, i)] = 1.0;
        }
        let b_f = self.thrust_map(q);
        Ok(PinnedTerms {
            d,
            c,
            g,
            omega,
            b_tau,
            b_f,
        })
    }

    /// Generalized force of a unit thrust, `B_F(q)`.
    pub fn thrust_map(&self, q: &DVector<f64>) -> DVector<f64> {
        let phi = self.abs_angles(q);
        let dir = self.thrust_direction(&phi);
        let j_mount = self.mount.jacobian_phi(&phi) * &self.t;
        j_mount.transpose() * DVector::from_column_slice(dir.as_slice())
    }

    /// Unit thrust direction `[b_x; b_y]` in the world frame.
    pub fn thrust_vector(&self, q: &DVector<f64>) -> Vector2<f64> {
        self.thrust_direction(&self.abs_angles(q))
    }

    /// Kinetic and potential energy (stance foot at the origin).
    pub fn total_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> (f64, f64) {
        let d = self.inertia(q);
        let ke = 0.5 * qdot.dot(&(d * qdot));
        (ke, self.potential_energy(q))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let phi = self.abs_angles(q);
        self.params.gravity * phi.iter().enumerate().map(|(j, a)| self.w[j] * a.cos()).sum::<f64>()
    }

    /// Angular momentum about the stance foot, `σ_N = [D_Nb D_NN] q̇`.
    pub fn angular_momentum(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        let n = self.dof();
        (self.inertia(q) * qdot)[n - 1]
    }

    /// Unconstrained accelerations of the pinned model, `q̈ = D⁻¹(B_τ u + B_F F_T − Ω)`.
    pub fn pinned_accel(&self, terms: &PinnedTerms, u: &DVector<f64>, thrust: f64) -> Result<DVector<f64>> {
        let rhs = &terms.b_tau * u + &terms.b_f * thrust - &terms.omega;
        terms
            .d
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| HzdError::NumericalSingularity("pinned inertia not positive definite".into()))
    }

    /// Swing foot position and Jacobian in unpinned coordinates.
    pub fn swing_foot_position(&self, q_u: &DVector<f64>) -> Result<(Vector2<f64>, DMatrix<f64>)> {
        let n = self.dof();
        if q_u.len() != n + 2 {
            return Err(HzdError::InvalidState(format!("expected {}-vector", n + 2)));
        }
        check_finite("q_u", q_u)?;
        let q = q_u.rows(0, n).into_owned();
        let phi = self.abs_angles(&q);
        let p = Vector2::new(q_u[n], q_u[n + 1]) + self.swing_foot.position(&phi);
        let mut e2 = DMatrix::zeros(2, n + 2);
        let j = self.swing_foot.jacobian_phi(&phi) * &self.t;
        e2.view_mut((0, 0), (2, n)).copy_from(&j);
        e2[(0, n)] = 1.0;
        e2[(1, n + 1)] = 1.0;
        Ok((p, e2))
    }

    /// Configuration with both feet on the ground for given joint angles.
    pub fn double_support_configuration(&self, q_b: &[f64]) -> DVector<f64> {
        // swing leg mirrored about the vertical: φ_swing = −φ_stance
        let q_n = 0.5 * (q_b[1] - q_b[0]);
        DVector::from_vec(vec![q_b[0], q_b[1], q_n])
    }

    /// Swing foot height above the stance foot for pinned coordinates.
    pub fn swing_foot_height(&self, q: &DVector<f64>) -> f64 {
        let phi = self.abs_angles(q);
        self.swing_foot.position(&phi)[1]
    }

    pub fn swing_foot_offset(&self, q: &DVector<f64>) -> Vector2<f64> {
        let phi = self.abs_angles(q);
        self.swing_foot.position(&phi)
    }

    /// Swing foot vertical velocity for pinned coordinates.
    pub fn swing_foot_vertical_velocity(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        let phi = self.abs_angles(q);
        let j = self.swing_foot.jacobian_phi(&phi) * &self.t;
        (j.row(1) * qdot)[0]
    }

    pub fn hip_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        self.hip.position(&self.abs_angles(q))
    }

    pub fn mount_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        self.mount.position(&self.abs_angles(q))
    }

    /// Horizontal center-of-mass offset from the stance foot.
    pub fn com_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        let phi = self.abs_angles(q);
        let mut p = Vector2::zeros();
        for (m, pt) in &self.masses {
            p += *m * pt.position(&phi);
        }
        p / self.total_mass()
    }

    pub fn unpinned_dynamics(&self, q_u: &DVector<f64>, q_u_dot: &DVector<f64>) -> Result<UnpinnedTerms> {
        let n = self.dof();
        if q_u.len() != n + 2 || q_u_dot.len() != n + 2 {
            return Err(HzdError::InvalidState(format!("expected {}-vectors", n + 2)));
        }
        check_finite("q_u", q_u)?;
        check_finite("q_u_dot", q_u_dot)?;
        let q = q_u.rows(0, n).into_owned();
        let qd = q_u_dot.rows(0, n).into_owned();
        let pinned = self.pinned_dynamics(&q, &qd)?;
        let phi = self.abs_angles(&q);
        let phid = &self.t * &qd;
        let m_tot = self.total_mass();

        // coupling between angle rates and foot translation
        let mut w_mat = DMatrix::zeros(n, 2);
        for j in 0..n {
            let (s, c) = phi[j].sin_cos();
            w_mat[(j, 0)] = self.w[j] * c;
            w_mat[(j, 1)] = -self.w[j] * s;
        }
        let coupling = self.t.transpose() * w_mat;
        let mut d = DMatrix::zeros(n + 2, n + 2);
        d.view_mut((0, 0), (n, n)).copy_from(&pinned.d);
        d.view_mut((0, n), (n, 2)).copy_from(&coupling);
        d.view_mut((n, 0), (2, n)).copy_from(&coupling.transpose());
        d[(n, n)] = m_tot;
        d[(n + 1, n + 1)] = m_tot;

        let mut g = DVector::zeros(n + 2);
        g.rows_mut(0, n).copy_from(&pinned.g);
        g[n + 1] = m_tot * self.params.gravity;

        let mut omega = g.clone();
        let cq = &pinned.c * &qd;
        for i in 0..n {
            omega[i] += cq[i];
        }
        for j in 0..n {
            let (s, c) = phi[j].sin_cos();
            omega[n] -= self.w[j] * phid[j] * phid[j] * s;
            omega[n + 1] -= self.w[j] * phid[j] * phid[j] * c;
        }

        let mut b1 = DMatrix::zeros(n + 2, n);
        for i in 0..n - 1 {
            b1[(i, i)] = 1.0;
        }
        for i in 0..n {
            b1[(i, n - 1)] = pinned.b_f[i];
        }
        let (_, e2) = self.swing_foot_position(q_u)?;
        Ok(UnpinnedTerms {
            d,
            omega,
            g,
            b1,
            b_fu: self.thrust_direction(&phi),
            e2,
        })
    }

    /// Leg exchange: the swing leg becomes the stance leg.
    pub fn relabel(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.relabel * q, &self.relabel * qdot)
    }
}

/// Embeds pinned coordinates into unpinned ones with the stance foot at `foot`.
pub fn to_unpinned(q: &DVector<f64>, qdot: &DVector<f64>, foot: Vector2<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = q.len();
    let mut qu = DVector::zeros(n + 2);
    qu.rows_mut(0, n).copy_from(q);
    qu[n] = foot[0];
    qu[n + 1] = foot[1];
    let mut qud = DVector::zeros(n + 2);
    qud.rows_mut(0, n).copy_from(qdot);
    (qu, qud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn biped() -> Biped {
        Biped::new(ModelParams::default()).unwrap()
    }

    /// Independent energy-based oracle: point-mass positions and velocities
    /// written out by hand, inertia from polarization of the kinetic energy,
    /// Christoffel symbols and gravity from five-point finite differences.
    mod oracle {
        use super::*;

        type Point = (f64, [f64; 2], [f64; 2]);

        pub fn points(p: &ModelParams, q: &[f64], qd: &[f64]) -> Vec<Point> {
            let (l, r, rho) = (p.leg_length, p.torso_length, p.leg_com_ratio);
            let stance = q[2];
            let torso = q[2] + q[0];
            let swing = q[2] + q[0] - q[1];
            let (ws, wt, ww) = (qd[2], qd[2] + qd[0], qd[2] + qd[0] - qd[1]);
            let hip = [l * stance.sin(), l * stance.cos()];
            let hip_v = [l * stance.cos() * ws, -l * stance.sin() * ws];
            let k = 1.0 - rho;
            vec![
                (
                    p.leg_mass,
                    [k * l * stance.sin(), k * l * stance.cos()],
                    [k * l * stance.cos() * ws, -k * l * stance.sin() * ws],
                ),
                (p.hip_mass, hip, hip_v),
                (
                    p.torso_mass,
                    [hip[0] + r * torso.sin(), hip[1] + r * torso.cos()],
                    [hip_v[0] + r * torso.cos() * wt, hip_v[1] - r * torso.sin() * wt],
                ),
                (
                    p.leg_mass,
                    [hip[0] - rho * l * swing.sin(), hip[1] - rho * l * swing.cos()],
                    [hip_v[0] - rho * l * swing.cos() * ww, hip_v[1] + rho * l * swing.sin() * ww],
                ),
            ]
        }

        pub fn kinetic(p: &ModelParams, q: &[f64], qd: &[f64]) -> f64 {
            points(p, q, qd).iter().map(|(m, _, v)| 0.5 * m * (v[0] * v[0] + v[1] * v[1])).sum()
        }

        pub fn potential(p: &ModelParams, q: &[f64]) -> f64 {
            points(p, q, &[0.0; 3]).iter().map(|(m, x, _)| m * p.gravity * x[1]).sum()
        }

        pub fn inertia(p: &ModelParams, q: &[f64]) -> [[f64; 3]; 3] {
            let mut d = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let mut e = [0.0; 3];
                    e[i] += 1.0;
                    e[j] += 1.0;
                    let mut ei = [0.0; 3];
                    ei[i] = 1.0;
                    let mut ej = [0.0; 3];
                    ej[j] = 1.0;
                    d[i][j] = kinetic(p, q, &e) - kinetic(p, q, &ei) - kinetic(p, q, &ej);
                }
            }
            d
        }

        /// Five-point central difference of `f` along coordinate `k`.
        pub fn diff<T, F>(f: F, q: &[f64], k: usize) -> T
        where
            F: Fn(&[f64]) -> T,
            T: std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
        {
            let h = 1e-3;
            let at = |s: f64| {
                let mut x = q.to_vec();
                x[k] += s * h;
                f(&x)
            };
            (at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) * (1.0 / (12.0 * h))
        }

        pub fn inertia_partials(p: &ModelParams, q: &[f64]) -> [DMatrix<f64>; 3] {
            let d = |x: &[f64]| {
                let a = inertia(p, x);
                DMatrix::from_fn(3, 3, |i, j| a[i][j])
            };
            [diff(d, q, 0), diff(d, q, 1), diff(d, q, 2)]
        }

        pub fn coriolis(p: &ModelParams, q: &[f64], qd: &[f64]) -> [[f64; 3]; 3] {
            let dd = inertia_partials(p, q);
            let mut c = [[0.0; 3]; 3];
            for k in 0..3 {
                for j in 0..3 {
                    for i in 0..3 {
                        c[k][j] += 0.5 * (dd[i][(k, j)] + dd[j][(k, i)] - dd[k][(i, j)]) * qd[i];
                    }
                }
            }
            c
        }

        pub fn gravity(p: &ModelParams, q: &[f64]) -> [f64; 3] {
            let v = |x: &[f64]| potential(p, x);
            [diff(v, q, 0), diff(v, q, 1), diff(v, q, 2)]
        }
    }

    #[test]
    fn gravity_only_at_rest() {
        let b = biped();
        let q = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let t = b.pinned_dynamics(&q, &DVector::zeros(3)).unwrap();
        assert!((t.omega - &t.g).norm() < 1e-15);
        let t0 = b.pinned_dynamics(&DVector::zeros(3), &DVector::zeros(3)).unwrap();
        assert!(t0.g.norm() < 1e-12, "upright posture is an equilibrium");
    }

    #[test]
    fn b_tau_block_identity() {
        let b = biped();
        let t = b.pinned_dynamics(&DVector::from_vec(vec![0.1, 0.2, 0.3]), &DVector::zeros(3)).unwrap();
        assert_eq!(t.b_tau, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn matches_energy_oracle() {
        let p = ModelParams::default();
        let b = Biped::new(p.clone()).unwrap();
        let samples = [
            ([0.3, -0.4, 0.2], [1.0, -0.5, 0.7]),
            ([-0.6, 0.9, -0.1], [-2.0, 0.3, 1.1]),
            ([1.1, 0.2, 0.5], [0.4, 1.8, -0.9]),
        ];
        for (q, qd) in samples {
            let qv = DVector::from_column_slice(&q);
            let qdv = DVector::from_column_slice(&qd);
            let t = b.pinned_dynamics(&qv, &qdv).unwrap();
            let d_or = oracle::inertia(&p, &q);
            let c_or = oracle::coriolis(&p, &q, &qd);
            let g_or = oracle::gravity(&p, &q);
            for i in 0..3 {
                assert!((t.g[i] - g_or[i]).abs() < 1e-10, "G[{i}]");
                for j in 0..3 {
                    assert!((t.d[(i, j)] - d_or[i][j]).abs() < 1e-10, "D[{i}][{j}]");
                    assert!((t.c[(i, j)] - c_or[i][j]).abs() < 1e-10, "C[{i}][{j}]");
                }
            }
            let (ke, pe) = b.total_energy(&qv, &qdv);
            assert!((pe - oracle::potential(&p, &q)).abs() < 1e-12);
            assert!((ke - oracle::kinetic(&p, &q, &qd)).abs() < 1e-10);
        }
    }

    #[test]
    fn inertia_rate_minus_twice_coriolis_is_skew() {
        let p = ModelParams::default();
        let b = Biped::new(p.clone()).unwrap();
        let q = [0.2, -0.7, 0.4];
        let qd = [1.3, -0.6, 0.9];
        let t = b.pinned_dynamics(&DVector::from_column_slice(&q), &DVector::from_column_slice(&qd)).unwrap();
        let dd = oracle::inertia_partials(&p, &q);
        let d_rate = &dd[0] * qd[0] + &dd[1] * qd[1] + &dd[2] * qd[2];
        let n = d_rate - &t.c * 2.0;
        assert!((&n + n.transpose()).norm() < 1e-9);
    }

    #[test]
    fn top_left_block_of_unpinned_is_pinned() {
        let b = biped();
        let q = DVector::from_vec(vec![0.2, 0.5, -0.3]);
        let qd = DVector::from_vec(vec![0.4, -1.0, 0.8]);
        let (qu, qud) = to_unpinned(&q, &qd, Vector2::new(0.7, 0.0));
        let u = b.unpinned_dynamics(&qu, &qud).unwrap();
        let p = b.pinned_dynamics(&q, &qd).unwrap();
        assert!((u.d.view((0, 0), (3, 3)) - &p.d).norm() < 1e-14);
        assert!((u.omega.rows(0, 3) - &p.omega).norm() < 1e-13);
        assert_eq!(u.b1.view((3, 0), (2, 3)).norm(), 0.0);
    }

    #[test]
    fn translation_invariance() {
        let b = biped();
        let q = DVector::from_vec(vec![0.2, 0.5, -0.3]);
        let qd = DVector::from_vec(vec![0.4, -1.0, 0.8]);
        let (qu, qud) = to_unpinned(&q, &qd, Vector2::zeros());
        let (qu2, _) = to_unpinned(&q, &qd, Vector2::new(3.0, -1.5));
        let a = b.unpinned_dynamics(&qu, &qud).unwrap();
        let c = b.unpinned_dynamics(&qu2, &qud).unwrap();
        assert!((a.d - c.d).norm() < 1e-14);
        assert!((a.omega - c.omega).norm() < 1e-13);
    }

    #[test]
    fn unpinned_velocity_terms_vanish_at_rest() {
        let b = biped();
        let (qu, qud) = to_unpinned(&DVector::from_vec(vec![0.3, 0.1, 0.2]), &DVector::zeros(3), Vector2::zeros());
        let u = b.unpinned_dynamics(&qu, &qud).unwrap();
        assert!((u.omega - u.g).norm() < 1e-14);
    }

    /// Unpinned dynamics plus the constraint force that holds the stance foot
    /// reproduce the pinned accelerations.
    #[test]
    fn constrained_unpinned_reproduces_pinned() {
        let b = biped();
        let q = DVector::from_vec(vec![0.25, -0.4, 0.15]);
        let qd = DVector::from_vec(vec![-0.7, 1.3, 0.9]);
        let u_in = DVector::from_vec(vec![3.0, -7.0]);
        let thrust = 12.0;
        let pinned = b.pinned_dynamics(&q, &qd).unwrap();
        let qdd = b.pinned_accel(&pinned, &u_in, thrust).unwrap();

        let (qu, qud) = to_unpinned(&q, &qd, Vector2::zeros());
        let un = b.unpinned_dynamics(&qu, &qud).unwrap();
        let mut input = DVector::zeros(3);
        input[0] = u_in[0];
        input[1] = u_in[1];
        input[2] = thrust;
        // solve [D_u, -P^T; P, 0] [qdd_u; F] = [B1 in - Ω; 0] with P selecting (x1, y1)
        let n = 5;
        let mut k = DMatrix::zeros(n + 2, n + 2);
        k.view_mut((0, 0), (n, n)).copy_from(&un.d);
        k[(3, 5)] = -1.0;
        k[(4, 6)] = -1.0;
        k[(5, 3)] = 1.0;
        k[(6, 4)] = 1.0;
        let mut rhs = DVector::zeros(n + 2);
        rhs.rows_mut(0, n).copy_from(&(&un.b1 * input - &un.omega));
        let sol = k.lu().solve(&rhs).unwrap();
        assert!((sol.rows(0, 3) - qdd).norm() < 1e-10);
    }

    #[test]
    fn swing_foot_coincides_with_stance_when_legs_parallel() {
        let b = biped();
        // equal absolute leg angles: q_b0 == q_b1
        let q = DVector::from_vec(vec![0.4, 0.4, 0.2]);
        let (qu, _) = to_unpinned(&q, &DVector::zeros(3), Vector2::new(1.2, 0.3));
        let (p2, _) = b.swing_foot_position(&qu).unwrap();
        assert!((p2 - Vector2::new(1.2, 0.3)).norm() < 1e-14);
        let (p2v, _) = b.swing_foot_position(&DVector::from_vec(vec![0.0, 0.0, 0.0, 0.5, 0.0])).unwrap();
        assert!((p2v - Vector2::new(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn swing_foot_jacobian_matches_finite_differences() {
        let b = biped();
        let qu = DVector::from_vec(vec![0.3, -0.8, 0.25, 0.4, -0.1]);
        let (_, e2) = b.swing_foot_position(&qu).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            let mut qp = qu.clone();
            let mut qm = qu.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (b.swing_foot_position(&qp).unwrap().0 - b.swing_foot_position(&qm).unwrap().0) / (2.0 * h);
            assert!((e2.column(k) - fd).norm() < 1e-6);
        }
    }

    #[test]
    fn double_support_has_swing_foot_on_ground() {
        let b = biped();
        let q = b.double_support_configuration(&[0.1, 0.6]);
        assert!(b.swing_foot_height(&q).abs() < 1e-15);
        assert!(b.swing_foot_offset(&q)[0] > 0.0);
    }

    #[test]
    fn relabel_is_involution() {
        let b = biped();
        let q = DVector::from_vec(vec![0.31, -0.12, 0.27]);
        let qd = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let (q1, qd1) = b.relabel(&q, &qd);
        let (q2, qd2) = b.relabel(&q1, &qd1);
        assert!((q2 - &q).norm() < 1e-15);
        assert!((qd2 - &qd).norm() < 1e-15);
        // legs parallel is a fixed point
        let sym = DVector::from_vec(vec![0.2, 0.2, 0.1]);
        assert!((b.relabel(&sym, &qd).0 - &sym).norm() < 1e-15);
        // the old swing foot becomes the new stance foot
        let p2 = b.swing_foot_offset(&q);
        let p_old_stance = p2 + b.swing_foot_offset(&q1);
        assert!(p_old_stance.norm() < 1e-14);
    }

    #[test]
    fn non_finite_input_rejected() {
        let b = biped();
        let q = DVector::from_vec(vec![f64::NAN, 0.0, 0.0]);
        assert!(matches!(
            b.pinned_dynamics(&q, &DVector::zeros(3)),
            Err(HzdError::InvalidState(_))
        ));
    }

    #[test]
    fn params_validation() {
        let p = ModelParams { leg_com_ratio: 0.0, ..Default::default() };
        assert!(Biped::new(p).is_err());
        let p = ModelParams { hip_mass: -1.0, ..Default::default() };
        assert!(Biped::new(p).is_err());
        let json = serde_json::to_string(&ModelParams::default()).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ModelParams::default());
    }

    #[test]
    fn momentum_is_linear_in_velocity() {
        let b = biped();
        let q = DVector::from_vec(vec![0.1, 0.6, -0.2]);
        let qd = DVector::from_vec(vec![0.3, -0.2, 1.4]);
        assert_eq!(b.angular_momentum(&q, &DVector::zeros(3)), 0.0);
        let s1 = b.angular_momentum(&q, &qd);
        let s2 = b.angular_momentum(&q, &(&qd * 2.0));
        assert!((s2 - 2.0 * s1).abs() < 1e-13);
    }

    /// With no inputs the stance-pivot momentum obeys dσ_N/dt = −∂V/∂q_N,
    /// and total energy is conserved.
    #[test]
    fn ballistic_momentum_rate_and_energy() {
        use crate::ode::Dopri5;
        let b = biped();
        let q0 = [0.3, -0.2, -0.15];
        let qd0 = [0.5, -0.4, 1.0];
        let y0: Vec<f64> = q0.iter().chain(qd0.iter()).copied().collect();
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let q = DVector::from_column_slice(&y[..3]);
            let qd = DVector::from_column_slice(&y[3..]);
            let t = b.pinned_dynamics(&q, &qd)?;
            let qdd = b.pinned_accel(&t, &DVector::zeros(2), 0.0)?;
            dy[..3].copy_from_slice(qd.as_slice());
            dy[3..].copy_from_slice(qdd.as_slice());
            Ok(())
        };
        let mut samples = Vec::new();
        let ode = Dopri5::with_tolerances(1e-12, 1e-12);
        ode.integrate(rhs, 0.0, &y0, 0.4, &[], |t, y| {
            samples.push((t, y.to_vec()));
            Ok(())
        })
        .unwrap();
        let energy = |y: &[f64]| {
            let (k, v) = b.total_energy(&DVector::from_column_slice(&y[..3]), &DVector::from_column_slice(&y[3..]));
            k + v
        };
        let e0 = energy(&y0);
        for (_, y) in &samples {
            assert!((energy(y) - e0).abs() < 1e-8 * e0.abs().max(1.0));
        }
        // σ̇_N by differentiating σ_N along a trajectory re-integrated on a fine grid
        let sigma = |y: &[f64]| b.angular_momentum(&DVector::from_column_slice(&y[..3]), &DVector::from_column_slice(&y[3..]));
        let state_at = |t: f64| {
            ode.integrate(rhs, 0.0, &y0, t, &[], |_, _| Ok(())).unwrap().y
        };
        for &t in &[0.1, 0.2, 0.3] {
            let h = 1e-4;
            let rate = (sigma(&state_at(t + h)) - sigma(&state_at(t - h))) / (2.0 * h);
            let y = state_at(t);
            let g = b.gravity_vector(&DVector::from_column_slice(&y[..3]));
            assert!((rate + g[2]).abs() < 1e-5, "t={t}: {rate} vs {}", -g[2]);
        }
    }

    proptest! {
        #[test]
        fn inertia_symmetric_positive_definite(a in -1.5f64..1.5, b_ in -1.5f64..1.5, c in -1.5f64..1.5) {
            let b = biped();
            let d = b.inertia(&DVector::from_vec(vec![a, b_, c]));
            prop_assert!((&d - d.transpose()).norm() < 1e-12);
            prop_assert!(d.symmetric_eigenvalues().min() > 0.0);
        }

        #[test]
        fn thrust_direction_unit_norm(theta in -7.0f64..7.0) {
            let b = Biped::new(ModelParams { thruster_angle_theta: theta, ..ModelParams::default() }).unwrap();
            let (qu, qud) = to_unpinned(&DVector::from_vec(vec![0.1, 0.2, 0.3]), &DVector::zeros(3), Vector2::zeros());
            let u = b.unpinned_dynamics(&qu, &qud).unwrap();
            prop_assert!((u.b_fu.norm() - 1.0).abs() < 1e-14);
            prop_assert!((u.b_fu - Vector2::new(theta.cos(), theta.sin())).norm() < 1e-14);
        }
    }
}
