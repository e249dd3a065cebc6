//! Thruster-augmented hybrid zero dynamics in the coordinates `(α, ζ)`,
//! `ζ = σ_N²/2`.
//!
//! On the constraint surface `α̇ = κ1(α) σ_N` and `σ̇_N = κ2(α) + T`, where
//! `T = b_N F_T` is the generalized thrust. With `α` as the independent
//! variable this becomes `dζ/dα = (κ2 + T)/κ1`, which is integrated in closed
//! form for piecewise-constant thrust.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HzdError, Result};
use crate::gait::GaitParams;
use crate::hybrid::impact_map;
use crate::model::Biped;
use crate::ode::{Crossing, Dopri5, Event};
use crate::quad;

const QUAD_TOL: f64 = 1e-10;
const TABLE_INTERVALS: usize = 256;

/// What the schedule values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThrustChannel {
    /// Values are `T_j = b_N F_T` (momentum rate).
    #[default]
    Generalized,
    /// Values are physical thrust `F_T` in newtons.
    Physical,
}

/// Piecewise-constant thrust in `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrusterSchedule {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub channel: ThrustChannel,
}

impl ThrusterSchedule {
    pub fn constant(alpha_i: f64, alpha_f: f64, value: f64, channel: ThrustChannel) -> Self {
        Self {
            breakpoints: vec![alpha_i, alpha_f],
            values: vec![value],
            channel,
        }
    }

    pub fn zero(alpha_i: f64, alpha_f: f64) -> Self {
        Self::constant(alpha_i, alpha_f, 0.0, ThrustChannel::Generalized)
    }

    pub fn validate(&self, alpha_i: f64, alpha_f: f64) -> Result<()> {
        let n = self.breakpoints.len();
        if n < 2 || self.values.len() != n - 1 {
            return Err(HzdError::InfeasibleSchedule(format!(
                "{n} breakpoints need {} values, got {}",
                n.saturating_sub(1),
                self.values.len()
            )));
        }
        if self.values.iter().chain(&self.breakpoints).any(|v| !v.is_finite()) {
            return Err(HzdError::InfeasibleSchedule("non-finite schedule entry".into()));
        }
        let tol = 1e-12 * (1.0 + alpha_f.abs().max(alpha_i.abs()));
        if (self.breakpoints[0] - alpha_i).abs() > tol || (self.breakpoints[n - 1] - alpha_f).abs() > tol {
            return Err(HzdError::InfeasibleSchedule(
                "breakpoints must start at alpha_i and end at alpha_f".into(),
            ));
        }
        let dir = (alpha_f - alpha_i).signum();
        if self.breakpoints.windows(2).any(|w| (w[1] - w[0]) * dir <= 0.0) {
            return Err(HzdError::InfeasibleSchedule("breakpoints must be strictly monotone".into()));
        }
        Ok(())
    }

    /// Index of the segment containing `alpha`; ties go to the later segment.
    pub fn segment_at(&self, alpha: f64) -> usize {
        let dir = (self.breakpoints[self.breakpoints.len() - 1] - self.breakpoints[0]).signum();
        let k = self.breakpoints[1..self.breakpoints.len() - 1]
            .iter()
            .take_while(|&&b| (alpha - b) * dir >= 0.0)
            .count();
        k.min(self.values.len() - 1)
    }

    pub fn value_at(&self, alpha: f64) -> f64 {
        self.values[self.segment_at(alpha)]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn segments(&self) -> usize {
        self.values.len()
    }
}

/// Result of a fixed-point computation of the restricted return map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub zeta_star: f64,
    pub zeta_star_nominal: f64,
    pub shift: f64,
    /// Derivative of the restricted return map, `δ²`.
    pub slope: f64,
    pub stable: bool,
}

/// One restricted step integrated in `α`.
#[derive(Debug, Clone, Default)]
pub struct ZdTrajectory {
    pub alpha: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl ZdTrajectory {
    pub fn final_zeta(&self) -> f64 {
        *self.zeta.last().expect("trajectory is never empty")
    }
}

/// Thrust weight used inside the integrals `∫ w(τ)/κ1(τ) dτ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Weight {
    Gravity,
    Unit,
    ThrustGain,
}

/// Zero-dynamics functions of one gait. Immutable once built.
#[derive(Debug, Clone)]
pub struct ZeroDynamics {
    biped: Biped,
    gait: GaitParams,
    h_inv: DMatrix<f64>,
    impact_scale: f64,
    nodes: Vec<f64>,
    cum_gravity: Vec<f64>,
    cum_unit: Vec<f64>,
    cum_thrust: Vec<f64>,
}

impl ZeroDynamics {
    pub fn build(biped: &Biped, gait: &GaitParams) -> Result<Self> {
        gait.validate()?;
        if gait.dof() != biped.dof() {
            return Err(HzdError::InvalidGait("gait and model dimensions disagree".into()));
        }
        let mut zd = Self {
            biped: biped.clone(),
            gait: gait.clone(),
            h_inv: gait.coordinate_matrix_inverse()?,
            impact_scale: f64::NAN,
            nodes: Vec::new(),
            cum_gravity: Vec::new(),
            cum_unit: Vec::new(),
            cum_thrust: Vec::new(),
        };
        let sign = zd.kappa1(gait.alpha_i).signum();
        for k in 0..=TABLE_INTERVALS * 4 {
            let alpha = gait.alpha_at(k as f64 / (TABLE_INTERVALS * 4) as f64);
            let k1 = zd.kappa1(alpha);
            if !(k1.is_finite() && k1 * sign > 0.0) {
                return Err(HzdError::InvalidGait(format!("kappa1 changes sign near alpha = {alpha:.6}")));
            }
        }
        zd.impact_scale = zd.restricted_impact_scale()?;
        zd.nodes = (0..=TABLE_INTERVALS)
            .map(|k| gait.alpha_at(k as f64 / TABLE_INTERVALS as f64))
            .collect();
        zd.cum_gravity = zd.tabulate(Weight::Gravity);
        zd.cum_unit = zd.tabulate(Weight::Unit);
        zd.cum_thrust = zd.tabulate(Weight::ThrustGain);
        Ok(zd)
    }

    pub fn gait(&self) -> &GaitParams {
        &self.gait
    }

    pub fn biped(&self) -> &Biped {
        &self.biped
    }

    pub fn alpha_i(&self) -> f64 {
        self.gait.alpha_i
    }

    pub fn alpha_f(&self) -> f64 {
        self.gait.alpha_f
    }

    /// Post- to pre-impact momentum ratio `δ_zd` of the restricted impact.
    pub fn impact_scale(&self) -> f64 {
        self.impact_scale
    }

    /// `D̃ = H⁻ᵀ D H⁻¹` on the constraint surface.
    pub fn transformed_inertia(&self, alpha: f64) -> DMatrix<f64> {
        let q = self.gait.manifold_configuration(alpha);
        self.h_inv.transpose() * self.biped.inertia(&q) * &self.h_inv
    }

    /// `κ1(α) = 1 / (c_N (D̃_αb h' + D̃_αα))`.
    pub fn kappa1(&self, alpha: f64) -> f64 {
        let n = self.gait.dof();
        let dt = self.transformed_inertia(alpha);
        let b = self.gait.eval_alpha(alpha);
        let coupling: f64 = (0..n - 1).map(|i| dt[(n - 1, i)] * b.dh[i]).sum();
        1.0 / (self.gait.c[n - 1] * (coupling + dt[(n - 1, n - 1)]))
    }

    /// `κ2(α) = −∂V/∂q_N` on the constraint surface.
    pub fn kappa2(&self, alpha: f64) -> f64 {
        let n = self.gait.dof();
        let q = self.gait.manifold_configuration(alpha);
        -self.biped.gravity_vector(&q)[n - 1]
    }

    /// Thrust-to-momentum gain `b_N(α)`.
    pub fn b_n(&self, alpha: f64) -> f64 {
        let n = self.gait.dof();
        let q = self.gait.manifold_configuration(alpha);
        self.biped.thrust_map(&q)[n - 1]
    }

    /// Full state on the surface for given `α` and `σ_N`.
    pub fn manifold_state(&self, alpha: f64, sigma: f64) -> (DVector<f64>, DVector<f64>) {
        let q = self.gait.manifold_configuration(alpha);
        let qd = self.gait.manifold_tangent(alpha) * (self.kappa1(alpha) * sigma);
        (q, qd)
    }

    fn integrand(&self, w: Weight, alpha: f64) -> f64 {
        let num = match w {
            Weight::Gravity => self.kappa2(alpha),
            Weight::Unit => 1.0,
            Weight::ThrustGain => self.b_n(alpha),
        };
        num / self.kappa1(alpha)
    }

    fn tabulate(&self, w: Weight) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.nodes.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for win in self.nodes.windows(2) {
            acc += quad::integrate(|a| self.integrand(w, a), win[0], win[1], QUAD_TOL);
            cum.push(acc);
        }
        cum
    }

    /// `∫_{α_i}^{α} w/κ1` using the node table plus one adaptive piece.
    fn cumulative(&self, w: Weight, alpha: f64) -> f64 {
        let table = match w {
            Weight::Gravity => &self.cum_gravity,
            Weight::Unit => &self.cum_unit,
            Weight::ThrustGain => &self.cum_thrust,
        };
        let s = self.gait.phase(alpha);
        let k = ((s * TABLE_INTERVALS as f64).floor().max(0.0) as usize).min(TABLE_INTERVALS);
        table[k] + quad::integrate(|a| self.integrand(w, a), self.nodes[k], alpha, QUAD_TOL)
    }

    fn over(&self, w: Weight, from: f64, to: f64) -> f64 {
        self.cumulative(w, to) - self.cumulative(w, from)
    }

    /// `b_F(α_to, α_from) = ∫_{α_from}^{α_to} dτ/κ1(τ)`.
    pub fn bf_integral(&self, alpha_to: f64, alpha_from: f64) -> f64 {
        quad::integrate(|a| 1.0 / self.kappa1(a), alpha_from, alpha_to, QUAD_TOL)
    }

    /// `∫_{α_from}^{α_to} b_N(τ)/κ1(τ) dτ`, the weight of a constant physical thrust.
    pub fn thrust_integral(&self, alpha_to: f64, alpha_from: f64) -> f64 {
        quad::integrate(|a| self.b_n(a) / self.kappa1(a), alpha_from, alpha_to, QUAD_TOL)
    }

    /// `∫_{α_from}^{α_to} κ2/κ1`, the unforced change of `ζ`.
    pub fn nominal_integral(&self, alpha_to: f64, alpha_from: f64) -> f64 {
        quad::integrate(|a| self.kappa2(a) / self.kappa1(a), alpha_from, alpha_to, QUAD_TOL)
    }

    /// Unforced gain of `ζ` over the full step.
    pub fn nominal_gain(&self) -> f64 {
        self.cum_gravity[TABLE_INTERVALS]
    }

    /// Smallest `ζ_i` that lets the unforced step reach `α_f`.
    pub fn barrier(&self) -> f64 {
        self.cum_gravity.iter().fold(0.0f64, |worst, c| worst.max(-c))
    }

    fn weight_of(channel: ThrustChannel) -> Weight {
        match channel {
            ThrustChannel::Generalized => Weight::Unit,
            ThrustChannel::Physical => Weight::ThrustGain,
        }
    }

    /// Per-segment sensitivities of `ζ(α_f)` to the schedule values.
    pub fn segment_weights(&self, schedule: &ThrusterSchedule) -> Vec<f64> {
        let w = Self::weight_of(schedule.channel);
        schedule.breakpoints.windows(2).map(|b| self.over(w, b[0], b[1])).collect()
    }

    /// Sensitivities of `ζ(α)` to the schedule values, for `α` inside the step.
    pub fn partial_weights(&self, schedule: &ThrusterSchedule, alpha: f64) -> Vec<f64> {
        let w = Self::weight_of(schedule.channel);
        let dir = (self.alpha_f() - self.alpha_i()).signum();
        schedule
            .breakpoints
            .windows(2)
            .map(|b| {
                if (alpha - b[0]) * dir <= 0.0 {
                    0.0
                } else if (alpha - b[1]) * dir >= 0.0 {
                    self.over(w, b[0], b[1])
                } else {
                    self.over(w, b[0], alpha)
                }
            })
            .collect()
    }

    /// `ζ` at every table node, reusing the cumulative tables.
    fn zeta_on_nodes(&self, zeta_i: f64, schedule: &ThrusterSchedule) -> Vec<(f64, f64)> {
        let w = Self::weight_of(schedule.channel);
        let table = match w {
            Weight::Unit => &self.cum_unit,
            _ => &self.cum_thrust,
        };
        let dir = (self.alpha_f() - self.alpha_i()).signum();
        let segments: Vec<(f64, f64, f64, f64)> = schedule
            .breakpoints
            .windows(2)
            .zip(&schedule.values)
            .filter(|(_, v)| **v != 0.0)
            .map(|(b, &v)| (b[0], b[1], v, self.cumulative(w, b[0])))
            .collect();
        let ends: Vec<f64> = segments.iter().map(|s| self.cumulative(w, s.1)).collect();
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let forced: f64 = segments
                    .iter()
                    .zip(&ends)
                    .map(|(&(b0, b1, v, c0), &c1)| {
                        let part = if (a - b0) * dir <= 0.0 {
                            0.0
                        } else if (a - b1) * dir >= 0.0 {
                            c1 - c0
                        } else {
                            table[k] - c0
                        };
                        v * part
                    })
                    .sum();
                (a, zeta_i + self.cum_gravity[k] + forced)
            })
            .collect()
    }

    /// `ζ(α)` for a step starting at `ζ_i` under a schedule.
    pub fn zeta_at(&self, alpha: f64, zeta_i: f64, schedule: &ThrusterSchedule) -> f64 {
        let forced: f64 = if schedule.values.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            self.partial_weights(schedule, alpha)
                .iter()
                .zip(&schedule.values)
                .map(|(w, v)| w * v)
                .sum()
        };
        zeta_i + self.cumulative(Weight::Gravity, alpha) + forced
    }

    /// `ζ(α) = ζ_0(α, ζ_i) + b_F(α, α_i) T` for constant generalized thrust.
    pub fn zeta_closed_form(&self, alpha: f64, zeta_i: f64, thrust: f64) -> f64 {
        let s = ThrusterSchedule::constant(self.alpha_i(), self.alpha_f(), thrust, ThrustChannel::Generalized);
        self.zeta_at(alpha, zeta_i, &s)
    }

    /// `ζ(α)` sampled on a uniform grid; useful for plotting and barrier checks.
    pub fn zeta_profile(&self, zeta_i: f64, schedule: &ThrusterSchedule, samples: usize) -> ZdTrajectory {
        let samples = samples.max(2);
        let mut t = ZdTrajectory::default();
        for k in 0..samples {
            let a = self.gait.alpha_at(k as f64 / (samples - 1) as f64);
            t.alpha.push(a);
            t.zeta.push(self.zeta_at(a, zeta_i, schedule));
        }
        t
    }

    fn generalized_thrust(&self, alpha: f64, schedule: &ThrusterSchedule) -> f64 {
        let v = schedule.value_at(alpha);
        match schedule.channel {
            ThrustChannel::Generalized => v,
            ThrustChannel::Physical => v * self.b_n(alpha),
        }
    }

    /// Integrates `dζ/dα = (κ2 + T)/κ1` across the step, restarting at every breakpoint.
    pub fn zd_step(&self, zeta_i: f64, schedule: &ThrusterSchedule) -> Result<ZdTrajectory> {
        schedule.validate(self.alpha_i(), self.alpha_f())?;
        if !(zeta_i > 0.0) {
            return Err(HzdError::StepFailure {
                alpha: self.alpha_i(),
                reason: format!("initial zeta {zeta_i} is not positive"),
            });
        }
        let ode = Dopri5::default();
        let mut traj = ZdTrajectory {
            alpha: vec![self.alpha_i()],
            zeta: vec![zeta_i],
        };
        let mut zeta = zeta_i;
        for (j, seg) in schedule.breakpoints.windows(2).enumerate() {
            let value = schedule.values[j];
            let rhs = |a: f64, _z: &[f64], dz: &mut [f64]| {
                let thrust = match schedule.channel {
                    ThrustChannel::Generalized => value,
                    ThrustChannel::Physical => value * self.b_n(a),
                };
                dz[0] = (self.kappa2(a) + thrust) / self.kappa1(a);
                Ok(())
            };
            let events = [Event::new(|_a, z: &[f64]| z[0], Crossing::Falling)];
            let out = ode.integrate(rhs, seg[0], &[zeta], seg[1], &events, |a, z| {
                if a != seg[0] {
                    traj.alpha.push(a);
                    traj.zeta.push(z[0]);
                }
                Ok(())
            })?;
            if out.event.is_some() {
                return Err(HzdError::StepFailure {
                    alpha: out.t,
                    reason: "zeta reached zero before the end of the step".into(),
                });
            }
            zeta = out.y[0];
        }
        Ok(traj)
    }

    /// `ζ⁻` at the next impact from `ζ⁻` at the previous one.
    pub fn restricted_poincare(&self, zeta_minus: f64, schedule: &ThrusterSchedule) -> Result<f64> {
        schedule.validate(self.alpha_i(), self.alpha_f())?;
        let zeta_i = self.impact_scale.powi(2) * zeta_minus;
        let min = self.min_zeta(zeta_i, schedule);
        if !(min.1 > 0.0) {
            return Err(HzdError::StepFailure {
                alpha: min.0,
                reason: format!("zeta falls to {:.6e}", min.1),
            });
        }
        Ok(self.zeta_at(self.alpha_f(), zeta_i, schedule))
    }

    /// Minimum of `ζ` over the step (location, value), on the table nodes plus breakpoints.
    pub fn min_zeta(&self, zeta_i: f64, schedule: &ThrusterSchedule) -> (f64, f64) {
        self.zeta_on_nodes(zeta_i, schedule)
            .into_iter()
            .chain(schedule.breakpoints.iter().map(|&a| (a, self.zeta_at(a, zeta_i, schedule))))
            .fold((self.alpha_i(), f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc })
    }

    /// Fixed point of the restricted return map in closed form.
    pub fn fixed_point(&self, schedule: &ThrusterSchedule) -> Result<FixedPoint> {
        schedule.validate(self.alpha_i(), self.alpha_f())?;
        let slope = self.impact_scale.powi(2);
        if !(slope < 1.0) {
            return Err(HzdError::NoLimitCycle(format!("impact does not dissipate (delta^2 = {slope:.6})")));
        }
        let forcing: f64 = self
            .segment_weights(schedule)
            .iter()
            .zip(&schedule.values)
            .map(|(w, v)| w * v)
            .sum();
        let nominal = self.nominal_gain() / (1.0 - slope);
        let zeta_star = nominal + forcing / (1.0 - slope);
        if !(zeta_star > 0.0) {
            return Err(HzdError::InfeasibleSchedule(format!("fixed point zeta* = {zeta_star:.6e}")));
        }
        let (at, min) = self.min_zeta(slope * zeta_star, schedule);
        if !(min > 0.0) {
            return Err(HzdError::InfeasibleSchedule(format!(
                "zeta falls to {min:.6e} at alpha = {at:.6}"
            )));
        }
        Ok(FixedPoint {
            zeta_star,
            zeta_star_nominal: nominal,
            shift: zeta_star - nominal,
            slope,
            stable: slope < 1.0,
        })
    }

    /// Minimum-norm values on fixed breakpoints that shift `ζ*` by `shift`.
    pub fn shape_schedule(
        &self,
        shift: f64,
        breakpoints: &[f64],
        channel: ThrustChannel,
    ) -> Result<ThrusterSchedule> {
        let mut s = ThrusterSchedule {
            breakpoints: breakpoints.to_vec(),
            values: vec![0.0; breakpoints.len().saturating_sub(1)],
            channel,
        };
        s.validate(self.alpha_i(), self.alpha_f())?;
        let w = self.segment_weights(&s);
        let norm2: f64 = w.iter().map(|x| x * x).sum();
        let target = shift * (1.0 - self.impact_scale.powi(2));
        if shift == 0.0 {
            return Ok(s);
        }
        if !(norm2 > 0.0) {
            return Err(HzdError::InfeasibleSchedule("all segment weights vanish".into()));
        }
        s.values = w.iter().map(|x| x * target / norm2).collect();
        Ok(s)
    }

    /// Four breakpoints whose two end segments carry equal `b_F` weight, each a
    /// `fraction` of the whole step, so that `T = k(−1, 0, 1)` leaves `ζ*` unchanged.
    pub fn balanced_breakpoints(&self, fraction: f64) -> Result<Vec<f64>> {
        if !(fraction > 0.0 && fraction < 0.5) {
            return Err(HzdError::InfeasibleSchedule(format!("fraction {fraction} must lie in (0, 0.5)")));
        }
        let total = self.cumulative(Weight::Unit, self.alpha_f());
        let a2 = self.invert_unit_weight(fraction * total)?;
        let a3 = self.invert_unit_weight((1.0 - fraction) * total)?;
        Ok(vec![self.alpha_i(), a2, a3, self.alpha_f()])
    }

    /// `α` at which `∫_{α_i}^{α} 1/κ1` reaches `target`; the integrand has fixed sign.
    fn invert_unit_weight(&self, target: f64) -> Result<f64> {
        let f = |a: f64| self.cumulative(Weight::Unit, a) - target;
        let (mut lo, mut hi) = (self.alpha_i(), self.alpha_f());
        let (mut flo, fhi) = (f(lo), f(hi));
        if flo * fhi > 0.0 {
            return Err(HzdError::InfeasibleSchedule("weight target outside the step".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = f(mid);
            if fm == 0.0 || (hi - lo).abs() < 1e-15 {
                return Ok(mid);
            }
            if fm * flo < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn restricted_impact_scale(&self) -> Result<f64> {
        let (q, qd) = self.manifold_state(self.alpha_f(), 1.0);
        let imp = impact_map(&self.biped, &q, &qd)?;
        let n = self.gait.dof();
        let (q_plus, qd_plus) = self.biped.relabel(&q, &imp.qdot_plus.rows(0, n).into_owned());
        Ok(self.biped.angular_momentum(&q_plus, &qd_plus))
    }

    /// `ζ⁻ ↦ ζ⁻` map with the step computed by numerical integration instead of the closed form.
    pub fn restricted_poincare_ode(&self, zeta_minus: f64, schedule: &ThrusterSchedule) -> Result<f64> {
        let traj = self.zd_step(self.impact_scale.powi(2) * zeta_minus, schedule)?;
        Ok(traj.final_zeta())
    }

    /// Generalized thrust at `α` for a schedule; exposed for full-order realization.
    pub fn schedule_generalized_thrust(&self, alpha: f64, schedule: &ThrusterSchedule) -> f64 {
        self.generalized_thrust(alpha, schedule)
    }
}
