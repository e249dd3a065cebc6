//! Offline design of a nominal unforced gait for the three-link walker.
//!
//! Free parameters are the torso angle at impact, the second-to-last Bezier
//! column and the interior columns. The first two columns follow from the
//! impact map so that the relabeled post-impact state lies on the surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GaitParams;
use crate::control::{ClosedLoop, Gains};
use crate::error::{HzdError, Result};
use crate::forces::{impact_feasibility, swing_force, ImpactFeasibility, SwingForceModel};
use crate::hybrid::impact_map;
use crate::lsq::{self, LmOptions};
use crate::model::{to_unpinned, Biped};
use crate::zerodyn::{ThrusterSchedule, ZeroDynamics};

const NODES: usize = 201;
const FORCE_STRIDE: usize = 4;
/// Penalty residuals below this count as satisfied.
const HINGE_TOL: f64 = 1e-3;

/// Requirements for the designed gait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSpec {
    /// Distance between consecutive footholds (m).
    pub step_length: f64,
    /// Step length over step period (m/s).
    pub average_speed: f64,
    pub bezier_order: usize,
    /// Required horizontal offset of the thruster mount ahead of the stance
    /// foot (m); keeps `b_N` of one sign for a vertical thrust line.
    pub mount_clearance: Option<f64>,
    /// Peak swing-foot height required over the second half of the step (m).
    pub foot_clearance: f64,
    /// Fraction of `μ` allowed for the friction ratio.
    pub friction_fraction: f64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for GaitSpec {
    fn default() -> Self {
        Self {
            step_length: 0.4,
            average_speed: 0.7,
            bezier_order: 6,
            mount_clearance: None,
            foot_clearance: 0.02,
            friction_fraction: 0.8,
            max_iterations: 400,
            restarts: 8,
        }
    }
}

/// Properties of the designed gait, computed with the exact zero dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub zeta_star: f64,
    pub impact_scale: f64,
    pub step_period: f64,
    pub average_speed: f64,
    pub min_zeta: f64,
    pub impact: ImpactFeasibility,
    pub min_vertical_force: f64,
    pub max_friction_ratio: f64,
    pub min_mount_offset: f64,
    pub hybrid_invariance_residual: f64,
    pub fixed_point_residual: f64,
    pub cost: f64,
    pub iterations: usize,
    pub attempts: usize,
}

/// One-step properties sampled on a uniform grid in `α`.
struct Evaluation {
    speed: f64,
    slope: f64,
    zeta_star: f64,
    zeta: Vec<f64>,
    inverse_kappa1: Vec<f64>,
    impact_vertical: f64,
    impact_ratio: f64,
    swing: Vec<(f64, f64)>,
    foot_height: Vec<f64>,
    descent: f64,
    mount: Vec<f64>,
}

struct Designer<'a> {
    biped: &'a Biped,
    spec: &'a GaitSpec,
    alpha_f: f64,
    mu: f64,
    zeta_scale: f64,
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

impl<'a> Designer<'a> {
    /// Gait from the free parameters `[φ_torso, a_{·,M−1}, a_{·,2..M−2}]`.
    fn gait(&self, x: &[f64]) -> Result<GaitParams> {
        let m = self.spec.bezier_order;
        let af = self.alpha_f;
        let torso = x[0];
        let mut a = vec![vec![0.0; m + 1]; 2];
        a[0][m] = torso - af;
        a[1][m] = torso + af;
        a[0][0] = a[1][m];
        a[1][0] = a[0][m];
        a[0][m - 1] = x[1];
        a[1][m - 1] = x[2];
        for k in 2..=m - 2 {
            a[0][k] = x[3 + 2 * (k - 2)];
            a[1][k] = x[4 + 2 * (k - 2)];
        }
        let mut gait = GaitParams {
            c: vec![0.0, 0.0, 1.0],
            a,
            alpha_i: -af,
            alpha_f: af,
            bezier_order_m: m,
        };
        // post-impact velocity depends only on the last two columns
        let q = gait.manifold_configuration(af);
        let qd = gait.manifold_tangent(af);
        let imp = impact_map(self.biped, &q, &qd)?;
        let (_, qd_plus) = self.biped.relabel(&q, &imp.qdot_plus.rows(0, 3).into_owned());
        let rate = qd_plus[2];
        if !(rate > 1e-6) {
            return Err(HzdError::GaitDesign("impact reverses the stance leg".into()));
        }
        for i in 0..2 {
            gait.a[i][1] = gait.a[i][0] + 2.0 * af / m as f64 * qd_plus[i] / rate;
        }
        Ok(gait)
    }

    fn evaluate(&self, gait: &GaitParams) -> Result<Evaluation> {
        let b = self.biped;
        let n = b.dof();
        let af = self.alpha_f;
        let h = 2.0 * af / (NODES - 1) as f64;
        let mut inv_k1 = Vec::with_capacity(NODES);
        let mut gain = Vec::with_capacity(NODES);
        let mut foot_height = Vec::with_capacity(NODES);
        let mut mount = Vec::with_capacity(NODES);
        for k in 0..NODES {
            let alpha = -af + k as f64 * h;
            let q = gait.manifold_configuration(alpha);
            let t = gait.manifold_tangent(alpha);
            let d = b.inertia(&q);
            let dk = (d * &t)[n - 1];
            inv_k1.push(dk);
            gain.push(-b.gravity_vector(&q)[n - 1] * dk);
            foot_height.push(b.swing_foot_height(&q));
            mount.push(b.mount_position(&q)[0]);
        }
        // cumulative trapezoid of κ2/κ1
        let mut i0 = vec![0.0; NODES];
        for k in 1..NODES {
            i0[k] = i0[k - 1] + 0.5 * h * (gain[k - 1] + gain[k]);
        }
        let q_end = gait.manifold_configuration(af);
        let t_end = gait.manifold_tangent(af);
        let imp = impact_map(b, &q_end, &t_end)?;
        let (q_plus, qd_plus) = b.relabel(&q_end, &imp.qdot_plus.rows(0, n).into_owned());
        let delta = b.angular_momentum(&q_plus, &qd_plus) / inv_k1[NODES - 1];
        let slope = delta * delta;
        let zeta_star = i0[NODES - 1] / (1.0 - slope);
        let zeta: Vec<f64> = i0.iter().map(|v| slope * zeta_star + v).collect();

        // period: ∫ dα / α̇ with α̇ = κ1 √(2ζ)
        let rate = |k: usize| (2.0 * zeta[k].max(1e-12)).sqrt() / inv_k1[k];
        let mut period = 0.0;
        for k in 1..NODES {
            period += 0.5 * h * (1.0 / rate(k - 1) + 1.0 / rate(k));
        }
        let speed = self.spec.step_length / period;

        let closed_loop = ClosedLoop::new(b.clone(), gait.clone(), Gains::from_epsilon(n - 1, 1.0)?)?;
        let mut swing = Vec::new();
        for k in (0..NODES).step_by(FORCE_STRIDE) {
            let alpha = -af + k as f64 * h;
            let q = gait.manifold_configuration(alpha);
            let qd = gait.manifold_tangent(alpha) * rate(k);
            let e = closed_loop.evaluate(&q, &qd, 0.0)?;
            let (qu, qud) = to_unpinned(&q, &qd, nalgebra::Vector2::zeros());
            let f = swing_force(b, &qu, &qud, &e.u, 0.0)?.f_1;
            swing.push((f[0], f[1]));
        }
        Ok(Evaluation {
            speed,
            slope,
            zeta_star,
            zeta,
            inverse_kappa1: inv_k1,
            impact_vertical: imp.impulse[1] / imp.impulse.norm().max(1e-300),
            impact_ratio: imp.impulse[0] / imp.impulse[1],
            swing,
            foot_height,
            descent: b.swing_foot_vertical_velocity(&q_end, &t_end),
            mount,
        })
    }

    /// Penalty residuals; each inequality contributes only when violated.
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let count = 8 + 5 * NODES + 2 * (NODES / FORCE_STRIDE + 1) + 4 * self.spec.bezier_order;
        let failed = vec![1e3; count];
        let Ok(gait) = self.gait(x) else { return failed };
        let Ok(ev) = self.evaluate(&gait) else { return failed };
        let spec = self.spec;
        let weight = self.biped.total_mass() * self.biped.params().gravity;
        let mu = spec.friction_fraction * self.mu;
        let mut r = Vec::with_capacity(count);
        r.push(10.0 * (ev.speed / spec.average_speed - 1.0));
        r.push(10.0 * hinge(ev.slope - 0.95));
        r.push(10.0 * hinge(0.05 - ev.zeta_star / self.zeta_scale));
        r.push(10.0 * hinge(0.2 - ev.impact_vertical));
        r.push(10.0 * hinge(ev.impact_ratio.abs() - mu));
        r.push(10.0 * hinge(0.1 * self.biped.params().leg_length + ev.descent));
        r.push(if ev.impact_vertical > 0.0 { 0.0 } else { 10.0 });
        r.push(0.0);
        let d_scale = self.biped.total_mass() * self.biped.params().leg_length.powi(2);
        for k in 0..NODES {
            let s = k as f64 / (NODES - 1) as f64;
            r.push(10.0 * hinge(0.05 - ev.zeta[k] / self.zeta_scale));
            r.push(10.0 * hinge(0.05 - ev.inverse_kappa1[k] / d_scale));
            let needed = if s >= 0.5 { spec.foot_clearance * 16.0 * (s - 0.5) * (1.0 - s) } else { 0.0 };
            r.push(if s >= 0.5 { hinge(needed - ev.foot_height[k]) / 0.01 } else { 0.0 });
            r.push(spec.mount_clearance.map_or(0.0, |c| hinge(c - ev.mount[k]) / 0.01));
            r.push(0.0);
        }
        for &(fh, fv) in &ev.swing {
            r.push(10.0 * hinge(0.2 - fv / weight));
            r.push(if fv > 0.0 { 10.0 * hinge(fh.abs() / fv - mu) } else { 10.0 });
        }
        for _ in ev.swing.len()..NODES / FORCE_STRIDE + 1 {
            r.push(0.0);
            r.push(0.0);
        }
        // smoothness of the Bezier polygons
        for row in &gait.a {
            for k in 1..row.len() - 1 {
                r.push(0.05 * (row[k + 1] - 2.0 * row[k] + row[k - 1]));
            }
        }
        r.resize(count, 0.0);
        r
    }

    fn initial_guess(&self) -> Vec<f64> {
        let m = self.spec.bezier_order;
        let af = self.alpha_f;
        let torso = (self.spec.mount_clearance.unwrap_or(-1.0) + 2.0 * self.biped.params().leg_length * af.sin())
            .clamp(0.0, 0.95 * self.biped.params().torso_length)
            / self.biped.params().torso_length;
        let torso = torso.asin().max(0.0) + 0.1;
        // straight-line polygons with the swing leg passing the stance leg early
        let line = |k: usize, row: usize| {
            let s = k as f64 / m as f64;
            let bump = 0.15 * (std::f64::consts::PI * s).sin();
            if row == 0 {
                torso + af - 2.0 * af * s
            } else {
                torso - af + 2.0 * af * s + bump
            }
        };
        let mut x = vec![torso, line(m - 1, 0), line(m - 1, 1)];
        for k in 2..=m - 2 {
            x.push(line(k, 0));
            x.push(line(k, 1));
        }
        x
    }
}

/// Designs an unforced gait with a stable restricted fixed point, feasible
/// impact and swing forces, and the requested step length and speed.
pub fn design_nominal_gait(biped: &Biped, spec: &GaitSpec, seed: u64) -> Result<(GaitParams, DesignReport)> {
    if biped.dof() != 3 {
        return Err(HzdError::GaitDesign("the designer handles the three-link walker only".into()));
    }
    let l = biped.params().leg_length;
    if !(spec.step_length > 0.0 && spec.step_length < 2.0 * l) {
        return Err(HzdError::GaitDesign(format!(
            "step length {} must lie in (0, {})",
            spec.step_length,
            2.0 * l
        )));
    }
    if !(spec.average_speed > 0.0 && spec.average_speed.is_finite()) {
        return Err(HzdError::GaitDesign("average speed must be positive".into()));
    }
    if spec.bezier_order < 4 {
        return Err(HzdError::GaitDesign("Bezier order must be at least 4".into()));
    }
    let designer = Designer {
        biped,
        spec,
        alpha_f: (spec.step_length / (2.0 * l)).asin(),
        mu: biped.params().friction_mu,
        zeta_scale: 0.5 * (biped.total_mass() * l * spec.average_speed).powi(2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = LmOptions {
        max_iter: spec.max_iterations,
        ..LmOptions::default()
    };
    let base = designer.initial_guess();
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut attempts = 0;
    for attempt in 0..=spec.restarts {
        attempts = attempt + 1;
        let x0: Vec<f64> = if attempt == 0 {
            base.clone()
        } else {
            base.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect()
        };
        let res = lsq::minimize(|x| Ok(designer.residuals(x)), &x0, &opts)?;
        let violation = constraint_violation(&designer, &res.x);
        log::debug!("design attempt {attempt}: cost {:.3e}, violation {violation:.3e}", res.cost);
        if best.as_ref().is_none_or(|b| res.cost < b.1) {
            best = Some((res.x.clone(), res.cost, res.iterations));
        }
        if violation == 0.0 {
            break;
        }
    }
    let (x, cost, iterations) = best.expect("at least one attempt runs");
    if let Some(reason) = violated_condition(&designer, &x) {
        return Err(HzdError::GaitDesign(reason));
    }
    let gait = designer.gait(&x)?;
    let report = verify(biped, spec, &gait, cost, iterations, attempts)?;
    Ok((gait, report))
}

fn constraint_violation(d: &Designer, x: &[f64]) -> f64 {
    let r = d.residuals(x);
    let speed = (r[0] / 10.0).abs();
    let hinges: f64 = r[1..r.len() - 4 * d.spec.bezier_order]
        .iter()
        .filter(|v| v.abs() > HINGE_TOL)
        .map(|v| v.abs())
        .sum();
    if speed > 1e-3 {
        hinges + speed
    } else {
        hinges
    }
}

fn violated_condition(d: &Designer, x: &[f64]) -> Option<String> {
    let gait = match d.gait(x) {
        Ok(g) => g,
        Err(e) => return Some(e.to_string()),
    };
    let ev = match d.evaluate(&gait) {
        Ok(ev) => ev,
        Err(e) => return Some(e.to_string()),
    };
    let r = d.residuals(x);
    let names = [
        "average speed",
        "impact dissipation",
        "fixed point zeta* > 0",
        "impact vertical impulse",
        "impact friction",
        "swing foot descent at impact",
        "impact vertical impulse",
    ];
    if (ev.speed / d.spec.average_speed - 1.0).abs() > 1e-3 {
        return Some(format!(
            "average speed {:.4} m/s does not reach {:.4} m/s",
            ev.speed, d.spec.average_speed
        ));
    }
    for (k, name) in names.iter().enumerate().skip(1) {
        if r[k] > HINGE_TOL {
            return Some(format!("{name} violated"));
        }
    }
    let per_node = ["zeta > 0", "kappa1 sign", "late swing-foot clearance", "thruster mount ahead of stance foot"];
    for k in 0..NODES {
        for (j, name) in per_node.iter().enumerate() {
            if r[8 + 5 * k + j] > HINGE_TOL {
                return Some(format!("{name} violated at phase {:.3}", k as f64 / (NODES - 1) as f64));
            }
        }
    }
    let base = 8 + 5 * NODES;
    for k in 0..ev.swing.len() {
        if r[base + 2 * k] > HINGE_TOL {
            return Some("swing vertical ground force".into());
        }
        if r[base + 2 * k + 1] > HINGE_TOL {
            return Some("swing friction".into());
        }
    }
    None
}

fn verify(
    biped: &Biped,
    spec: &GaitSpec,
    gait: &GaitParams,
    cost: f64,
    iterations: usize,
    attempts: usize,
) -> Result<DesignReport> {
    let zd = ZeroDynamics::build(biped, gait)?;
    let zero = ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f());
    let fp = zd
        .fixed_point(&zero)
        .map_err(|e| HzdError::GaitDesign(format!("no restricted fixed point: {e}")))?;
    let zeta_star = fp.zeta_star;
    let fixed_point_residual = (zd.restricted_poincare(zeta_star, &zero)? - zeta_star).abs();
    let impact = impact_feasibility(&zd, biped.params().friction_mu)?;
    if !impact.feasible {
        return Err(HzdError::GaitDesign("impact friction cone violated".into()));
    }

    let sigma = (2.0 * zeta_star).sqrt();
    let (q, qd) = zd.manifold_state(zd.alpha_f(), sigma);
    let imp = impact_map(biped, &q, &qd)?;
    let (q_plus, qd_plus) = biped.relabel(&q, &imp.qdot_plus.rows(0, 3).into_owned());
    let (y, ydot) = gait.output(&q_plus, &qd_plus);
    let hybrid_invariance_residual = y.norm().max(ydot.norm());

    let model = SwingForceModel::new(&zd)?;
    let (mut min_zeta, mut min_v, mut max_ratio, mut min_mount) = (f64::INFINITY, f64::INFINITY, 0.0f64, f64::INFINITY);
    let mut period = 0.0;
    let samples = 1001;
    let mut prev_rate = None;
    let h = (zd.alpha_f() - zd.alpha_i()) / (samples - 1) as f64;
    for k in 0..samples {
        let alpha = gait.alpha_at(k as f64 / (samples - 1) as f64);
        let zeta = zd.zeta_at(alpha, fp.slope * zeta_star, &zero);
        min_zeta = min_zeta.min(zeta);
        let rate = zd.kappa1(alpha) * (2.0 * zeta.max(0.0)).sqrt();
        if let Some(p) = prev_rate {
            period += 0.5 * h * (1.0 / p + 1.0 / rate);
        }
        prev_rate = Some(rate);
        let f = model.at(alpha, zeta.max(0.0), 0.0)?.f_1;
        min_v = min_v.min(f[1]);
        max_ratio = max_ratio.max(f[0].abs() / f[1]);
        min_mount = min_mount.min(biped.mount_position(&gait.manifold_configuration(alpha))[0]);
    }
    if !(min_zeta > 0.0) {
        return Err(HzdError::GaitDesign("zeta vanishes during the step".into()));
    }
    if !(min_v > 0.0 && max_ratio < biped.params().friction_mu) {
        return Err(HzdError::GaitDesign(format!(
            "swing ground force infeasible (min vertical {min_v:.3} N, ratio {max_ratio:.3})"
        )));
    }
    Ok(DesignReport {
        zeta_star,
        impact_scale: zd.impact_scale(),
        step_period: period,
        average_speed: spec.step_length / period,
        min_zeta,
        impact,
        min_vertical_force: min_v,
        max_friction_ratio: max_ratio,
        min_mount_offset: min_mount,
        hybrid_invariance_residual,
        fixed_point_residual,
        cost,
        iterations,
        attempts,
    })
}
