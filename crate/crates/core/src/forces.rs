//! Ground forces at impact and during swing, their polynomial surrogates,
//! constraint checks, and the constrained schedule optimizer.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::{ClosedLoop, Gains};
use crate::error::{HzdError, Result};
use crate::model::{to_unpinned, Biped};
use crate::poly::{linspace, Polynomial};
use crate::qp::{self, QpError};
use crate::zerodyn::{FixedPoint, ThrustChannel, ThrusterSchedule, ZeroDynamics};

/// Smallest `|b_N|` for which a generalized value is converted to a physical thrust.
pub const MIN_THRUST_GAIN: f64 = 1e-6;

/// Fraction of the nominal `ζ*` that the optimizer keeps as a floor on `ζ(α)`.
const ZETA_MARGIN: f64 = 1e-2;

/// Impulse per unit pre-impact momentum, `F₂ = b_{F₂} σ_N⁻`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactForceCoeffs {
    pub horizontal: f64,
    pub vertical: f64,
}

/// `Δ_{F₂}` with `F₂ = Δ_{F₂} q̇⁻`, from the Schur complement of the impact system.
pub fn impact_force_matrix(biped: &Biped, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = biped.dof();
    let (qu, qud) = to_unpinned(q, &DVector::zeros(n), Vector2::zeros());
    let terms = biped.unpinned_dynamics(&qu, &qud)?;
    let chol = terms
        .d
        .clone()
        .cholesky()
        .ok_or_else(|| HzdError::NumericalSingularity("unpinned inertia not positive definite".into()))?;
    let schur = &terms.e2 * chol.solve(&terms.e2.transpose());
    let inv = schur
        .try_inverse()
        .ok_or_else(|| HzdError::DegenerateImpact("E2 D^-1 E2^T is singular".into()))?;
    Ok(-inv * terms.e2.columns(0, n))
}

pub fn impact_force_coeffs(zd: &ZeroDynamics) -> Result<ImpactForceCoeffs> {
    let gait = zd.gait();
    let a = zd.alpha_f();
    let q = gait.manifold_configuration(a);
    let qd = gait.manifold_tangent(a) * zd.kappa1(a);
    let f = impact_force_matrix(zd.biped(), &q)? * qd;
    Ok(ImpactForceCoeffs {
        horizontal: f[0],
        vertical: f[1],
    })
}

/// Impact impulse on the zero dynamics for a given `σ_N⁻`.
pub fn impact_force_restricted(zd: &ZeroDynamics, sigma_minus: f64) -> Result<Vector2<f64>> {
    let c = impact_force_coeffs(zd)?;
    Ok(Vector2::new(c.horizontal, c.vertical) * sigma_minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactFeasibility {
    pub feasible: bool,
    /// `F₂ᵛ` per unit `σ_N⁻`.
    pub vertical: f64,
    /// `F₂ʰ/F₂ᵛ`, independent of `σ_N⁻`.
    pub friction_ratio: f64,
    pub margin_friction: f64,
}

pub fn impact_feasibility(zd: &ZeroDynamics, mu: f64) -> Result<ImpactFeasibility> {
    let c = impact_force_coeffs(zd)?;
    let ratio = c.horizontal / c.vertical;
    let margin = mu - ratio.abs();
    Ok(ImpactFeasibility {
        feasible: c.vertical > 0.0 && margin > 0.0,
        vertical: c.vertical,
        friction_ratio: ratio,
        margin_friction: margin,
    })
}

/// Stance-foot force split into the lumped `F_r = F_1 + B_Fu F_T` and the ground part `F_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingForce {
    pub f_r: Vector2<f64>,
    pub f_1: Vector2<f64>,
}

/// Force that keeps the stance foot at rest: `F_r = −D̄₂₂⁻¹ [D̄₂₁ D̄₂₂] (B₁ [u; F_T] − Ω_u)`.
pub fn swing_force(
    biped: &Biped,
    q_u: &DVector<f64>,
    q_u_dot: &DVector<f64>,
    u: &DVector<f64>,
    thrust: f64,
) -> Result<SwingForce> {
    let n = biped.dof();
    let terms = biped.unpinned_dynamics(q_u, q_u_dot)?;
    let d_inv = terms
        .d
        .clone()
        .cholesky()
        .ok_or_else(|| HzdError::NumericalSingularity("unpinned inertia not positive definite".into()))?
        .inverse();
    let mut w = DVector::zeros(n);
    w.rows_mut(0, n - 1).copy_from(u);
    w[n - 1] = thrust;
    let rhs = &terms.b1 * w - &terms.omega;
    let d22_inv = d_inv
        .view((n, n), (2, 2))
        .into_owned()
        .try_inverse()
        .ok_or_else(|| HzdError::NumericalSingularity("lower block of the inverse inertia is singular".into()))?;
    let f = -(d22_inv * d_inv.rows(n, 2) * rhs);
    let f_r = Vector2::new(f[0], f[1]);
    Ok(SwingForce {
        f_r,
        f_1: f_r - terms.b_fu * thrust,
    })
}

/// `F_r = Λ2 F_T + Λ1 ζ + Λ0` at one `α`, with `ζ` the local value; `b` is the thrust direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLambda {
    pub l0: Vector2<f64>,
    pub l1: Vector2<f64>,
    pub l2: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl LocalLambda {
    pub fn lumped(&self, zeta: f64, thrust: f64) -> Vector2<f64> {
        self.l0 + self.l1 * zeta + self.l2 * thrust
    }

    pub fn ground(&self, zeta: f64, thrust: f64) -> Vector2<f64> {
        self.lumped(zeta, thrust) - self.b * thrust
    }
}

/// Force and coefficients in terms of the fixed point, for constant physical thrust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedForce {
    pub f_r: Vector2<f64>,
    pub lambda0: Vector2<f64>,
    pub lambda1: Vector2<f64>,
    pub lambda2: Vector2<f64>,
}

/// Exact swing forces on the zero dynamics of one gait.
#[derive(Debug, Clone)]
pub struct SwingForceModel<'a> {
    zd: &'a ZeroDynamics,
    closed_loop: ClosedLoop,
}

impl<'a> SwingForceModel<'a> {
    pub fn new(zd: &'a ZeroDynamics) -> Result<Self> {
        let n = zd.gait().dof();
        // on the surface y = ẏ = 0, so the gains drop out
        let closed_loop = ClosedLoop::new(zd.biped().clone(), zd.gait().clone(), Gains::from_epsilon(n - 1, 1.0)?)?;
        Ok(Self { zd, closed_loop })
    }

    pub fn zero_dynamics(&self) -> &ZeroDynamics {
        self.zd
    }

    /// Forces at `α` with local `ζ ≥ 0` and physical thrust.
    pub fn at(&self, alpha: f64, zeta: f64, thrust: f64) -> Result<SwingForce> {
        if !(zeta >= 0.0) {
            return Err(HzdError::InvalidState(format!("zeta = {zeta} is negative")));
        }
        let (q, qd) = self.zd.manifold_state(alpha, (2.0 * zeta).sqrt());
        let e = self.closed_loop.evaluate(&q, &qd, thrust)?;
        let (qu, qud) = to_unpinned(&q, &qd, Vector2::zeros());
        swing_force(self.zd.biped(), &qu, &qud, &e.u, thrust)
    }

    pub fn local(&self, alpha: f64) -> Result<LocalLambda> {
        let l0 = self.at(alpha, 0.0, 0.0)?.f_r;
        let l1 = self.at(alpha, 1.0, 0.0)?.f_r - l0;
        let l2 = self.at(alpha, 0.0, 1.0)?.f_r - l0;
        let b = self.zd.biped().thrust_vector(&self.zd.gait().manifold_configuration(alpha));
        Ok(LocalLambda { l0, l1, l2, b })
    }

    /// `F_r = Λ2 F_T + Λ1 ζ* + Λ0` along the step that ends at `ζ*` under constant physical thrust.
    pub fn restricted(&self, alpha: f64, zeta_star: f64, thrust: f64) -> Result<RestrictedForce> {
        let zd = self.zd;
        let slope = zd.impact_scale().powi(2);
        let free = zd.zeta_at(alpha, 0.0, &ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f()));
        let unit = ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), 1.0, ThrustChannel::Physical);
        let gain = zd.zeta_at(alpha, 0.0, &unit) - free;
        let loc = self.local(alpha)?;
        let lambda1 = loc.l1 * slope;
        let lambda2 = loc.l2 + loc.l1 * gain;
        let lambda0 = loc.l0 + loc.l1 * free;
        Ok(RestrictedForce {
            f_r: lambda0 + lambda1 * zeta_star + lambda2 * thrust,
            lambda0,
            lambda1,
            lambda2,
        })
    }
}

/// Horizontal and vertical polynomial surrogates of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePair {
    pub horizontal: Polynomial,
    pub vertical: Polynomial,
}

impl ForcePair {
    pub fn eval(&self, alpha: f64) -> Vector2<f64> {
        Vector2::new(self.horizontal.eval(alpha), self.vertical.eval(alpha))
    }
}

/// Largest validation error of each channel as `[horizontal, vertical]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResiduals {
    pub l0: [f64; 2],
    pub l1: [f64; 2],
    pub l2: [f64; 2],
    pub b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwingForceFit {
    pub degree: usize,
    pub fit_domain: [f64; 2],
    pub l0: ForcePair,
    pub l1: ForcePair,
    pub l2: ForcePair,
    /// Thrust direction `B_Fu(α)`.
    pub b: ForcePair,
    pub residuals: FitResiduals,
    pub zeta_ref: f64,
    pub thrust_ref: f64,
    /// Worst force error at `ζ_ref` and `|F_T| = thrust_ref` (N).
    pub max_fit_residual: f64,
}

impl SwingForceFit {
    pub fn local(&self, alpha: f64) -> LocalLambda {
        LocalLambda {
            l0: self.l0.eval(alpha),
            l1: self.l1.eval(alpha),
            l2: self.l2.eval(alpha),
            b: self.b.eval(alpha),
        }
    }

    /// Bound on the ground-force error `[horizontal, vertical]` at local `ζ` and thrust.
    pub fn error_bound(&self, zeta: f64, thrust: f64) -> Vector2<f64> {
        let r = &self.residuals;
        let f = |k: usize| r.l0[k] + r.l1[k] * zeta.abs() + (r.l2[k] + r.b[k]) * thrust.abs();
        Vector2::new(f(0), f(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub degree: usize,
    pub fit_points: usize,
    pub validation_points: usize,
    pub residual_bound: f64,
    pub thrust_ref: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            degree: 8,
            fit_points: 201,
            validation_points: 997,
            residual_bound: 0.5,
            thrust_ref: 50.0,
        }
    }
}

/// Least-squares polynomial surrogates of the exact `Λ` channels.
pub fn fit_force_polynomials(zd: &ZeroDynamics, opts: &FitOptions) -> Result<SwingForceFit> {
    let model = SwingForceModel::new(zd)?;
    let domain = [zd.alpha_i(), zd.alpha_f()];
    let sample = |alphas: &[f64]| -> Result<Vec<LocalLambda>> { alphas.iter().map(|&a| model.local(a)).collect() };
    let grid = linspace(domain[0], domain[1], opts.fit_points);
    let data = sample(&grid)?;
    let fit_pair = |pick: fn(&LocalLambda) -> Vector2<f64>| -> Result<ForcePair> {
        let h: Vec<f64> = data.iter().map(|d| pick(d)[0]).collect();
        let v: Vec<f64> = data.iter().map(|d| pick(d)[1]).collect();
        Ok(ForcePair {
            horizontal: Polynomial::fit(&grid, &h, opts.degree, domain)?,
            vertical: Polynomial::fit(&grid, &v, opts.degree, domain)?,
        })
    };
    let l0 = fit_pair(|d| d.l0)?;
    let l1 = fit_pair(|d| d.l1)?;
    let l2 = fit_pair(|d| d.l2)?;
    let b = fit_pair(|d| d.b)?;

    let check = linspace(domain[0], domain[1], opts.validation_points);
    let exact = sample(&check)?;
    let worst = |pair: &ForcePair, pick: fn(&LocalLambda) -> Vector2<f64>| -> [f64; 2] {
        let mut r = [0.0f64; 2];
        for (a, e) in check.iter().zip(&exact) {
            let d = pair.eval(*a) - pick(e);
            r[0] = r[0].max(d[0].abs());
            r[1] = r[1].max(d[1].abs());
        }
        r
    };
    let residuals = FitResiduals {
        l0: worst(&l0, |d| d.l0),
        l1: worst(&l1, |d| d.l1),
        l2: worst(&l2, |d| d.l2),
        b: worst(&b, |d| d.b),
    };
    let zeta_ref = zd.fixed_point(&ThrusterSchedule::zero(domain[0], domain[1]))?.zeta_star;
    let mut fit = SwingForceFit {
        degree: opts.degree,
        fit_domain: domain,
        l0,
        l1,
        l2,
        b,
        residuals,
        zeta_ref,
        thrust_ref: opts.thrust_ref,
        max_fit_residual: 0.0,
    };
    fit.max_fit_residual = fit.error_bound(zeta_ref, opts.thrust_ref).max();
    if !(fit.max_fit_residual <= opts.residual_bound) {
        return Err(HzdError::FitQuality(format!(
            "residual {:.3e} N exceeds {:.3e} N at degree {}; try a higher degree",
            fit.max_fit_residual, opts.residual_bound, opts.degree
        )));
    }
    Ok(fit)
}

/// Which constraint limits feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    VerticalForce,
    Friction,
    Zeta,
}

impl ConstraintKind {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintKind::VerticalForce => "vertical-force",
            ConstraintKind::Friction => "friction",
            ConstraintKind::Zeta => "zeta",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub feasible: bool,
    /// Smallest vertical ground force after tightening (N).
    pub min_vertical_margin: f64,
    /// Largest `|F_1ʰ|/F_1ᵛ` after tightening; infinite when the foot unloads.
    pub max_friction_ratio: f64,
    pub min_zeta: f64,
    pub worst_alpha: f64,
    /// Most violated constraint, or the tightest one when feasible.
    pub binding: ConstraintKind,
    pub mu: f64,
}

/// Physical thrust of a schedule at `α`.
pub fn physical_thrust(zd: &ZeroDynamics, schedule: &ThrusterSchedule, segment: usize, alpha: f64) -> Result<f64> {
    let v = schedule.values[segment];
    match schedule.channel {
        ThrustChannel::Physical => Ok(v),
        ThrustChannel::Generalized if v == 0.0 => Ok(0.0),
        ThrustChannel::Generalized => {
            let b = zd.b_n(alpha);
            if b.abs() < MIN_THRUST_GAIN {
                return Err(HzdError::InfeasibleSchedule(format!(
                    "thrust gain b_N vanishes at alpha = {alpha:.6}"
                )));
            }
            Ok(v / b)
        }
    }
}

struct Scan {
    report: ConstraintReport,
    worst_slack: f64,
}

impl Scan {
    fn new(mu: f64, alpha: f64) -> Self {
        Self {
            report: ConstraintReport {
                feasible: true,
                min_vertical_margin: f64::INFINITY,
                max_friction_ratio: 0.0,
                min_zeta: f64::INFINITY,
                worst_alpha: alpha,
                binding: ConstraintKind::VerticalForce,
                mu,
            },
            worst_slack: f64::INFINITY,
        }
    }

    fn slack(&mut self, kind: ConstraintKind, alpha: f64, slack: f64) {
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.report.worst_alpha = alpha;
            self.report.binding = kind;
        }
        if !(slack > 0.0) {
            self.report.feasible = false;
        }
    }
}

/// Scans every segment with its own value; `force` returns the ground force and its error bound.
fn scan_constraints<F>(
    zd: &ZeroDynamics,
    schedule: &ThrusterSchedule,
    zeta_star: f64,
    mu: f64,
    points_per_segment: usize,
    mut force: F,
) -> Result<ConstraintReport>
where
    F: FnMut(f64, f64, f64) -> Result<(Vector2<f64>, Vector2<f64>)>,
{
    schedule.validate(zd.alpha_i(), zd.alpha_f())?;
    let zeta_i = zd.impact_scale().powi(2) * zeta_star;
    let weight = zd.biped().total_mass() * zd.biped().params().gravity;
    let mut scan = Scan::new(mu, zd.alpha_i());
    for (j, seg) in schedule.breakpoints.windows(2).enumerate() {
        for alpha in linspace(seg[0], seg[1], points_per_segment) {
            let zeta = zd.zeta_at(alpha, zeta_i, schedule);
            scan.report.min_zeta = scan.report.min_zeta.min(zeta);
            scan.slack(ConstraintKind::Zeta, alpha, zeta / zeta_star.abs().max(1e-12));
            if zeta < 0.0 {
                continue;
            }
            let thrust = physical_thrust(zd, schedule, j, alpha)?;
            let (f1, err) = force(alpha, zeta, thrust)?;
            let vertical = f1[1] - 2.0 * err[1];
            let ratio = if vertical > 0.0 {
                (f1[0].abs() + 2.0 * err[0]) / vertical
            } else {
                f64::INFINITY
            };
            scan.report.min_vertical_margin = scan.report.min_vertical_margin.min(vertical);
            scan.report.max_friction_ratio = scan.report.max_friction_ratio.max(ratio);
            scan.slack(ConstraintKind::VerticalForce, alpha, vertical / weight);
            if vertical > 0.0 {
                scan.slack(ConstraintKind::Friction, alpha, (mu - ratio) / mu);
            }
        }
    }
    Ok(scan.report)
}

/// Constraint check with the polynomial surrogates; margins tightened by twice the fit error.
pub fn check_constraints(
    zd: &ZeroDynamics,
    schedule: &ThrusterSchedule,
    zeta_star: f64,
    fit: &SwingForceFit,
    mu: f64,
) -> Result<ConstraintReport> {
    scan_constraints(zd, schedule, zeta_star, mu, 201, |alpha, zeta, thrust| {
        Ok((fit.local(alpha).ground(zeta, thrust), fit.error_bound(zeta, thrust)))
    })
}

/// Same check with the exact forces on a dense grid.
pub fn check_constraints_exact(
    zd: &ZeroDynamics,
    schedule: &ThrusterSchedule,
    zeta_star: f64,
    mu: f64,
    points_per_segment: usize,
) -> Result<ConstraintReport> {
    let model = SwingForceModel::new(zd)?;
    scan_constraints(zd, schedule, zeta_star, mu, points_per_segment, |alpha, zeta, thrust| {
        Ok((model.at(alpha, zeta, thrust)?.f_1, Vector2::zeros()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedSchedule {
    pub schedule: ThrusterSchedule,
    pub fixed_point: FixedPoint,
    pub report: ConstraintReport,
    /// Inequalities active at the optimum.
    pub active: Vec<String>,
}

struct Row {
    g: Vec<f64>,
    h: f64,
    label: String,
}

/// Minimum `Σ T_j²` schedule on fixed breakpoints that moves `ζ*` by `shift`
/// while keeping the surrogate ground force feasible on a 201-point grid per segment.
pub fn optimize_schedule(
    zd: &ZeroDynamics,
    shift: f64,
    breakpoints: &[f64],
    channel: ThrustChannel,
    fit: &SwingForceFit,
    mu: f64,
) -> Result<OptimizedSchedule> {
    let n_seg = breakpoints.len().saturating_sub(1);
    let template = ThrusterSchedule {
        breakpoints: breakpoints.to_vec(),
        values: vec![0.0; n_seg],
        channel,
    };
    template.validate(zd.alpha_i(), zd.alpha_f())?;
    let slope = zd.impact_scale().powi(2);
    let zero = ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f());
    let nominal = zd.fixed_point(&zero)?.zeta_star;
    let target = nominal + shift;
    let zeta_i = slope * target;

    let r = fit.residuals;
    let mut rows: Vec<Row> = Vec::new();
    for (j, seg) in breakpoints.windows(2).enumerate() {
        for alpha in linspace(seg[0], seg[1], 201) {
            // ζ(α) = z0 + pᵀT and F_T = gain·T_j
            let z0 = zd.zeta_at(alpha, zeta_i, &zero);
            let p = zd.partial_weights(&template, alpha);
            let gain = match channel {
                ThrustChannel::Physical => 1.0,
                ThrustChannel::Generalized => {
                    let b = zd.b_n(alpha);
                    if b.abs() < MIN_THRUST_GAIN {
                        return Err(HzdError::InfeasibleSchedule(format!(
                            "thrust gain b_N vanishes at alpha = {alpha:.6}"
                        )));
                    }
                    1.0 / b
                }
            };
            let loc = fit.local(alpha);
            let g2 = loc.l2 - loc.b;
            let at = format!("alpha = {alpha:.6} (segment {j})");
            let row = |zc: f64, fc: f64, c0: f64| -> (Vec<f64>, f64) {
                // zc·ζ + fc·F_T + c0 ≥ 0
                let mut g: Vec<f64> = p.iter().map(|pk| zc * pk).collect();
                g[j] += fc * gain;
                (g, -(zc * z0 + c0))
            };
            let (g, h) = row(1.0, 0.0, -ZETA_MARGIN * nominal);
            rows.push(Row {
                g,
                h,
                label: format!("zeta at {at}"),
            });
            for s in [1.0, -1.0] {
                let (g, h) = row(
                    loc.l1[1] - 2.0 * r.l1[1],
                    g2[1] - 2.0 * s * (r.l2[1] + r.b[1]),
                    loc.l0[1] - 2.0 * r.l0[1] - 1e-6,
                );
                rows.push(Row {
                    g,
                    h,
                    label: format!("vertical-force at {at}"),
                });
                for sh in [1.0, -1.0] {
                    let (g, h) = row(
                        mu * loc.l1[1] - sh * loc.l1[0] - 2.0 * (mu * r.l1[1] + r.l1[0]),
                        mu * g2[1] - sh * g2[0] - 2.0 * s * (mu * (r.l2[1] + r.b[1]) + r.l2[0] + r.b[0]),
                        mu * loc.l0[1] - sh * loc.l0[0] - 2.0 * (mu * r.l0[1] + r.l0[0]) - 1e-6,
                    );
                    rows.push(Row {
                        g,
                        h,
                        label: format!("friction at {at}"),
                    });
                }
            }
        }
    }

    let w = zd.segment_weights(&template);
    let a = DMatrix::from_row_slice(1, n_seg, &w);
    let b = DVector::from_element(1, shift * (1.0 - slope));
    let g = DMatrix::from_fn(rows.len(), n_seg, |i, k| rows[i].g[k]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.h));
    let sol = qp::solve_min_norm(&a, &b, &g, &h).map_err(|e| match e {
        QpError::Infeasible { row } => HzdError::OptimizationInfeasible {
            constraint: rows[row].label.clone(),
        },
        QpError::InconsistentEqualities => HzdError::OptimizationInfeasible {
            constraint: "fixed-point shift (all segment weights vanish)".into(),
        },
        QpError::IterationLimit => HzdError::Divergence("schedule optimizer hit its iteration limit".into()),
    })?;

    let schedule = ThrusterSchedule {
        values: sol.x.iter().copied().collect(),
        ..template
    };
    let fixed_point = zd.fixed_point(&schedule).map_err(|e| match e {
        HzdError::InfeasibleSchedule(msg) => HzdError::OptimizationInfeasible {
            constraint: format!("zeta ({msg})"),
        },
        e => e,
    })?;
    let report = check_constraints(zd, &schedule, fixed_point.zeta_star, fit, mu)?;
    Ok(OptimizedSchedule {
        schedule,
        fixed_point,
        report,
        active: sol.active.iter().map(|&i| rows[i].label.clone()).collect(),
    })
}
