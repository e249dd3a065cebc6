//! Full-order hybrid simulation: closed-loop swing phase, impact, relabeling.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::control::ClosedLoop;
use crate::error::{HzdError, Result};
use crate::model::{to_unpinned, Biped};
use crate::ode::{Crossing, Dopri5, Event};
use crate::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

/// Result of the rigid impact of the swing foot.
#[derive(Debug, Clone)]
pub struct ImpactResult {
    /// Post-impact velocity in unpinned coordinates, before relabeling.
    pub qdot_plus: DVector<f64>,
    /// Impulse on the swing foot (N·s).
    pub impulse: Vector2<f64>,
}

/// Plastic impact with no slip or rebound of the swing foot.
///
/// Solves `[D_u −E₂ᵀ; E₂ 0] [q̇⁺; F₂] = [D_u q̇⁻; 0]` with the stance foot at rest
/// before impact.
pub fn impact_map(biped: &Biped, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<ImpactResult> {
    let n = biped.dof();
    let (qu, qud) = to_unpinned(q, qdot, Vector2::zeros());
    let terms = biped.unpinned_dynamics(&qu, &qud)?;
    let m = n + 2;
    let mut k = DMatrix::zeros(m + 2, m + 2);
    k.view_mut((0, 0), (m, m)).copy_from(&terms.d);
    k.view_mut((0, m), (m, 2)).copy_from(&(-terms.e2.transpose()));
    k.view_mut((m, 0), (2, m)).copy_from(&terms.e2);
    let chol = terms
        .d
        .clone()
        .cholesky()
        .ok_or_else(|| HzdError::NumericalSingularity("unpinned inertia not positive definite".into()))?;
    let schur = &terms.e2 * chol.solve(&terms.e2.transpose());
    let sv = schur.singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(HzdError::DegenerateImpact("E2 D^-1 E2^T is singular".into()));
    }
    let mut rhs = DVector::zeros(m + 2);
    rhs.rows_mut(0, m).copy_from(&(&terms.d * &qud));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| HzdError::DegenerateImpact("impact system is singular".into()))?;
    Ok(ImpactResult {
        qdot_plus: sol.rows(0, m).into_owned(),
        impulse: Vector2::new(sol[m], sol[m + 1]),
    })
}

/// Leg exchange for pinned coordinates.
pub fn relabel(biped: &Biped, q: &DVector<f64>, qdot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    biped.relabel(q, qdot)
}

/// Named settling-time presets for the second-order thruster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThrusterPreset {
    /// 2% settling time of about three steps.
    Slow,
    /// 2% settling time of about a tenth of a step.
    Fast,
}

/// `F̈ = ω²(F_ss − F) − 2ζω Ḟ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrusterLinModel {
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    pub steady_state: f64,
}

impl ThrusterLinModel {
    pub const PRESET_DAMPING: f64 = 0.9;

    pub fn preset(preset: ThrusterPreset, step_duration: f64, steady_state: f64) -> Self {
        let steps = match preset {
            ThrusterPreset::Slow => 3.0,
            ThrusterPreset::Fast => 0.1,
        };
        let z = Self::PRESET_DAMPING;
        Self {
            natural_frequency: 4.0 / (z * steps * step_duration),
            damping_ratio: z,
            steady_state,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.natural_frequency > 0.0 && self.damping_ratio > 0.0 && self.steady_state.is_finite()) {
            return Err(HzdError::Config(
                "thruster natural_frequency and damping_ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Thrust and thrust rate after `t` seconds from `(f0, fd0)`.
    pub fn response(&self, t: f64, f0: f64, fd0: f64) -> (f64, f64) {
        let w = self.natural_frequency;
        let z = self.damping_ratio;
        let x0 = f0 - self.steady_state;
        let (x, xd) = if (z - 1.0).abs() < 1e-12 {
            let e = (-w * t).exp();
            let b = fd0 + w * x0;
            (e * (x0 + b * t), e * (b - w * (x0 + b * t)))
        } else if z < 1.0 {
            let wd = w * (1.0 - z * z).sqrt();
            let e = (-z * w * t).exp();
            let b = (fd0 + z * w * x0) / wd;
            let (s, c) = (wd * t).sin_cos();
            let x = e * (x0 * c + b * s);
            let xd = e * ((b * wd - z * w * x0) * c - (x0 * wd + z * w * b) * s);
            (x, xd)
        } else {
            let r = w * (z * z - 1.0).sqrt();
            let (r1, r2) = (-z * w + r, -z * w - r);
            let a = (fd0 - r2 * x0) / (r1 - r2);
            let b = x0 - a;
            let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
            (a * e1 + b * e2, a * r1 * e1 + b * r2 * e2)
        };
        (x + self.steady_state, xd)
    }
}

/// Where the thrust comes from during simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThrustSource {
    Constant { thrust: f64 },
    Schedule(ThrusterSchedule),
    SecondOrder(ThrusterLinModel),
}

impl ThrustSource {
    pub fn none() -> Self {
        ThrustSource::Constant { thrust: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    /// Thrust and its rate, carried across steps by the second-order thruster.
    pub thrust_state: Option<(f64, f64)>,
    pub step_index: usize,
    pub t: f64,
}

impl HybridState {
    pub fn new(q: DVector<f64>, qdot: DVector<f64>) -> Self {
        Self {
            q,
            qdot,
            thrust_state: None,
            step_index: 0,
            t: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub u: DVector<f64>,
    pub thrust: f64,
    pub y: DVector<f64>,
    pub ydot: DVector<f64>,
    pub alpha: f64,
    pub alpha_dot: f64,
    pub sigma: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone)]
pub struct ImpactRecord {
    pub q_minus: DVector<f64>,
    pub qdot_minus: DVector<f64>,
    pub q_plus: DVector<f64>,
    pub qdot_plus: DVector<f64>,
    pub impulse: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Impact,
    StepFailure,
    Divergence,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub samples: Vec<Sample>,
    pub impact: Option<ImpactRecord>,
    pub termination: Termination,
    /// State at the start of the next step (post-impact, relabeled) or where the step stopped.
    pub next: HybridState,
}

impl StepResult {
    /// Converts non-impact terminations into errors.
    pub fn require_impact(self) -> Result<Self> {
        match self.termination {
            Termination::Impact => Ok(self),
            Termination::StepFailure => Err(HzdError::StepFailure {
                alpha: self.samples.last().map_or(f64::NAN, |s| s.alpha),
                reason: "phase velocity reached zero".into(),
            }),
            Termination::Divergence => Err(HzdError::Divergence(format!(
                "step {} left the admissible region",
                self.next.step_index
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub ode: Dopri5,
    /// Largest admissible joint rate (rad/s).
    pub rate_bound: f64,
    /// Longest admissible step (s).
    pub max_step_time: f64,
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            ode: Dopri5::default(),
            rate_bound: 100.0,
            max_step_time: 10.0,
            record: true,
        }
    }
}

/// Closed-loop hybrid simulator for one gait.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub closed_loop: ClosedLoop,
    pub options: SimOptions,
}

/// Per-segment thrust law used inside one integration interval.
#[derive(Clone, Copy)]
enum SegmentThrust {
    Constant(f64),
    Generalized(f64),
    SecondOrder { model: ThrusterLinModel, t0: f64, f0: f64, fd0: f64 },
}

impl Simulator {
    pub fn new(closed_loop: ClosedLoop) -> Self {
        Self {
            closed_loop,
            options: SimOptions::default(),
        }
    }

    pub fn biped(&self) -> &Biped {
        &self.closed_loop.biped
    }

    fn thrust(&self, law: SegmentThrust, t: f64, q: &DVector<f64>) -> Result<f64> {
        Ok(match law {
            SegmentThrust::Constant(f) => f,
            SegmentThrust::Generalized(value) => {
                if value == 0.0 {
                    return Ok(0.0);
                }
                let b_n = self.biped().thrust_map(q)[q.len() - 1];
                if b_n.abs() < 1e-6 {
                    return Err(HzdError::NumericalSingularity(format!(
                        "generalized thrust {value} requested where b_N = {b_n:.3e}"
                    )));
                }
                value / b_n
            }
            SegmentThrust::SecondOrder { model, t0, f0, fd0 } => model.response(t - t0, f0, fd0).0,
        })
    }

    /// Integrates one step from `x0` until impact, failure or divergence.
    pub fn simulate_step(&self, x0: &HybridState, source: &ThrustSource) -> Result<StepResult> {
        let biped = self.biped();
        let gait = &self.closed_loop.gait;
        let n = biped.dof();
        let dir = (gait.alpha_f - gait.alpha_i).signum();
        let alpha_mid = gait.alpha_mid();
        let t_limit = x0.t + self.options.max_step_time;

        let schedule = match source {
            ThrustSource::Schedule(s) => {
                s.validate(gait.alpha_i, gait.alpha_f)?;
                Some(s)
            }
            _ => None,
        };
        let (f0, fd0) = match source {
            ThrustSource::SecondOrder(m) => {
                m.validate()?;
                x0.thrust_state.unwrap_or((0.0, 0.0))
            }
            _ => (0.0, 0.0),
        };

        let mut y: Vec<f64> = x0.q.iter().chain(x0.qdot.iter()).copied().collect();
        let mut t = x0.t;
        let mut raw: Vec<(f64, Vec<f64>, SegmentThrust)> = Vec::new();
        let mut segment = schedule.map(|s| s.segment_at(gait.alpha(&x0.q)));

        let outcome = loop {
            let law = match (source, schedule, segment) {
                (ThrustSource::Constant { thrust }, _, _) => SegmentThrust::Constant(*thrust),
                (ThrustSource::SecondOrder(m), _, _) => SegmentThrust::SecondOrder {
                    model: *m,
                    t0: x0.t,
                    f0,
                    fd0,
                },
                (_, Some(s), Some(j)) => match s.channel {
                    ThrustChannel::Generalized => SegmentThrust::Generalized(s.values[j]),
                    ThrustChannel::Physical => SegmentThrust::Constant(s.values[j]),
                },
                _ => unreachable!("schedule source always has a segment"),
            };
            let next_break = match (schedule, segment) {
                (Some(s), Some(j)) if j + 1 < s.segments() => Some(s.breakpoints[j + 1]),
                _ => None,
            };
            let rhs = |tt: f64, x: &[f64], dx: &mut [f64]| {
                let q = DVector::from_column_slice(&x[..n]);
                let thrust = self.thrust(law, tt, &q)?;
                self.closed_loop.vector_field(x, thrust, dx)
            };
            let alpha_of = |x: &[f64]| gait.c.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
            let events = [
                Event::new(
                    |_t, x: &[f64]| biped.swing_foot_height(&DVector::from_column_slice(&x[..n])),
                    Crossing::Falling,
                )
                .with_guard(move |_t, x: &[f64]| (alpha_of(x) - alpha_mid) * dir > 0.0),
                Event::new(move |_t, x: &[f64]| alpha_of(&x[n..]) * dir, Crossing::Falling),
                Event::new(
                    |_t, x: &[f64]| self.options.rate_bound - x[n..].iter().fold(0.0f64, |m, v| m.max(v.abs())),
                    Crossing::Falling,
                ),
                Event::new(
                    move |_t, x: &[f64]| next_break.map_or(-1.0, |b| (alpha_of(x) - b) * dir),
                    Crossing::Rising,
                ),
            ];
            let record = self.options.record;
            let out = self.options.ode.integrate(rhs, t, &y, t_limit, &events, |tt, x| {
                if record && raw.last().is_none_or(|r| r.0 != tt) {
                    raw.push((tt, x.to_vec(), law));
                }
                Ok(())
            })?;
            t = out.t;
            y = out.y.clone();
            match out.event {
                Some(3) => {
                    segment = segment.map(|j| j + 1);
                    continue;
                }
                other => break (other, out),
            }
        };

        let (event, out) = outcome;
        let samples = if self.options.record {
            raw.iter()
                .map(|(tt, x, law)| self.sample(*tt, x, *law))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let q_end = DVector::from_column_slice(&out.y[..n]);
        let qd_end = DVector::from_column_slice(&out.y[n..]);
        let thrust_state = match source {
            ThrustSource::SecondOrder(m) => Some(m.response(out.t - x0.t, f0, fd0)),
            _ => x0.thrust_state,
        };

        let termination = match event {
            Some(0) => Termination::Impact,
            Some(1) => Termination::StepFailure,
            _ => Termination::Divergence,
        };
        if termination != Termination::Impact {
            return Ok(StepResult {
                samples,
                impact: None,
                termination,
                next: HybridState {
                    q: q_end,
                    qdot: qd_end,
                    thrust_state,
                    step_index: x0.step_index,
                    t: out.t,
                },
            });
        }
        let imp = impact_map(biped, &q_end, &qd_end)?;
        let (q_plus, qd_plus) = biped.relabel(&q_end, &imp.qdot_plus.rows(0, n).into_owned());
        Ok(StepResult {
            samples,
            impact: Some(ImpactRecord {
                q_minus: q_end,
                qdot_minus: qd_end,
                q_plus: q_plus.clone(),
                qdot_plus: qd_plus.clone(),
                impulse: imp.impulse,
            }),
            termination,
            next: HybridState {
                q: q_plus,
                qdot: qd_plus,
                thrust_state,
                step_index: x0.step_index + 1,
                t: out.t,
            },
        })
    }

    fn sample(&self, t: f64, x: &[f64], law: SegmentThrust) -> Result<Sample> {
        let n = self.biped().dof();
        let q = DVector::from_column_slice(&x[..n]);
        let qdot = DVector::from_column_slice(&x[n..]);
        let thrust = self.thrust(law, t, &q)?;
        let e = self.closed_loop.evaluate(&q, &qdot, thrust)?;
        let gait = &self.closed_loop.gait;
        let (y, ydot) = gait.output(&q, &qdot);
        let sigma = self.biped().angular_momentum(&q, &qdot);
        Ok(Sample {
            t,
            alpha: gait.alpha(&q),
            alpha_dot: gait.alpha(&qdot),
            sigma,
            zeta: 0.5 * sigma * sigma,
            q,
            qdot,
            u: e.u,
            thrust,
            y,
            ydot,
        })
    }

    /// Runs `steps` consecutive steps, stopping at the first non-impact termination.
    pub fn simulate_gait(&self, x0: &HybridState, source: &ThrustSource, steps: usize) -> Result<Vec<StepResult>> {
        let mut out = Vec::with_capacity(steps);
        let mut x = x0.clone();
        for _ in 0..steps {
            let r = self.simulate_step(&x, source)?;
            let done = r.termination != Termination::Impact;
            x = r.next.clone();
            out.push(r);
            if done {
                break;
            }
        }
        Ok(out)
    }

    /// Post-impact state from Poincaré-section coordinates `(q_b, q̇)`.
    pub fn section_to_state(&self, x: &[f64]) -> HybridState {
        let n = self.biped().dof();
        let q = self.biped().double_support_configuration(&x[..n - 1]);
        HybridState::new(q, DVector::from_column_slice(&x[n - 1..]))
    }

    pub fn state_to_section(&self, s: &HybridState) -> Vec<f64> {
        let n = self.biped().dof();
        s.q.rows(0, n - 1).iter().chain(s.qdot.iter()).copied().collect()
    }

    fn return_map(&self, x: &[f64], source: &ThrustSource) -> Result<Vec<f64>> {
        let quiet = Simulator {
            closed_loop: self.closed_loop.clone(),
            options: SimOptions {
                record: false,
                ..self.options.clone()
            },
        };
        let r = quiet.simulate_step(&self.section_to_state(x), source)?.require_impact()?;
        Ok(self.state_to_section(&r.next))
    }

    /// Fixed point of the full-order step-to-step map on the post-impact section.
    pub fn find_limit_cycle(
        &self,
        source: &ThrustSource,
        guess: &HybridState,
        max_iter: usize,
    ) -> Result<LimitCycle> {
        if matches!(source, ThrustSource::SecondOrder(_)) {
            return Err(HzdError::Config("limit cycles need a time-invariant thrust source".into()));
        }
        let tol = 1e-10;
        let mut x = self.state_to_section(guess);
        let dim = x.len();
        let residual = |x: &[f64]| -> Result<(Vec<f64>, f64)> {
            let p = self.return_map(x, source)?;
            let r: Vec<f64> = p.iter().zip(x).map(|(a, b)| a - b).collect();
            let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok((r, norm))
        };
        let (mut r, mut norm) = residual(&x)?;
        let mut iterations = 0;
        let mut newton_ok = true;
        while norm > tol && iterations < max_iter {
            iterations += 1;
            let step = if newton_ok {
                let mut jac = DMatrix::zeros(dim, dim);
                for k in 0..dim {
                    let h = 1e-7 * (1.0 + x[k].abs());
                    let mut xp = x.clone();
                    xp[k] += h;
                    let (rp, _) = residual(&xp)?;
                    for i in 0..dim {
                        jac[(i, k)] = (rp[i] - r[i]) / h;
                    }
                }
                jac.lu().solve(&DVector::from_column_slice(&r)).map(|d| -d)
            } else {
                None
            };
            match step {
                Some(d) => {
                    let mut lambda = 1.0;
                    let mut accepted = false;
                    while lambda > 1e-3 {
                        let xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + lambda * b).collect();
                        if let Ok((rn, nn)) = residual(&xn) {
                            if nn < norm {
                                x = xn;
                                r = rn;
                                norm = nn;
                                accepted = true;
                                break;
                            }
                        }
                        lambda *= 0.5;
                    }
                    if !accepted {
                        newton_ok = false;
                    }
                }
                None => {
                    // plain iteration of the return map
                    newton_ok = false;
                    x = x.iter().zip(&r).map(|(a, b)| a + b).collect();
                    let (rn, nn) = residual(&x)?;
                    r = rn;
                    norm = nn;
                }
            }
        }
        if norm > tol {
            return Err(HzdError::NoLimitCycle(format!(
                "return-map residual {norm:.3e} after {iterations} iterations"
            )));
        }
        let start = self.section_to_state(&x);
        let step = self.simulate_step(&start, source)?.require_impact()?;
        let impact = step.impact.as_ref().expect("impact termination carries a record");
        let sigma_minus = self.biped().angular_momentum(&impact.q_minus, &impact.qdot_minus);
        Ok(LimitCycle {
            start,
            zeta_star: 0.5 * sigma_minus * sigma_minus,
            sigma_minus,
            period: step.next.t,
            residual: norm,
            iterations,
            orbit: step.samples,
        })
    }

    /// On-manifold post-impact state whose pre-impact `ζ` equals `zeta_minus`.
    pub fn state_from_zeta(&self, zd: &ZeroDynamics, zeta_minus: f64) -> HybridState {
        let sigma_plus = zd.impact_scale() * (2.0 * zeta_minus).sqrt();
        let (q, qd) = zd.manifold_state(zd.alpha_i(), sigma_plus);
        HybridState::new(q, qd)
    }
}

/// A periodic orbit of the full-order hybrid system.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    /// Post-impact state on the section.
    pub start: HybridState,
    /// Pre-impact `ζ⁻`.
    pub zeta_star: f64,
    pub sigma_minus: f64,
    pub period: f64,
    pub residual: f64,
    pub iterations: usize,
    pub orbit: Vec<Sample>,
}
