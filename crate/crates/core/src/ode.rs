//! Dormand–Prince 5(4) integrator with dense output and event location.
//!
//! The integrator works on plain `f64` slices so it can drive both the
//! time-domain hybrid simulation and the phase-domain (`alpha`) zero
//! dynamics. Events are located on the continuous extension by bisection,
//! then the state at the event is recomputed with a single explicit step from
//! the start of the bracketing step.

use crate::error::{HzdError, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Direction of a zero crossing that counts as an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    Rising,
    Falling,
    Either,
}

impl Crossing {
    fn matches(self, before: f64, after: f64) -> bool {
        match self {
            Crossing::Rising => before < 0.0 && after >= 0.0,
            Crossing::Falling => before > 0.0 && after <= 0.0,
            Crossing::Either => (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0),
        }
    }
}

type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + 'a>;
type GuardFn<'a> = Box<dyn Fn(f64, &[f64]) -> bool + 'a>;

/// A scalar event function with an optional guard evaluated at the located root.
pub struct Event<'a> {
    pub func: EventFn<'a>,
    pub crossing: Crossing,
    pub guard: Option<GuardFn<'a>>,
}

impl<'a> Event<'a> {
    pub fn new(func: impl Fn(f64, &[f64]) -> f64 + 'a, crossing: Crossing) -> Self {
        Self {
            func: Box::new(func),
            crossing,
            guard: None,
        }
    }

    pub fn with_guard(mut self, guard: impl Fn(f64, &[f64]) -> bool + 'a) -> Self {
        self.guard = Some(Box::new(guard));
        self
    }
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Absolute width of the bracketing interval at which event bisection stops.
    pub event_tol: f64,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            h_max: f64::INFINITY,
            max_steps: 200_000,
            event_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub t: f64,
    pub y: Vec<f64>,
    /// Index of the terminal event that stopped integration, if any.
    pub event: Option<usize>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Dopri5 {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// Integrates `dy/dt = f(t, y)` from `t0` to `t_end`, stopping early at the
    /// first event whose crossing matches and whose guard (if any) holds.
    ///
    /// `observe` is called at the initial point, after every accepted step and
    /// at the final point.
    pub fn integrate<F, O>(
        &self,
        mut f: F,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        events: &[Event<'_>],
        mut observe: O,
    ) -> Result<Outcome>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
        O: FnMut(f64, &[f64]) -> Result<()>,
    {
        let n = y0.len();
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let span = (t_end - t0).abs();
        let mut st = Stages {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        };
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut y_new = vec![0.0; n];
        let mut err = vec![0.0; n];

        observe(t, &y)?;
        if span == 0.0 {
            return Ok(Outcome {
                t,
                y,
                event: None,
                accepted_steps: 0,
                rejected_steps: 0,
            });
        }

        f(t, &y, &mut st.k[0])?;
        let mut h = self.initial_step(&mut f, t, &y, &st.k[0], dir, span)?;
        let mut g_prev: Vec<f64> = events.iter().map(|e| (e.func)(t, &y)).collect();
        let mut accepted = 0usize;
        let mut rejected = 0usize;

        loop {
            if accepted + rejected > self.max_steps {
                return Err(HzdError::NumericalSingularity(format!(
                    "integrator exceeded {} steps at t = {t}",
                    self.max_steps
                )));
            }
            let remaining = (t_end - t) * dir;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(HzdError::NumericalSingularity(format!(
                    "step size underflow at t = {t}"
                )));
            }
            let hs = h * dir;
            self.stages(&mut f, t, &y, hs, &mut st, &mut y_new, &mut err)?;
            let en = self.error_norm(&y, &y_new, &err);
            if !en.is_finite() {
                h *= 0.2;
                rejected += 1;
                continue;
            }
            if en > 1.0 {
                let fac = (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
                h *= fac;
                rejected += 1;
                continue;
            }
            accepted += 1;
            let t_new = if last { t_end } else { t + hs };

            // event scan over the accepted step
            let mut hit: Option<(usize, f64)> = None;
            for (i, ev) in events.iter().enumerate() {
                let g_new = (ev.func)(t_new, &y_new);
                if ev.crossing.matches(g_prev[i], g_new) {
                    let root = self.locate(ev, &st, &y, &y_new, t, hs, g_prev[i]);
                    let ok = match &ev.guard {
                        Some(guard) => {
                            let ys = dense(&st, &y, &y_new, hs, (root - t) / hs);
                            guard(root, &ys)
                        }
                        None => true,
                    };
                    if ok && hit.is_none_or(|(_, r)| (root - t) * dir < (r - t) * dir) {
                        hit = Some((i, root));
                    }
                }
                g_prev[i] = g_new;
            }

            if let Some((idx, root)) = hit {
                // re-step exactly to the root from the start of the bracketing step
                let hr = root - t;
                let mut y_ev = vec![0.0; n];
                if hr != 0.0 {
                    self.stages(&mut f, t, &y, hr, &mut st, &mut y_ev, &mut err)?;
                } else {
                    y_ev.copy_from_slice(&y);
                }
                observe(root, &y_ev)?;
                return Ok(Outcome {
                    t: root,
                    y: y_ev,
                    event: Some(idx),
                    accepted_steps: accepted,
                    rejected_steps: rejected,
                });
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            // FSAL
            let (head, tail) = st.k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            observe(t, &y)?;
            if last {
                return Ok(Outcome {
                    t,
                    y,
                    event: None,
                    accepted_steps: accepted,
                    rejected_steps: rejected,
                });
            }
            let fac = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * fac).min(self.h_max);
        }
    }

    fn initial_step<F>(&self, f: &mut F, t: f64, y: &[f64], f0: &[f64], dir: f64, span: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.abs()).collect();
        let d0 = rms(y.iter().zip(&sc).map(|(v, s)| v / s), n);
        let d1 = rms(f0.iter().zip(&sc).map(|(v, s)| v / s), n);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + dir * h0 * b).collect();
        let mut f1 = vec![0.0; n];
        f(t + dir * h0, &y1, &mut f1)?;
        let d2 = rms(f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| (a - b) / s), n) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span).min(self.h_max))
    }

    #[allow(clippy::too_many_arguments)]
    fn stages<F>(
        &self,
        f: &mut F,
        t: f64,
        y: &[f64],
        h: f64,
        st: &mut Stages,
        y_new: &mut [f64],
        err: &mut [f64],
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        let Stages { k, tmp } = st;
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k[0][i];
        }
        f(t + C2 * h, tmp, &mut k[1])?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        f(t + C3 * h, tmp, &mut k[2])?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        f(t + C4 * h, tmp, &mut k[3])?;
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        f(t + C5 * h, tmp, &mut k[4])?;
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
        }
        f(t + h, tmp, &mut k[5])?;
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
        }
        f(t + h, y_new, &mut k[6])?;
        for i in 0..n {
            err[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        }
        Ok(())
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], err: &[f64]) -> f64 {
        let n = y.len();
        rms(
            err.iter()
                .zip(y.iter().zip(y_new))
                .map(|(e, (a, b))| e / (self.atol + self.rtol * a.abs().max(b.abs()))),
            n,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn locate(&self, ev: &Event<'_>, st: &Stages, y0: &[f64], y1: &[f64], t: f64, h: f64, g0: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut g_lo = g0;
        let width = self.event_tol / h.abs();
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            let ym = dense(st, y0, y1, h, mid);
            let gm = (ev.func)(t + mid * h, &ym);
            if (g_lo < 0.0) == (gm < 0.0) && gm != 0.0 {
                lo = mid;
                g_lo = gm;
            } else {
                hi = mid;
            }
        }
        t + hi * h
    }
}

fn dense(st: &Stages, y0: &[f64], y1: &[f64], h: f64, theta: f64) -> Vec<f64> {
    let k = &st.k;
    let th1 = 1.0 - theta;
    (0..y0.len())
        .map(|i| {
            let r2 = y1[i] - y0[i];
            let r3 = h * k[0][i] - r2;
            let r4 = r2 - h * k[6][i] - r3;
            let r5 = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            y0[i] + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
        })
        .collect()
}

fn rms(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    (it.map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt()
}
