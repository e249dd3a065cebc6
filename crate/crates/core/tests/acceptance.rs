//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;

use anyhow::{anyhow, ensure, Result};
use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thrust_hzd::control::{ClosedLoop, Gains};
use thrust_hzd::forces::{
    check_constraints, check_constraints_exact, fit_force_polynomials, impact_force_restricted, optimize_schedule,
    swing_force, FitOptions, SwingForceModel,
};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::hybrid::{
    impact_map, HybridState, Simulator, ThrustSource, ThrusterLinModel, ThrusterPreset,
};
use thrust_hzd::model::{to_unpinned, Biped, ModelParams};
use thrust_hzd::ode::Dopri5;
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};
use thrust_hzd::HzdError;

struct Fixture {
    biped: Biped,
    zd: ZeroDynamics,
    sim: Simulator,
    zeta0: f64,
}

impl Fixture {
    fn new() -> Result<Self> {
        let biped = Biped::new(ModelParams::default())?;
        let gait = GaitParams::nominal();
        let zd = ZeroDynamics::build(&biped, &gait)?;
        let sim = Simulator::new(ClosedLoop::new(biped.clone(), gait, Gains::default())?);
        let zeta0 = zd.fixed_point(&zero(&zd))?.zeta_star;
        Ok(Self { biped, zd, sim, zeta0 })
    }
}

fn zero(zd: &ZeroDynamics) -> ThrusterSchedule {
    ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f())
}

fn physical(zd: &ZeroDynamics, thrust: f64) -> ThrusterSchedule {
    ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), thrust, ThrustChannel::Physical)
}

fn section_distance(sim: &Simulator, a: &HybridState, b: &HybridState) -> f64 {
    let (x, y) = (sim.state_to_section(a), sim.state_to_section(b));
    x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

fn lagrangian(_: &Fixture) -> Result<String> {
    let b = Biped::new(ModelParams::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut sym, mut skew, mut grav) = (0.0f64, 0.0f64, 0.0f64);
    let mut min_eig = f64::INFINITY;
    for _ in 0..1000 {
        let q = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let qd = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
        let t = b.pinned_dynamics(&q, &qd)?;
        sym = sym.max((&t.d - t.d.transpose()).amax());
        min_eig = min_eig.min(t.d.clone().symmetric_eigenvalues().min());

        // five-point central differences
        let h = 2e-4;
        let stencil = |f: &dyn Fn(f64) -> f64| (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
        let d_at = |s: f64| b.inertia(&(&q + &qd * s));
        let d_dot = (d_at(-2.0 * h) - d_at(-h) * 8.0 + d_at(h) * 8.0 - d_at(2.0 * h)) / (12.0 * h);
        let n = &d_dot - &t.c * 2.0;
        skew = skew.max((&n + n.transpose()).amax());

        for i in 0..3 {
            let pe = |s: f64| {
                let mut qs = q.clone();
                qs[i] += s;
                b.potential_energy(&qs)
            };
            grav = grav.max((stencil(&pe) - t.g[i]).abs());
        }
    }
    ensure!(min_eig > 0.0, "D not positive definite (min eigenvalue {min_eig:e})");
    ensure!(sym < 1e-8, "D asymmetry {sym:e}");
    ensure!(skew < 1e-8, "Ddot - 2C not skew ({skew:e})");
    ensure!(grav < 1e-6, "G vs PE gradient {grav:e}");
    Ok(format!("min eig {min_eig:.3e}, asym {sym:.1e}, skew {skew:.1e}, grad {grav:.1e}"))
}

fn zero_dynamics_fidelity(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let mut worst = 0.0f64;
    for thrust in [0.0, -25.0] {
        let x0 = f.sim.state_from_zeta(zd, f.zeta0);
        let step = f
            .sim
            .simulate_step(&x0, &ThrustSource::Constant { thrust })?
            .require_impact()?;
        // restricted dynamics in time: α̇ = κ1 σ, σ̇ = κ2 + b_N F
        let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| {
            dx[0] = zd.kappa1(x[0]) * x[1];
            dx[1] = zd.kappa2(x[0]) + zd.b_n(x[0]) * thrust;
            Ok(())
        };
        let ode = Dopri5::with_tolerances(1e-12, 1e-12);
        let first = &step.samples[0];
        let mut x = vec![first.alpha, first.sigma];
        let mut t = first.t;
        for s in &step.samples[1..] {
            x = ode.integrate(rhs, t, &x, s.t, &[], |_, _| Ok(()))?.y;
            t = s.t;
            worst = worst.max((x[0] - s.alpha).abs()).max((x[1] - s.sigma).abs());
        }
    }
    ensure!(worst < 1e-5, "max deviation {worst:e}");
    Ok(format!("max (alpha, sigma_N) deviation {worst:.2e} over one step, F = 0 and -25 N"))
}

fn closed_form_vs_ode(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let nominal_i = zd.impact_scale().powi(2) * f.zeta0;
    let mut worst = 0.0f64;
    // T = -50 drains the nominal momentum before the step ends, so start higher
    let zeta_i = 3.0 * f.zeta0;
    for t in [-50.0, -25.0, 0.0, 25.0] {
        let sched = ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), t, ThrustChannel::Generalized);
        let ode = zd.zd_step(zeta_i, &sched)?.final_zeta();
        let closed = zd.zeta_closed_form(zd.alpha_f(), zeta_i, t);
        worst = worst.max(((closed - ode) / ode).abs());

        let sched = physical(zd, t);
        let ode = zd.zd_step(nominal_i, &sched)?.final_zeta();
        let closed = zd.zeta_at(zd.alpha_f(), nominal_i, &sched);
        worst = worst.max(((closed - ode) / ode).abs());
    }
    ensure!(worst < 1e-8, "relative error {worst:e}");
    Ok(format!("max relative error {worst:.2e} (generalized and physical channels)"))
}

fn fixed_point_affinity(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let z = |t: f64| zd.fixed_point(&physical(zd, t)).map(|fp| fp.zeta_star);
    let (t0, t1, t2) = (-50.0, 0.0, 25.0);
    let (z0, z1, z2) = (z(t0)?, z(t1)?, z(t2)?);
    let collinear = (z2 - (z0 + (z1 - z0) * (t2 - t0) / (t1 - t0))).abs();
    ensure!(collinear < 1e-9, "collinearity residual {collinear:e}");

    let mut iterated = 0.0f64;
    for t in [t0, t1, t2] {
        let target = z(t)?;
        let mut zeta = 1.5 * target;
        for _ in 0..400 {
            zeta = zd.restricted_poincare(zeta, &physical(zd, t))?;
        }
        iterated = iterated.max((zeta - target).abs());
    }
    ensure!(iterated < 1e-9, "closed form vs iterated map {iterated:e}");
    Ok(format!("collinearity {collinear:.1e}, iterated map {iterated:.1e}"))
}

fn thrust_sweep(f: &Fixture) -> Result<String> {
    let mut rates = Vec::new();
    for k in 0..6 {
        let thrust = -10.0 * k as f64;
        let guess = f.zd.fixed_point(&physical(&f.zd, thrust))?.zeta_star;
        let lc = f.sim.find_limit_cycle(
            &ThrustSource::Constant { thrust },
            &f.sim.state_from_zeta(&f.zd, guess),
            50,
        )?;
        let last = lc.orbit.last().ok_or_else(|| anyhow!("empty orbit"))?;
        rates.push(last.alpha_dot.abs());
    }
    ensure!(strictly_increasing(&rates), "pre-impact |alpha_dot| not monotone: {rates:?}");
    Ok(format!(
        "pre-impact |alpha_dot| {:.4} -> {:.4} over F = 0..-50 N",
        rates[0], rates[5]
    ))
}

fn shape_family(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let bp = zd.balanced_breakpoints(0.25)?;
    ensure!(bp.len() == 4);
    let nominal = zd.zeta_profile(zd.impact_scale().powi(2) * f.zeta0, &zero(zd), 401);
    let (mut worst_shift, mut deviations) = (0.0f64, Vec::new());
    for k in [0.0, 10.0, 20.0, 30.0, 40.0, 50.0] {
        let s = ThrusterSchedule {
            breakpoints: bp.clone(),
            values: vec![-k, 0.0, k],
            channel: ThrustChannel::Generalized,
        };
        let fp = zd.fixed_point(&s)?;
        worst_shift = worst_shift.max((fp.zeta_star - f.zeta0).abs());
        let profile = zd.zeta_profile(fp.slope * fp.zeta_star, &s, 401);
        let dev = profile
            .zeta
            .iter()
            .zip(&nominal.zeta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        deviations.push(dev);
    }
    ensure!(worst_shift < 1e-8, "|zeta* - zeta*_0| = {worst_shift:e}");
    ensure!(strictly_increasing(&deviations), "mid-step deviation not increasing: {deviations:?}");
    Ok(format!(
        "max |zeta* - zeta*_0| {worst_shift:.1e}; deviation {:.1} -> {:.1}",
        deviations[1], deviations[5]
    ))
}

fn slow_thruster(f: &Fixture) -> Result<String> {
    let nominal = f
        .sim
        .find_limit_cycle(&ThrustSource::none(), &f.sim.state_from_zeta(&f.zd, f.zeta0), 50)?;
    let (mut worst_thrust, mut worst_ratio) = (0.0f64, 0.0f64);
    for k in 1..=6 {
        let level = -50.0 * k as f64 / 6.0;
        let guess = f.zd.fixed_point(&physical(&f.zd, level))?.zeta_star;
        let target = f.sim.find_limit_cycle(
            &ThrustSource::Constant { thrust: level },
            &f.sim.state_from_zeta(&f.zd, guess),
            50,
        )?;
        let model = ThrusterLinModel::preset(ThrusterPreset::Slow, nominal.period, level);
        let mut x = nominal.start.clone();
        x.thrust_state = Some((0.0, 0.0));
        let steps = f.sim.simulate_gait(&x, &ThrustSource::SecondOrder(model), 10)?;
        ensure!(steps.len() == 10, "walking stopped after {} steps", steps.len());
        let mut dist = vec![section_distance(&f.sim, &x, &target.start)];
        for s in &steps {
            s.clone().require_impact()?;
            for smp in &s.samples {
                let analytic = model.response(smp.t - x.t, 0.0, 0.0).0;
                worst_thrust = worst_thrust.max((smp.thrust - analytic).abs());
            }
            dist.push(section_distance(&f.sim, &s.next, &target.start));
        }
        ensure!(
            dist.windows(2).all(|w| w[1] < w[0]),
            "orbit distance not decreasing for F_ss = {level:.2}: {dist:?}"
        );
        worst_ratio = worst_ratio.max(dist[10] / dist[0]);
    }
    ensure!(worst_thrust < 1e-8, "thrust vs analytic {worst_thrust:e}");
    Ok(format!(
        "thrust error {worst_thrust:.1e}; distance after 10 steps <= {worst_ratio:.3} of initial"
    ))
}

fn impact_properties(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let b = &f.biped;
    let sigma0 = (2.0 * f.zeta0).sqrt();
    let mut restricted_err = 0.0f64;
    let mut ratios = Vec::new();
    for scale in [0.5, 1.0, 2.0] {
        let sigma = scale * sigma0;
        let (q, qd) = zd.manifold_state(zd.alpha_f(), sigma);
        let full = impact_map(b, &q, &qd)?.impulse;
        let restricted = impact_force_restricted(zd, sigma)?;
        restricted_err = restricted_err.max((full - restricted).amax());
        ratios.push(full[0] / full[1]);
    }
    let ratio_spread = ratios.iter().map(|r| (r - ratios[1]).abs()).fold(0.0, f64::max);

    let (q, qd) = zd.manifold_state(zd.alpha_f(), sigma0);
    let base = impact_map(b, &q, &qd)?;
    let lambda = 1.7;
    let scaled = impact_map(b, &q, &(&qd * lambda))?;
    let linear = (scaled.impulse - base.impulse * lambda).amax() / base.impulse.amax();

    let (qu, qdu) = to_unpinned(&q, &qd, Vector2::zeros());
    let d = b.unpinned_dynamics(&qu, &qdu)?.d;
    let ke = |v: &DVector<f64>| 0.5 * v.dot(&(&d * v));
    let (before, after) = (ke(&qdu), ke(&base.qdot_plus));

    ensure!(restricted_err < 1e-8, "restricted vs full {restricted_err:e}");
    ensure!(linear < 1e-10, "linearity {linear:e}");
    ensure!(ratio_spread < 1e-10, "ratio spread {ratio_spread:e}");
    ensure!(after < before, "kinetic energy {before} -> {after}");
    Ok(format!(
        "restricted {restricted_err:.1e}, linearity {linear:.1e}, ratio spread {ratio_spread:.1e}, KE {before:.2} -> {after:.2} J"
    ))
}

/// Zero-velocity configuration whose net moment about the stance foot vanishes.
fn balanced(b: &Biped, q_b: [f64; 2], thrust: f64) -> DVector<f64> {
    let moment = |qn: f64| {
        let q = DVector::from_vec(vec![q_b[0], q_b[1], qn]);
        b.gravity_vector(&q)[2] - b.thrust_map(&q)[2] * thrust
    };
    let (mut lo, mut hi) = (-0.6, 0.6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if moment(mid) * moment(lo) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DVector::from_vec(vec![q_b[0], q_b[1], 0.5 * (lo + hi)])
}

fn swing_force_affinity(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let model = SwingForceModel::new(zd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut recon = 0.0f64;
    for _ in 0..20 {
        let alpha = rng.random_range(zd.alpha_i()..zd.alpha_f());
        let zeta_star = rng.random_range(0.6..1.6) * f.zeta0;
        let thrust = rng.random_range(-50.0..50.0);
        let r = model.restricted(alpha, zeta_star, thrust)?;
        let zeta = zd.zeta_at(alpha, zd.impact_scale().powi(2) * zeta_star, &physical(zd, thrust));
        let direct = model.at(alpha, zeta, thrust)?.f_r;
        let rebuilt = r.lambda2 * thrust + r.lambda1 * zeta_star + r.lambda0;
        recon = recon.max((direct - rebuilt).amax());
    }

    let b = &f.biped;
    let weight = b.total_mass() * b.params().gravity;
    let (mut stand, mut unload) = (0.0f64, 0.0f64);
    let mut ground = Vec::new();
    for thrust in [0.0, 50.0, 100.0] {
        let q = balanced(b, [0.3, -0.2], thrust);
        let terms = b.pinned_dynamics(&q, &DVector::zeros(3))?;
        let u = (terms.g.rows(0, 2) - terms.b_f.rows(0, 2) * thrust).into_owned();
        let (qu, qud) = to_unpinned(&q, &DVector::zeros(3), Vector2::zeros());
        let force = swing_force(b, &qu, &qud, &u, thrust)?;
        stand = stand.max((force.f_r[1] - weight).abs()).max(force.f_r[0].abs());
        ground.push((thrust, force.f_1[1]));
    }
    for &(thrust, fv) in &ground {
        unload = unload.max((fv - (ground[0].1 - thrust)).abs());
    }
    ensure!(recon < 1e-9, "affine reconstruction {recon:e}");
    ensure!(stand < 1e-9, "static stand F_r vs m g {stand:e}");
    ensure!(unload < 1e-9, "unloading {unload:e}");
    Ok(format!("reconstruction {recon:.1e} N, stand {stand:.1e} N, unloading {unload:.1e} N"))
}

fn surrogate_constraints(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let fit = fit_force_polynomials(zd, &FitOptions::default())?;
    ensure!(fit.max_fit_residual < 0.1, "fit residual {}", fit.max_fit_residual);

    let weight = f.biped.total_mass() * f.biped.params().gravity;
    let mut agree = 0;
    let mut verdicts = [0usize; 2];
    let mut total = 0;
    let bp = vec![zd.alpha_i(), -0.1, 0.1, zd.alpha_f()];
    for (i, level) in [-1.0, -0.3, 0.0, 0.3, 1.4].iter().enumerate() {
        for (j, mu) in [0.05, 0.11, 0.3, 0.7, 1.0].iter().enumerate() {
            let values = match (i + j) % 3 {
                0 => vec![level * weight; 3],
                1 => vec![level * weight, 0.0, 0.0],
                _ => vec![0.0, 0.0, level * weight],
            };
            let s = ThrusterSchedule {
                breakpoints: bp.clone(),
                values,
                channel: ThrustChannel::Physical,
            };
            let zeta_star = match zd.fixed_point(&s) {
                Ok(fp) => fp.zeta_star,
                Err(_) => f.zeta0,
            };
            total += 1;
            let surrogate = check_constraints(zd, &s, zeta_star, &fit, *mu)?;
            let exact = check_constraints_exact(zd, &s, zeta_star, *mu, 601)?;
            verdicts[exact.feasible as usize] += 1;
            if surrogate.feasible == exact.feasible {
                agree += 1;
            }
        }
    }
    ensure!(agree == total, "verdicts agree on {agree}/{total}");
    ensure!(verdicts[0] > 0 && verdicts[1] > 0, "scenarios do not span both verdicts: {verdicts:?}");

    let mut achieved = 0;
    let mut reported = Vec::new();
    let requests: [(f64, &[f64], ThrustChannel, f64); 4] = [
        (0.05 * f.zeta0, &bp, ThrustChannel::Physical, 0.7),
        (-0.2 * f.zeta0, &bp, ThrustChannel::Physical, 0.7),
        (0.5 * f.zeta0, &[zd.alpha_i(), zd.alpha_f()], ThrustChannel::Generalized, 1e9),
        (-0.9 * f.zeta0, &bp, ThrustChannel::Generalized, 0.7),
    ];
    for (shift, breaks, channel, mu) in requests {
        match optimize_schedule(zd, shift, breaks, channel, &fit, mu) {
            Ok(opt) => {
                let fp = zd.fixed_point(&opt.schedule)?;
                let err = (fp.zeta_star - (f.zeta0 + shift)).abs();
                ensure!(err < 1e-9, "shift {shift} missed by {err:e}");
                achieved += 1;
            }
            Err(HzdError::OptimizationInfeasible { constraint }) => {
                ensure!(!constraint.is_empty(), "infeasible without a named constraint");
                reported.push(constraint.split(" at").next().unwrap_or_default().to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    ensure!(achieved > 0 && !reported.is_empty());
    Ok(format!(
        "fit residual {:.3} N; verdicts agree {agree}/{total} ({} feasible); {achieved} shifts met, binding: {}",
        fit.max_fit_residual,
        verdicts[1],
        reported.join(", ")
    ))
}

fn contraction(f: &Fixture) -> Result<String> {
    let zd = &f.zd;
    let delta2 = zd.impact_scale().powi(2);
    ensure!(delta2 < 1.0, "delta^2 = {delta2}");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_ratio = 0.0f64;
    for _ in 0..10 {
        let mut zeta = rng.random_range(0.5..2.0) * f.zeta0;
        let initial = (zeta - f.zeta0).abs();
        let mut err = initial;
        for _ in 0..30 {
            zeta = zd.restricted_poincare(zeta, &zero(zd))?;
            let next = (zeta - f.zeta0).abs();
            if err > 1e-6 * f.zeta0 {
                worst_ratio = worst_ratio.max((next / err - delta2).abs());
            }
            err = next;
        }
        ensure!(err <= 1.001 * initial * delta2.powi(30), "no geometric convergence (error {err:e})");
    }
    ensure!(worst_ratio < 1e-6, "step ratio differs from delta^2 by {worst_ratio:e}");

    let lc = f
        .sim
        .find_limit_cycle(&ThrustSource::none(), &f.sim.state_from_zeta(zd, f.zeta0), 50)?;
    let mut x = lc.start.clone();
    x.qdot *= 1.01;
    let mut dist = vec![section_distance(&f.sim, &x, &lc.start)];
    for step in f.sim.simulate_gait(&x, &ThrustSource::none(), 5)? {
        let step = step.require_impact()?;
        dist.push(section_distance(&f.sim, &step.next, &lc.start));
    }
    ensure!(dist.len() == 6, "walking stopped");
    ensure!(dist.windows(2).all(|w| w[1] < w[0]), "full-order distances {dist:?}");
    Ok(format!(
        "restricted ratio = delta^2 = {delta2:.4} (within {worst_ratio:.1e}); full-order distance {:.2e} -> {:.2e}",
        dist[0], dist[5]
    ))
}

type Check = fn(&Fixture) -> Result<String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("Lagrangian correctness", lagrangian),
        ("zero-dynamics fidelity", zero_dynamics_fidelity),
        ("closed form vs ODE", closed_form_vs_ode),
        ("fixed-point affinity", fixed_point_affinity),
        ("constant-thrust sweep", thrust_sweep),
        ("shape without shift", shape_family),
        ("slow thruster transients", slow_thruster),
        ("impact force properties", impact_properties),
        ("swing-force affinity", swing_force_affinity),
        ("surrogates and constraints", surrogate_constraints),
        ("contraction", contraction),
    ];
    let fixture = match Fixture::new() {
        Ok(f) => f,
        Err(e) => {
            println!("FAIL fixture: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = check(&fixture);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {e} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
