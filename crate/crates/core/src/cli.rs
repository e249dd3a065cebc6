//! Commands behind the `hzd` binary.
//!
//! Every command reads a [`RunConfig`], writes its artifacts under the output
//! directory and returns a short JSON summary for stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::control::{ClosedLoop, Gains};
use crate::error::{HzdError, Result};
use crate::forces::{
    check_constraints, fit_force_polynomials, impact_feasibility, optimize_schedule, ConstraintReport, FitOptions,
    SwingForceFit,
};
use crate::gait::{design_nominal_gait, GaitParams, GaitSpec};
use crate::hybrid::{Sample, Simulator, ThrustSource, ThrusterLinModel, ThrusterPreset};
use crate::model::{Biped, ModelParams};
use crate::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

/// Environment variable capping the worker threads of `sweep`.
pub const THREADS_ENV: &str = "HZD_THREADS";

/// Header of the sweep CSV.
pub const SWEEP_COLUMNS: [&str; 5] = ["sweep_value", "alpha", "alpha_dot", "zeta", "sigma_n"];

/// Where the gait comes from: `"nominal"` (shipped fixture), `"design"`,
/// a path to a gait JSON file, or the gait itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GaitSource {
    Named(String),
    Inline(GaitParams),
}

impl Default for GaitSource {
    fn default() -> Self {
        GaitSource::Named("nominal".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub steps: usize,
    /// Relative scaling applied to the starting velocity.
    pub perturbation: f64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            steps: 5,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SweepThruster {
    /// Constant thrust; each value yields its limit cycle.
    #[default]
    Constant,
    /// Second-order thruster stepped from zero to each value (slow preset).
    Slow,
    /// Second-order thruster stepped from zero to each value (fast preset).
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Physical thrust values (N).
    pub values: Vec<f64>,
    pub thruster: SweepThruster,
    /// Steps simulated per value for the second-order thrusters.
    pub steps: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            values: vec![0.0, -10.0, -20.0, -30.0, -40.0, -50.0],
            thruster: SweepThruster::Constant,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeSpec {
    /// Explicit breakpoints `[α_i, …, α_f]`; solved when absent.
    pub breakpoints: Option<Vec<f64>>,
    /// Share of the whole-step weight carried by each end segment of solved breakpoints.
    pub weight_fraction: f64,
    /// Family `T_j = k (j − n/2)` over segments `j = 1 … n−1`.
    pub k: Vec<f64>,
    /// Requested shift of `ζ*`; runs the constrained optimizer instead of the k family.
    pub shift: Option<f64>,
    pub channel: ThrustChannel,
    /// Also simulate each schedule with the full-order model.
    pub full_order: bool,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self {
            breakpoints: None,
            weight_fraction: 0.25,
            k: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            shift: None,
            channel: ThrustChannel::Generalized,
            full_order: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSpec {
    /// Schedule to check; zero thrust when absent.
    pub schedule: Option<ThrusterSchedule>,
    /// Evaluate at this `ζ*` instead of the schedule's fixed point.
    pub zeta_star: Option<f64>,
    /// Previously written `force_fit.json`; fitted afresh when absent.
    pub fit_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub gait: GaitSource,
    pub design: GaitSpec,
    pub gains: Gains,
    /// Thrust source for `simulate`.
    pub thrust: ThrustSource,
    pub simulate: SimulateSpec,
    pub sweep: SweepSpec,
    pub shape: ShapeSpec,
    pub fit: FitOptions,
    pub check: CheckSpec,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::default(),
            gait: GaitSource::default(),
            design: GaitSpec::default(),
            gains: Gains::default(),
            thrust: ThrustSource::none(),
            simulate: SimulateSpec::default(),
            sweep: SweepSpec::default(),
            shape: ShapeSpec::default(),
            fit: FitOptions::default(),
            check: CheckSpec::default(),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; the defaults apply without a path.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| HzdError::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| HzdError::Config(format!("{}: {e}", p.display())))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| HzdError::Config(e.to_string()))?;
        let finite = |name: &str, vals: &[f64]| {
            if vals.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(HzdError::Config(format!("{name} must be finite")))
            }
        };
        finite("sweep values", &self.sweep.values)?;
        finite("shape k values", &self.shape.k)?;
        finite("shape shift", self.shape.shift.as_slice())?;
        if let GaitSource::Named(name) = &self.gait {
            if name != "nominal" && name != "design" && !Path::new(name).is_file() {
                return Err(HzdError::Config(format!("gait file {name} does not exist")));
            }
        }
        if let Some(p) = &self.check.fit_file {
            if !p.is_file() {
                return Err(HzdError::Config(format!("fit file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn resolve_gait(&self, biped: &Biped) -> Result<GaitParams> {
        let gait = match &self.gait {
            GaitSource::Inline(g) => g.clone(),
            GaitSource::Named(n) if n == "nominal" => GaitParams::nominal(),
            GaitSource::Named(n) if n == "design" => design_nominal_gait(biped, &self.design, self.seed)?.0,
            GaitSource::Named(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| HzdError::Config(format!("{path}: {e}")))?
            }
        };
        if gait.dof() != biped.dof() {
            return Err(HzdError::Config(format!(
                "gait has {} coordinates, model has {}",
                gait.dof(),
                biped.dof()
            )));
        }
        gait.validate()?;
        Ok(gait)
    }
}

/// Model, gait and zero dynamics shared by the commands.
pub struct Setup {
    pub biped: Biped,
    pub zd: ZeroDynamics,
    pub sim: Simulator,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let biped = Biped::new(cfg.model.clone())?;
        let gait = cfg.resolve_gait(&biped)?;
        let zd = ZeroDynamics::build(&biped, &gait)?;
        let sim = Simulator::new(ClosedLoop::new(biped.clone(), gait, cfg.gains.clone())?);
        Ok(Self { biped, zd, sim })
    }

    fn zero_schedule(&self) -> ThrusterSchedule {
        ThrusterSchedule::zero(self.zd.alpha_i(), self.zd.alpha_f())
    }

    fn nominal_zeta(&self) -> Result<f64> {
        Ok(self.zd.fixed_point(&self.zero_schedule())?.zeta_star)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    w.write_record(header).map_err(std::io::Error::from)?;
    Ok(w)
}

fn write_row(w: &mut csv::Writer<fs::File>, row: &[f64]) -> Result<()> {
    w.write_record(row.iter().map(|v| v.to_string()))
        .map_err(std::io::Error::from)?;
    Ok(())
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn failure(e: &HzdError) -> Value {
    json!({ "error": e.kind(), "message": e.to_string() })
}

/// Designs the nominal gait; writes `gaits/nominal.json` and `design_report.json`.
pub fn cmd_design_gait(cfg: &RunConfig) -> Result<Value> {
    let biped = Biped::new(cfg.model.clone())?;
    let (gait, report) = design_nominal_gait(&biped, &cfg.design, cfg.seed)?;
    let gait_path = cfg.out.join("gaits").join("nominal.json");
    write_json(&gait_path, &gait)?;
    write_json(&cfg.out.join("design_report.json"), &report)?;
    Ok(json!({
        "gait": gait_path,
        "zeta_star": report.zeta_star,
        "impact_scale": report.impact_scale,
        "step_period": report.step_period,
        "impact_feasible": report.impact.feasible,
        "impact_friction_ratio": report.impact.friction_ratio,
    }))
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    for prefix in ["q", "qdot", "u"] {
        let count = if prefix == "u" { n - 1 } else { n };
        h.extend((0..count).map(|i| format!("{prefix}{i}")));
    }
    h.push("thrust".into());
    for prefix in ["y", "ydot"] {
        h.extend((0..n - 1).map(|i| format!("{prefix}{i}")));
    }
    h.extend(["alpha", "alpha_dot", "sigma_n", "zeta"].map(String::from));
    h
}

fn trajectory_row(step: usize, s: &Sample) -> Vec<f64> {
    let mut row = vec![step as f64, s.t];
    row.extend(s.q.iter().chain(s.qdot.iter()).chain(s.u.iter()));
    row.push(s.thrust);
    row.extend(s.y.iter().chain(s.ydot.iter()));
    row.extend([s.alpha, s.alpha_dot, s.sigma, s.zeta]);
    row
}

/// Simulates `simulate.steps` steps from the unforced fixed point.
///
/// Writes `trajectory.csv` (columns `step, t, q*, qdot*, u*, thrust, y*, ydot*,
/// alpha, alpha_dot, sigma_n, zeta`) and `impacts.jsonl` (one impact per line).
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Value> {
    let setup = Setup::new(cfg)?;
    let n = setup.biped.dof();
    let mut x0 = setup.sim.state_from_zeta(&setup.zd, setup.nominal_zeta()?);
    x0.qdot *= 1.0 + cfg.simulate.perturbation;
    if matches!(cfg.thrust, ThrustSource::SecondOrder(_)) {
        x0.thrust_state = Some((0.0, 0.0));
    }
    let steps = setup.sim.simulate_gait(&x0, &cfg.thrust, cfg.simulate.steps)?;

    let header = trajectory_header(n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = csv_writer(&cfg.out.join("trajectory.csv"), &header)?;
    let impacts_path = cfg.out.join("impacts.jsonl");
    let mut impacts = fs::File::create(&impacts_path)?;
    let mut zeta_minus = Vec::new();
    for (k, step) in steps.iter().enumerate() {
        for s in &step.samples {
            write_row(&mut w, &trajectory_row(k, s))?;
        }
        if let Some(imp) = &step.impact {
            let sigma = setup.biped.angular_momentum(&imp.q_minus, &imp.qdot_minus);
            zeta_minus.push(0.5 * sigma * sigma);
            let line = json!({
                "step": k,
                "t": step.next.t,
                "q_minus": imp.q_minus.as_slice(),
                "qdot_minus": imp.qdot_minus.as_slice(),
                "q_plus": imp.q_plus.as_slice(),
                "qdot_plus": imp.qdot_plus.as_slice(),
                "impulse": [imp.impulse[0], imp.impulse[1]],
                "zeta_minus": 0.5 * sigma * sigma,
            });
            writeln!(impacts, "{line}")?;
        }
    }
    finish(w)?;
    let last = steps.last().map(|s| s.termination);
    if let Some(step) = steps.last() {
        step.clone().require_impact()?;
    }
    Ok(json!({
        "steps": steps.len(),
        "termination": last,
        "zeta_minus": zeta_minus,
    }))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| HzdError::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HzdError::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Serialize)]
struct SweepEntry {
    value: f64,
    ok: bool,
    /// Pre-impact `ζ` of the limit cycle, or of the last step for a thruster transient.
    zeta_minus: Option<f64>,
    period: Option<f64>,
    /// Area enclosed by the last step in the `(α, α̇)` plane, closed by the impact jump.
    phase_area: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Value>,
}

/// Samples, `ζ⁻`, period and phase area of one sweep value.
type SweepRun = (Vec<Sample>, f64, f64, f64);

fn phase_area(samples: &[Sample]) -> f64 {
    let n = samples.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (&samples[i], &samples[(i + 1) % n]);
            a.alpha * b.alpha_dot - b.alpha * a.alpha_dot
        })
        .sum();
    0.5 * twice.abs()
}

/// Limit cycles (constant thrust) or thruster transients over the sweep values.
///
/// Writes `sweep.csv` with columns `sweep_value, alpha, alpha_dot, zeta, sigma_n`
/// and `sweep_report.json`; failed values are recorded and skipped.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Value> {
    let setup = Setup::new(cfg)?;
    let zeta0 = if cfg.sweep.values.is_empty() { 0.0 } else { setup.nominal_zeta()? };
    let nominal = match (cfg.sweep.thruster, cfg.sweep.values.is_empty()) {
        (SweepThruster::Constant, _) | (_, true) => None,
        _ => Some(setup.sim.find_limit_cycle(
            &ThrustSource::none(),
            &setup.sim.state_from_zeta(&setup.zd, zeta0),
            50,
        )?),
    };
    let run = |value: f64| -> Result<SweepRun> {
        match (&nominal, cfg.sweep.thruster) {
            (Some(lc), thruster) => {
                let preset = if thruster == SweepThruster::Slow {
                    ThrusterPreset::Slow
                } else {
                    ThrusterPreset::Fast
                };
                let model = ThrusterLinModel::preset(preset, lc.period, value);
                let mut x = lc.start.clone();
                x.thrust_state = Some((0.0, 0.0));
                let steps = setup
                    .sim
                    .simulate_gait(&x, &ThrustSource::SecondOrder(model), cfg.sweep.steps)?;
                let last = steps.last().cloned().ok_or_else(|| HzdError::Config("sweep.steps is zero".into()))?;
                let t_end = last.next.t;
                let last = last.require_impact()?;
                let imp = last.impact.as_ref().expect("impact termination carries a record");
                let sigma = setup.biped.angular_momentum(&imp.q_minus, &imp.qdot_minus);
                let area = phase_area(&last.samples);
                let samples = steps.into_iter().flat_map(|s| s.samples).collect();
                Ok((samples, 0.5 * sigma * sigma, t_end / cfg.sweep.steps as f64, area))
            }
            (None, _) => {
                let schedule = ThrusterSchedule::constant(
                    setup.zd.alpha_i(),
                    setup.zd.alpha_f(),
                    value,
                    ThrustChannel::Physical,
                );
                let guess = setup.zd.fixed_point(&schedule).map(|fp| fp.zeta_star).unwrap_or(zeta0);
                let lc = setup.sim.find_limit_cycle(
                    &ThrustSource::Constant { thrust: value },
                    &setup.sim.state_from_zeta(&setup.zd, guess),
                    50,
                )?;
                let area = phase_area(&lc.orbit);
                Ok((lc.orbit, lc.zeta_star, lc.period, area))
            }
        }
    };
    let results: Vec<Result<SweepRun>> =
        thread_pool()?.install(|| cfg.sweep.values.par_iter().map(|&v| run(v)).collect());

    let mut w = csv_writer(&cfg.out.join("sweep.csv"), &SWEEP_COLUMNS)?;
    let mut entries = Vec::new();
    for (&value, res) in cfg.sweep.values.iter().zip(&results) {
        match res {
            Ok((samples, zeta_minus, period, area)) => {
                for s in samples {
                    write_row(&mut w, &[value, s.alpha, s.alpha_dot, s.zeta, s.sigma])?;
                }
                entries.push(SweepEntry {
                    value,
                    ok: true,
                    zeta_minus: Some(*zeta_minus),
                    period: Some(*period),
                    phase_area: Some(*area),
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("sweep value {value}: {e}");
                entries.push(SweepEntry {
                    value,
                    ok: false,
                    zeta_minus: None,
                    period: None,
                    phase_area: None,
                    error: Some(failure(e)),
                });
            }
        }
    }
    finish(w)?;
    write_json(&cfg.out.join("sweep_report.json"), &entries)?;
    Ok(json!({
        "values": cfg.sweep.values.len(),
        "failed": entries.iter().filter(|e| !e.ok).count(),
    }))
}

fn fit_for(cfg: &RunConfig, setup: &Setup) -> Result<SwingForceFit> {
    match &cfg.check.fit_file {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| HzdError::Config(format!("{}: {e}", p.display())))
        }
        None => fit_force_polynomials(&setup.zd, &cfg.fit),
    }
}

#[derive(Debug, Clone, Serialize)]
struct ShapeEntry {
    k: Option<f64>,
    schedule: ThrusterSchedule,
    zeta_star: f64,
    shift: f64,
    max_deviation: f64,
    constraints: Option<ConstraintReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    active: Option<Vec<String>>,
    full_order_zeta_minus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    full_order_error: Option<Value>,
}

/// Reshapes (k family) or shifts (optimizer) the limit cycle with schedules.
///
/// Writes `shape_restricted.csv` (`k, alpha, zeta, zeta_nominal`),
/// `shape_full.csv` (`k, alpha, alpha_dot, zeta, sigma_n`) and `schedules.json`.
/// In shift mode the `k` column holds the requested shift.
pub fn cmd_shape(cfg: &RunConfig) -> Result<Value> {
    let setup = Setup::new(cfg)?;
    let zd = &setup.zd;
    let spec = &cfg.shape;
    let mu = setup.biped.params().friction_mu;
    let breakpoints = match &spec.breakpoints {
        Some(b) => b.clone(),
        None => zd.balanced_breakpoints(spec.weight_fraction)?,
    };
    let fit = fit_for(cfg, &setup)?;
    let zero = setup.zero_schedule();
    let zeta0 = zd.fixed_point(&zero)?.zeta_star;
    let samples = 401;
    let nominal = zd.zeta_profile(zd.impact_scale().powi(2) * zeta0, &zero, samples);

    let mut jobs: Vec<(f64, ThrusterSchedule, Option<Vec<String>>)> = Vec::new();
    if let Some(shift) = spec.shift {
        let opt = optimize_schedule(zd, shift, &breakpoints, spec.channel, &fit, mu)?;
        jobs.push((shift, opt.schedule, Some(opt.active)));
    } else {
        let n = breakpoints.len();
        for &k in &spec.k {
            let values = (1..n).map(|j| k * (j as f64 - n as f64 / 2.0)).collect();
            let schedule = ThrusterSchedule {
                breakpoints: breakpoints.clone(),
                values,
                channel: spec.channel,
            };
            jobs.push((k, schedule, None));
        }
    }

    let mut restricted = csv_writer(&cfg.out.join("shape_restricted.csv"), &["k", "alpha", "zeta", "zeta_nominal"])?;
    let mut full = csv_writer(&cfg.out.join("shape_full.csv"), &SWEEP_COLUMNS.map(|c| if c == "sweep_value" { "k" } else { c }))?;
    let mut entries = Vec::new();
    for (label, schedule, active) in jobs {
        let fp = zd.fixed_point(&schedule)?;
        let profile = zd.zeta_profile(fp.slope * fp.zeta_star, &schedule, samples);
        let mut max_deviation = 0.0f64;
        for ((a, z), z0) in profile.alpha.iter().zip(&profile.zeta).zip(&nominal.zeta) {
            max_deviation = max_deviation.max((z - z0).abs());
            write_row(&mut restricted, &[label, *a, *z, *z0])?;
        }
        let constraints = match check_constraints(zd, &schedule, fp.zeta_star, &fit, mu) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("constraints for {label}: {e}");
                None
            }
        };
        let (mut full_zeta, mut full_error) = (None, None);
        if spec.full_order {
            let x0 = setup.sim.state_from_zeta(zd, fp.zeta_star);
            let source = ThrustSource::Schedule(schedule.clone());
            match setup.sim.simulate_step(&x0, &source).and_then(|r| r.require_impact()) {
                Ok(step) => {
                    for s in &step.samples {
                        write_row(&mut full, &[label, s.alpha, s.alpha_dot, s.zeta, s.sigma])?;
                    }
                    let imp = step.impact.as_ref().expect("impact termination carries a record");
                    let sigma = setup.biped.angular_momentum(&imp.q_minus, &imp.qdot_minus);
                    full_zeta = Some(0.5 * sigma * sigma);
                }
                Err(e) => full_error = Some(failure(&e)),
            }
        }
        entries.push(ShapeEntry {
            k: spec.shift.is_none().then_some(label),
            schedule,
            zeta_star: fp.zeta_star,
            shift: fp.zeta_star - zeta0,
            max_deviation,
            constraints,
            active,
            full_order_zeta_minus: full_zeta,
            full_order_error: full_error,
        });
    }
    finish(restricted)?;
    finish(full)?;
    write_json(
        &cfg.out.join("schedules.json"),
        &json!({ "zeta_star_nominal": zeta0, "breakpoints": breakpoints, "runs": entries }),
    )?;
    Ok(json!({
        "zeta_star_nominal": zeta0,
        "breakpoints": breakpoints,
        "shifts": entries.iter().map(|e| e.shift).collect::<Vec<_>>(),
        "max_deviation": entries.iter().map(|e| e.max_deviation).collect::<Vec<_>>(),
    }))
}

/// Fits the swing-force surrogates; writes `force_fit.json`.
pub fn cmd_fit_forces(cfg: &RunConfig) -> Result<Value> {
    let setup = Setup::new(cfg)?;
    let fit = fit_force_polynomials(&setup.zd, &cfg.fit)?;
    let path = cfg.out.join("force_fit.json");
    write_json(&path, &fit)?;
    Ok(json!({
        "fit": path,
        "degree": fit.degree,
        "max_fit_residual": fit.max_fit_residual,
    }))
}

/// Checks impact and swing-force feasibility of a schedule; writes
/// `constraint_report.json`. An infeasible verdict is a domain failure.
pub fn cmd_check(cfg: &RunConfig) -> Result<Value> {
    let setup = Setup::new(cfg)?;
    let zd = &setup.zd;
    let mu = setup.biped.params().friction_mu;
    let schedule = cfg.check.schedule.clone().unwrap_or_else(|| setup.zero_schedule());
    let zeta_star = match cfg.check.zeta_star {
        Some(z) => z,
        None => zd.fixed_point(&schedule)?.zeta_star,
    };
    let fit = fit_for(cfg, &setup)?;
    let swing = check_constraints(zd, &schedule, zeta_star, &fit, mu)?;
    let impact = impact_feasibility(zd, mu)?;
    let feasible = swing.feasible && impact.feasible;
    let report = json!({
        "feasible": feasible,
        "zeta_star": zeta_star,
        "schedule": schedule,
        "swing": swing,
        "impact": impact,
        "max_fit_residual": fit.max_fit_residual,
    });
    write_json(&cfg.out.join("constraint_report.json"), &report)?;
    if !feasible {
        let constraint = if impact.feasible {
            format!("{} at alpha = {:.6}", swing.binding.label(), swing.worst_alpha)
        } else {
            "impact friction".to_string()
        };
        return Err(HzdError::ConstraintViolation { constraint });
    }
    Ok(report)
}
