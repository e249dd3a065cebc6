//! Steps the thrust set point with the second-order thruster and follows the
//! pre-impact `zeta` toward the new fixed point.
//!
//! ```text
//! cargo run --release --example slow_thruster -- [slow|fast] [set_point] [steps]
//! ```

use thrust_hzd::control::{ClosedLoop, Gains};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::hybrid::{Simulator, ThrustSource, ThrusterLinModel, ThrusterPreset};
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = match args.next().as_deref() {
        None | Some("slow") => ThrusterPreset::Slow,
        Some("fast") => ThrusterPreset::Fast,
        Some(other) => anyhow::bail!("unknown preset {other:?}"),
    };
    let set_point: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(-50.0);
    let steps: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10);

    let biped = Biped::new(ModelParams::default())?;
    let gait = GaitParams::nominal();
    let zd = ZeroDynamics::build(&biped, &gait)?;
    let sim = Simulator::new(ClosedLoop::new(biped.clone(), gait, Gains::default())?);

    let zero = ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f());
    let start = sim.state_from_zeta(&zd, zd.fixed_point(&zero)?.zeta_star);
    let nominal = sim.find_limit_cycle(&ThrustSource::none(), &start, 50)?;
    let target = zd
        .fixed_point(&ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), set_point, ThrustChannel::Physical))?
        .zeta_star;

    let model = ThrusterLinModel::preset(preset, nominal.period, set_point);
    println!(
        "{preset:?} thruster: omega {:.3} rad/s, damping {}, target zeta* {target:.3}",
        model.natural_frequency, model.damping_ratio
    );
    let mut x = nominal.start.clone();
    x.thrust_state = Some((0.0, 0.0));
    let run = sim.simulate_gait(&x, &ThrustSource::SecondOrder(model), steps)?;
    println!("{:>5} {:>10} {:>10} {:>10}", "step", "thrust", "zeta-", "distance");
    for (k, step) in run.into_iter().enumerate() {
        let step = step.require_impact()?;
        let imp = step.impact.as_ref().expect("impact termination carries a record");
        let sigma = biped.angular_momentum(&imp.q_minus, &imp.qdot_minus);
        let zeta = 0.5 * sigma * sigma;
        let thrust = step.samples.last().map_or(f64::NAN, |s| s.thrust);
        println!("{k:>5} {thrust:>10.3} {zeta:>10.3} {:>10.3}", (zeta - target).abs());
    }
    Ok(())
}
