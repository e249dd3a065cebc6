//! Full-order limit cycles under constant thrust, against the restricted prediction.
//!
//! ```text
//! cargo run --release --example thrust_sweep -- [min_thrust] [max_thrust] [count]
//! ```

use thrust_hzd::control::{ClosedLoop, Gains};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::hybrid::{Simulator, ThrustSource};
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let lo = args.first().copied().unwrap_or(-50.0);
    let hi = args.get(1).copied().unwrap_or(0.0);
    let count = args.get(2).map_or(6, |&c| c as usize).max(2);

    let biped = Biped::new(ModelParams::default())?;
    let gait = GaitParams::nominal();
    let zd = ZeroDynamics::build(&biped, &gait)?;
    let sim = Simulator::new(ClosedLoop::new(biped.clone(), gait, Gains::default())?);
    let step_length = {
        let q = zd.gait().manifold_configuration(zd.alpha_f());
        biped.swing_foot_offset(&q).x
    };

    println!("{:>9} {:>12} {:>12} {:>10} {:>10}", "F (N)", "zeta* (ZD)", "zeta* (full)", "period", "speed");
    for k in 0..count {
        let f = lo + (hi - lo) * k as f64 / (count - 1) as f64;
        let schedule = ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), f, ThrustChannel::Physical);
        let predicted = zd.fixed_point(&schedule)?.zeta_star;
        let x0 = sim.state_from_zeta(&zd, predicted);
        match sim.find_limit_cycle(&ThrustSource::Constant { thrust: f }, &x0, 50) {
            Ok(lc) => println!(
                "{f:>9.2} {predicted:>12.4} {:>12.4} {:>10.4} {:>10.4}",
                lc.zeta_star,
                lc.period,
                step_length / lc.period
            ),
            Err(e) => println!("{f:>9.2} {predicted:>12.4} {e}"),
        }
    }
    Ok(())
}
