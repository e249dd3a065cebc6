//! Reshapes the limit cycle with a piecewise-constant schedule that leaves
//! `zeta*` where it is, then requests a shift with the minimum-norm schedule.
//!
//! ```text
//! cargo run --release --example shape_limit_cycle -- [shift]
//! ```

use thrust_hzd::gait::GaitParams;
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let shift: f64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(40.0);
    let biped = Biped::new(ModelParams::default())?;
    let zd = ZeroDynamics::build(&biped, &GaitParams::nominal())?;
    let zero = ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f());
    let zeta0 = zd.fixed_point(&zero)?.zeta_star;
    let delta2 = zd.impact_scale().powi(2);
    let nominal = zd.zeta_profile(delta2 * zeta0, &zero, 201);

    let breakpoints = zd.balanced_breakpoints(0.25)?;
    println!("balanced breakpoints {breakpoints:.5?}");
    println!("{:>6} {:>12} {:>12} {:>14}", "k", "zeta*", "shift", "max |dzeta|");
    for k in [0.0, 10.0, 25.0, 50.0] {
        let schedule = ThrusterSchedule {
            breakpoints: breakpoints.clone(),
            values: vec![-k, 0.0, k],
            channel: ThrustChannel::Generalized,
        };
        let fp = zd.fixed_point(&schedule)?;
        let profile = zd.zeta_profile(delta2 * fp.zeta_star, &schedule, 201);
        let deviation = profile
            .zeta
            .iter()
            .zip(&nominal.zeta)
            .map(|(z, z0)| (z - z0).abs())
            .fold(0.0, f64::max);
        println!("{k:>6.1} {:>12.4} {:>12.2e} {deviation:>14.4}", fp.zeta_star, fp.shift);
    }

    let schedule = zd.shape_schedule(shift, &breakpoints, ThrustChannel::Generalized)?;
    let fp = zd.fixed_point(&schedule)?;
    println!("requested shift {shift}: values {:.4?}, achieved {:.9}", schedule.values, fp.shift);
    Ok(())
}
