//! Builds the zero dynamics of the nominal gait and compares the closed-form
//! return map with direct integration for a constant thrust.
//!
//! ```text
//! cargo run --release --example zero_dynamics -- [thrust_newtons]
//! ```

use thrust_hzd::gait::GaitParams;
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let thrust: f64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(-25.0);
    let biped = Biped::new(ModelParams::default())?;
    let zd = ZeroDynamics::build(&biped, &GaitParams::nominal())?;
    let (ai, af) = (zd.alpha_i(), zd.alpha_f());

    println!("alpha range [{ai:.5}, {af:.5}], impact scale delta = {:.5}", zd.impact_scale());
    println!("unforced gain {:.4}, barrier {:.4}", zd.nominal_gain(), zd.barrier());
    println!("{:>10} {:>10} {:>10} {:>10}", "alpha", "kappa1", "kappa2", "b_N");
    for k in 0..=4 {
        let a = ai + (af - ai) * k as f64 / 4.0;
        println!("{a:>10.5} {:>10.5} {:>10.4} {:>10.5}", zd.kappa1(a), zd.kappa2(a), zd.b_n(a));
    }

    let zero = ThrusterSchedule::zero(ai, af);
    let schedule = ThrusterSchedule::constant(ai, af, thrust, ThrustChannel::Physical);
    let nominal = zd.fixed_point(&zero)?;
    let forced = zd.fixed_point(&schedule)?;
    println!("zeta* unforced {:.4}, with {thrust} N {:.4} (shift {:+.4})", nominal.zeta_star, forced.zeta_star, forced.shift);
    println!("return-map slope {:.6}, stable {}", forced.slope, forced.stable);

    let start = 1.2 * forced.zeta_star;
    let closed = zd.restricted_poincare(start, &schedule)?;
    let ode = zd.restricted_poincare_ode(start, &schedule)?;
    println!("from zeta- = {start:.4}: closed form {closed:.9}, integrated {ode:.9}");
    Ok(())
}
