//! Minimum-effort schedules that shift `zeta*` subject to the swing-force
//! constraints, reporting which constraint stops the infeasible requests.
//!
//! ```text
//! cargo run --release --example optimize_schedule -- [shift ...]
//! ```

use thrust_hzd::forces::{fit_force_polynomials, optimize_schedule, FitOptions};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let mut shifts: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    if shifts.is_empty() {
        shifts = vec![20.0, 80.0, -100.0, -400.0];
    }
    let biped = Biped::new(ModelParams::default())?;
    let mu = biped.params().friction_mu;
    let zd = ZeroDynamics::build(&biped, &GaitParams::nominal())?;
    let fit = fit_force_polynomials(&zd, &FitOptions::default())?;
    let breakpoints = vec![zd.alpha_i(), -0.1, 0.1, zd.alpha_f()];

    for shift in shifts {
        match optimize_schedule(&zd, shift, &breakpoints, ThrustChannel::Physical, &fit, mu) {
            Ok(opt) => println!(
                "shift {shift:>8.1}: thrust {:.3?} N, achieved {:.6}, tightest {} (active: {})",
                opt.schedule.values,
                opt.fixed_point.shift,
                opt.report.binding.label(),
                if opt.active.is_empty() { "none".to_string() } else { opt.active.join(", ") },
            ),
            Err(e) => println!("shift {shift:>8.1}: {e}"),
        }
    }
    Ok(())
}
