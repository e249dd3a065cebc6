//! Fits the swing-force surrogates and checks constant-thrust limit cycles
//! against the unilateral and friction constraints, surrogate and exact.
//!
//! ```text
//! cargo run --release --example swing_force_constraints -- [thrust ...]
//! ```

use thrust_hzd::forces::{check_constraints, check_constraints_exact, fit_force_polynomials, FitOptions, SwingForceModel};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrustChannel, ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let mut thrusts: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    if thrusts.is_empty() {
        thrusts = vec![-50.0, 0.0, 25.0, 50.0];
    }
    let biped = Biped::new(ModelParams::default())?;
    let mu = biped.params().friction_mu;
    let zd = ZeroDynamics::build(&biped, &GaitParams::nominal())?;
    let fit = fit_force_polynomials(&zd, &FitOptions::default())?;
    println!("degree {} surrogates, max fit residual {:.4} N", fit.degree, fit.max_fit_residual);

    let model = SwingForceModel::new(&zd)?;
    let mid = zd.gait().alpha_mid();
    let exact = model.local(mid)?;
    let approx = fit.local(mid);
    println!(
        "ground force at mid-step, zeta = 500, F = 0: exact {:.4?}, surrogate {:.4?}",
        exact.ground(500.0, 0.0).as_slice(),
        approx.ground(500.0, 0.0).as_slice()
    );

    println!("{:>8} {:>10} {:>10} {:>10} {:>15} {:>8}", "F (N)", "zeta*", "min F1v", "max ratio", "binding", "exact");
    for f in thrusts {
        let schedule = ThrusterSchedule::constant(zd.alpha_i(), zd.alpha_f(), f, ThrustChannel::Physical);
        let zeta_star = match zd.fixed_point(&schedule) {
            Ok(fp) => fp.zeta_star,
            Err(e) => {
                println!("{f:>8.1} {e}");
                continue;
            }
        };
        let surrogate = check_constraints(&zd, &schedule, zeta_star, &fit, mu)?;
        let exact = check_constraints_exact(&zd, &schedule, zeta_star, mu, 601)?;
        println!(
            "{f:>8.1} {zeta_star:>10.3} {:>10.3} {:>10.4} {:>15} {:>8}",
            surrogate.min_vertical_margin,
            surrogate.max_friction_ratio,
            surrogate.binding.label(),
            if exact.feasible { "ok" } else { "violated" },
        );
    }
    Ok(())
}
