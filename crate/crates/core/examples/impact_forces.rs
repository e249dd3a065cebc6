//! Impact impulse at the end of the nominal step: restricted formula,
//! full-order impact map, and kinetic energy lost.
//!
//! ```text
//! cargo run --release --example impact_forces
//! ```

use thrust_hzd::forces::{impact_feasibility, impact_force_restricted};
use thrust_hzd::gait::GaitParams;
use thrust_hzd::hybrid::impact_map;
use thrust_hzd::model::{Biped, ModelParams};
use thrust_hzd::zerodyn::{ThrusterSchedule, ZeroDynamics};

fn main() -> anyhow::Result<()> {
    let biped = Biped::new(ModelParams::default())?;
    let zd = ZeroDynamics::build(&biped, &GaitParams::nominal())?;
    let mu = biped.params().friction_mu;
    let zero = ThrusterSchedule::zero(zd.alpha_i(), zd.alpha_f());
    let zeta_star = zd.fixed_point(&zero)?.zeta_star;

    let verdict = impact_feasibility(&zd, mu)?;
    println!(
        "vertical impulse per unit momentum {:.5}, friction ratio {:.4} (mu = {mu}), feasible {}",
        verdict.vertical, verdict.friction_ratio, verdict.feasible
    );

    println!("{:>10} {:>12} {:>12} {:>12} {:>10} {:>10}", "zeta-", "F2h (ZD)", "F2v (ZD)", "F2v (full)", "KE-", "KE+");
    for scale in [0.5, 1.0, 1.5] {
        let zeta = scale * zeta_star;
        let sigma = (2.0 * zeta).sqrt();
        let restricted = impact_force_restricted(&zd, sigma)?;
        let (q, qdot) = zd.manifold_state(zd.alpha_f(), sigma);
        let full = impact_map(&biped, &q, &qdot)?;
        let (ke_minus, _) = biped.total_energy(&q, &qdot);
        let (q_plus, qdot_plus) = biped.relabel(&q, &full.qdot_plus.rows(0, biped.dof()).into_owned());
        let (ke_plus, _) = biped.total_energy(&q_plus, &qdot_plus);
        println!(
            "{zeta:>10.3} {:>12.4} {:>12.4} {:>12.4} {ke_minus:>10.3} {ke_plus:>10.3}",
            restricted.x, restricted.y, full.impulse.y
        );
    }
    Ok(())
}
