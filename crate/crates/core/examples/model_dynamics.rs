//! Evaluates the pinned Lagrangian model along the nominal gait.
//!
//! ```text
//! cargo run --release --example model_dynamics
//! ```

use nalgebra::DVector;
use thrust_hzd::gait::GaitParams;
use thrust_hzd::model::{Biped, ModelParams};

fn main() -> anyhow::Result<()> {
    let biped = Biped::new(ModelParams::default())?;
    let gait = GaitParams::nominal();
    println!("total mass {:.3} kg, {} coordinates", biped.total_mass(), biped.dof());
    println!("{:>8} {:>10} {:>10} {:>10} {:>10} {:>10}", "s", "alpha", "min eig D", "G_N", "b_N", "PE (J)");
    for k in 0..=8 {
        let s = k as f64 / 8.0;
        let alpha = gait.alpha_at(s);
        let q = gait.manifold_configuration(alpha);
        let qdot = DVector::zeros(biped.dof());
        let terms = biped.pinned_dynamics(&q, &qdot)?;
        let min_eig = terms.d.clone().symmetric_eigen().eigenvalues.min();
        println!(
            "{s:>8.3} {alpha:>10.5} {min_eig:>10.4} {:>10.3} {:>10.4} {:>10.3}",
            terms.g[terms.dof() - 1],
            terms.b_n(),
            biped.potential_energy(&q),
        );
    }
    Ok(())
}
