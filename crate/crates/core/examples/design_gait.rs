//! Designs the nominal unforced gait and prints it with its design report.
//!
//! ```text
//! cargo run --release --example design_gait -- [step_length] [average_speed]
//! ```

use thrust_hzd::gait::{design_nominal_gait, GaitSpec};
use thrust_hzd::model::{Biped, ModelParams};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1).map(|a| a.parse::<f64>());
    let mut spec = GaitSpec::default();
    if let Some(l) = args.next() {
        spec.step_length = l?;
    }
    if let Some(v) = args.next() {
        spec.average_speed = v?;
    }
    let biped = Biped::new(ModelParams::default())?;
    let (gait, report) = design_nominal_gait(&biped, &spec, 0)?;
    println!("{}", serde_json::to_string_pretty(&gait)?);
    println!("zeta*            {:.6}", report.zeta_star);
    println!("impact scale     {:.6}", report.impact_scale);
    println!("step period      {:.6} s", report.step_period);
    println!("average speed    {:.6} m/s", report.average_speed);
    println!("min swing F_v    {:.3} N", report.min_vertical_force);
    println!("max swing |Fh/Fv| {:.4}", report.max_friction_ratio);
    println!("impact F_h/F_v   {:.4}", report.impact.friction_ratio);
    println!("invariance resid {:.2e}", report.hybrid_invariance_residual);
    Ok(())
}
