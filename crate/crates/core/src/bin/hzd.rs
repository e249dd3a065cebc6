use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thrust_hzd::cli::{self, RunConfig};

/// Thruster-assisted HZD walking: gait design, simulation, limit-cycle shaping and force checks.
///
/// Outputs go to the output directory. CSV columns:
///   trajectory.csv        step, t, q0.., qdot0.., u0.., thrust, y0.., ydot0.., alpha, alpha_dot, sigma_n, zeta
///   sweep.csv             sweep_value, alpha, alpha_dot, zeta, sigma_n
///   shape_restricted.csv  k, alpha, zeta, zeta_nominal
///   shape_full.csv        k, alpha, alpha_dot, zeta, sigma_n
/// impacts.jsonl holds one impact per line (q_minus, qdot_minus, q_plus, qdot_plus, impulse, zeta_minus).
///
/// Exit codes: 0 success, 2 domain failure, 3 numerical failure, 64 config error.
/// HZD_THREADS caps the worker threads used by `sweep`.
#[derive(Parser)]
#[command(name = "hzd", version, verbatim_doc_comment)]
struct Args {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized restarts (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the nominal gait; writes gaits/nominal.json and design_report.json.
    DesignGait,
    /// Simulate consecutive steps; writes trajectory.csv and impacts.jsonl.
    Simulate,
    /// Limit cycles over thrust values; writes sweep.csv and sweep_report.json.
    Sweep,
    /// Reshape or shift the limit cycle with thrust schedules; writes shape CSVs and schedules.json.
    Shape,
    /// Fit swing-force surrogates; writes force_fit.json.
    FitForces,
    /// Check force feasibility of a schedule; writes constraint_report.json.
    Check,
}

fn run(args: Args) -> thrust_hzd::Result<serde_json::Value> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match args.command {
        Command::DesignGait => cli::cmd_design_gait(&cfg),
        Command::Simulate => cli::cmd_simulate(&cfg),
        Command::Sweep => cli::cmd_sweep(&cfg),
        Command::Shape => cli::cmd_shape(&cfg),
        Command::FitForces => cli::cmd_fit_forces(&cfg),
        Command::Check => cli::cmd_check(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
