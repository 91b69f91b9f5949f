use std::path::PathBuf;
use std::process::ExitCode;

use canalnav_core::commands::{
    cmd_compare, cmd_detect, cmd_simulate, cmd_sysid, format_comparison_table, CommandError, SimulateOverrides,
};
use canalnav_core::sim::ControllerKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "canalnav", version, about = "Canal navigation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit model constants to trial logs listed in the config.
    Sysid {
        #[command(flatten)]
        common: Common,
    },
    /// Run one closed-loop scenario.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// nmpc, baseline1 or baseline2.
        #[arg(long, value_parser = parse_controller)]
        controller: Option<ControllerKind>,
        /// Simulated time limit [s].
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run all three controllers on one scenario.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Extract wall segments from a point cloud.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Point cloud CSV; overrides `input` in the config.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_controller(s: &str) -> Result<ControllerKind, String> {
    ControllerKind::parse(s).ok_or_else(|| format!("unknown controller `{s}`"))
}

fn require_config(common: &Common) -> Result<&PathBuf, CommandError> {
    common
        .config
        .as_ref()
        .ok_or_else(|| CommandError::Usage("--config is required for this command".into()))
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Sysid { common } => {
            let out = cmd_sysid(require_config(&common)?, &common.out, common.seed)?;
            if common.verbose {
                eprintln!(
                    "surge fit: cost {:.3e} -> {:.3e} in {} iterations",
                    out.surge.initial_cost, out.surge.final_cost, out.surge.iterations
                );
                eprintln!(
                    "sway-yaw fit: cost {:.3e} -> {:.3e} in {} iterations",
                    out.sway_yaw.initial_cost, out.sway_yaw.final_cost, out.sway_yaw.iterations
                );
            }
            println!("wrote {}", common.out.join("params.txt").display());
        }
        Command::Simulate {
            common,
            controller,
            duration,
        } => {
            let o = SimulateOverrides {
                controller,
                seed: common.seed,
                duration,
            };
            let (log, m) = cmd_simulate(require_config(&common)?, &common.out, &o)?;
            if common.verbose {
                eprint!("{}", m.to_json());
            }
            println!(
                "{}: {} after {:.1} s, min separation {:.2} m, mean solve {:.2} ms",
                m.controller.as_str(),
                m.termination.as_str(),
                m.simulated_time,
                m.min_separation,
                log.mean_solve_time() * 1e3
            );
        }
        Command::Compare { common } => {
            let rows = cmd_compare(require_config(&common)?, &common.out, common.seed)?;
            print!("{}", format_comparison_table(&rows));
            if rows.iter().any(|r| r.outcome.is_err()) {
                return Err(CommandError::Runtime(canalnav_core::Error::InvalidScenario(
                    "at least one controller failed".into(),
                )));
            }
        }
        Command::Detect { common, input } => {
            let out = cmd_detect(common.config.as_deref(), input.as_deref(), &common.out, common.seed)?;
            if let Some(w) = &out.warning {
                eprintln!("warning: {w}");
            }
            if common.verbose {
                for s in &out.segments {
                    eprintln!(
                        "segment center ({:.2}, {:.2}) theta {:.2} deg length {:.2} m",
                        s.x_c,
                        s.y_c,
                        s.theta.to_degrees(),
                        s.length
                    );
                }
            }
            println!("{} segments", out.segments.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CommandError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
