use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtctrl_cli::{
    analyze, list_systems, optimal, oracle, render, CostSpec, OracleParams, Outcome, OutputFormat, RunConfig,
    SystemSource, EXIT_ERROR,
};

#[derive(Parser)]
#[command(
    name = "dtctrl",
    version,
    about = "Second-order controllability and optimality checks for discrete-time systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Span, kernel and second-order controllability verdict.
    Analyze(Common),
    /// First- and second-order optimality conditions for a final cost.
    Optimal {
        #[command(flatten)]
        common: Common,
        /// Problem file with dynamics, `phi` and optional running cost `c`.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Final cost over x1..xn, used with --system.
        #[arg(long, allow_hyphen_values = true)]
        phi: Option<String>,
        /// Running cost over x1..xn, u1..um, used with --system.
        #[arg(long, allow_hyphen_values = true)]
        running_cost: Option<String>,
    },
    /// Finite-difference cross-checks and sampled reachability.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Half-width of the control box sampled around the reference controls.
        #[arg(long, default_value_t = OracleParams::default().radius)]
        radius: f64,
        #[arg(long, default_value_t = OracleParams::default().samples)]
        samples: usize,
    },
    /// Built-in systems.
    ListSystems {
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
}

#[derive(Args)]
struct Common {
    /// Built-in system name or path to a system file.
    #[arg(long)]
    system: Option<String>,
    #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
    x0: Vec<f64>,
    /// Controls, step by step; a single step is repeated with --steps.
    #[arg(long = "u", num_args = 1.., allow_negative_numbers = true, required = true)]
    u: Vec<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = dtctrl_core::analysis::DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = dtctrl_core::analysis::DEFAULT_EIG_TOL)]
    eig_tol: f64,
    #[arg(long, env = "DTCTRL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

impl Common {
    fn config(self, radius: f64, samples: usize) -> RunConfig {
        RunConfig {
            system: self.system.as_deref().map(SystemSource::from_arg),
            x0: self.x0,
            controls: self.u,
            steps: self.steps,
            rank_tol: self.rank_tol,
            eig_tol: self.eig_tol,
            oracle: OracleParams {
                seed: self.seed,
                radius,
                samples,
            },
            format: self.format,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR as u8 } else { 0 });
        }
    };
    let defaults = OracleParams::default();
    let (result, format) = match cli.command {
        Command::Analyze(common) => {
            let cfg = common.config(defaults.radius, defaults.samples);
            (analyze(&cfg), cfg.format)
        }
        Command::Optimal {
            common,
            problem,
            phi,
            running_cost,
        } => {
            let cfg = common.config(defaults.radius, defaults.samples);
            let cost = CostSpec {
                problem,
                phi,
                running_cost,
            };
            (optimal(&cfg, &cost), cfg.format)
        }
        Command::Oracle {
            common,
            radius,
            samples,
        } => {
            let cfg = common.config(radius, samples);
            (oracle(&cfg), cfg.format)
        }
        Command::ListSystems { format } => (Ok(list_systems()), format),
    };
    match result {
        Ok(Outcome { code, report }) => {
            print!("{}", render(&report, format));
            ExitCode::from(code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
