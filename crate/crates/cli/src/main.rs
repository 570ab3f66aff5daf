//! `pclattice`: equilibria tables, lattice simulations, front speeds, sign
//! maps and propagation thresholds from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use config::Command;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] pclattice::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use pclattice::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(E::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Model(E::Inconclusive(_) | E::Tracking { .. }) => EXIT_INCONCLUSIVE,
            CliError::Model(
                E::InvalidParams(_)
                | E::DegenerateCoupling
                | E::NoBistability(_)
                | E::MissingBranch(_)
                | E::InvalidTopology(_)
                | E::InvalidInput(_)
                | E::InvalidSettings(_),
            ) => EXIT_USAGE,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "pclattice", version, about = "Fronts and thresholds in a bistable predictive-coding lattice")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Table of the homogeneous branches and their stability over a theta grid.
    Equilibria(Flags),
    /// Integrate one run and write the space-time table.
    Simulate(Flags),
    /// Estimate the front speeds c_{u->d} and c_{d->u}.
    Speed(Flags),
    /// Speed signs over a (theta, q[, p]) grid.
    SignMap(Flags),
    /// Constant-input threshold s0* over a (theta, q) grid.
    S0Threshold(Flags),
    /// Flash-duration threshold tau* over a (theta, q) grid.
    TauThreshold(Flags),
    /// Joint bottom-up / top-down regimes over q and input levels.
    Combined(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    BiInfinite,
    BottomUp,
    TopDown,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClosureArg {
    DirichletEquilibrium,
    InverseSigmoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    None,
    Constant,
    Flashed,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    #[value(name = "u->d", alias = "ud")]
    UpToDown,
    #[value(name = "d->u", alias = "du")]
    DownToUp,
    Both,
}

/// Flags override the config file, which overrides the built-in defaults.
#[derive(Args, Default)]
struct Flags {
    /// JSON config file (a manifest from an earlier run also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Lattice size J.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    topology: Option<TopologyArg>,
    #[arg(long, value_enum)]
    closure: Option<ClosureArg>,
    /// Boundary guard width B in layers.
    #[arg(long)]
    guard: Option<usize>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    #[arg(long, value_enum)]
    input: Option<InputArg>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "sample-every")]
    sample_every: Option<usize>,
    #[arg(long = "c-tol")]
    c_tol: Option<f64>,
    #[arg(long = "s0-max")]
    s0_max: Option<f64>,
    #[arg(long = "tau-max")]
    tau_max: Option<f64>,
    /// Comma-separated theta values.
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Comma-separated q values.
    #[arg(long, value_delimiter = ',')]
    qs: Option<Vec<f64>>,
    /// Comma-separated p values.
    #[arg(long, value_delimiter = ',')]
    ps: Option<Vec<f64>>,
    /// Comma-separated input levels for `combined`.
    #[arg(long = "s0-levels", value_delimiter = ',')]
    s0_levels: Option<Vec<f64>>,
    #[arg(long = "theta-min")]
    theta_min: Option<f64>,
    #[arg(long = "theta-max")]
    theta_max: Option<f64>,
    #[arg(long = "theta-steps")]
    theta_steps: Option<usize>,
}

impl Flags {
    /// The flags that were actually given, as a config layer.
    fn layer(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("out", self.out.as_ref().map(|p| json!(p)));
        put("theta", self.theta.map(|v| json!(v)));
        put("mu", self.mu.map(|v| json!(v)));
        put("p", self.p.map(|v| json!(v)));
        put("q", self.q.map(|v| json!(v)));
        put("dt", self.dt.map(|v| json!(v)));
        put("t_end", self.t_end.map(|v| json!(v)));
        put("layers", self.layers.map(|v| json!(v)));
        put(
            "method",
            self.method.map(|v| {
                json!(match v {
                    MethodArg::Euler => "euler",
                    MethodArg::Rk4 => "rk4",
                })
            }),
        );
        put("jobs", self.jobs.map(|v| json!(v)));
        put(
            "topology",
            self.topology.map(|v| {
                json!(match v {
                    TopologyArg::BiInfinite => "bi-infinite",
                    TopologyArg::BottomUp => "bottom-up",
                    TopologyArg::TopDown => "top-down",
                })
            }),
        );
        put(
            "closure",
            self.closure.map(|v| {
                json!(match v {
                    ClosureArg::DirichletEquilibrium => "dirichlet-equilibrium",
                    ClosureArg::InverseSigmoid => "inverse-sigmoid",
                })
            }),
        );
        put("guard", self.guard.map(|v| json!(v)));
        put(
            "direction",
            self.direction.map(|v| {
                json!(match v {
                    DirectionArg::UpToDown => "u->d",
                    DirectionArg::DownToUp => "d->u",
                    DirectionArg::Both => "both",
                })
            }),
        );
        put(
            "input",
            self.input.map(|v| {
                json!(match v {
                    InputArg::None => "none",
                    InputArg::Constant => "constant",
                    InputArg::Flashed => "flashed",
                })
            }),
        );
        put("s0", self.s0.map(|v| json!(v)));
        put("tau", self.tau.map(|v| json!(v)));
        put("sample_every", self.sample_every.map(|v| json!(v)));
        put("c_tol", self.c_tol.map(|v| json!(v)));
        put("s0_max", self.s0_max.map(|v| json!(v)));
        put("tau_max", self.tau_max.map(|v| json!(v)));
        put("thetas", self.thetas.as_ref().map(|v| json!(v)));
        put("qs", self.qs.as_ref().map(|v| json!(v)));
        put("ps", self.ps.as_ref().map(|v| json!(v)));
        put("s0_levels", self.s0_levels.as_ref().map(|v| json!(v)));
        put("theta_min", self.theta_min.map(|v| json!(v)));
        put("theta_max", self.theta_max.map(|v| json!(v)));
        put("theta_steps", self.theta_steps.map(|v| json!(v)));
        m
    }
}

fn execute(command: Command, flags: &Flags) -> Result<commands::Status, CliError> {
    let file = flags.config.as_deref().map(config::read_file).transpose()?;
    let config = config::resolve(command, file, flags.layer())?;
    commands::run(command, &config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Sub::Equilibria(f) => (Command::Equilibria, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Speed(f) => (Command::Speed, f),
        Sub::SignMap(f) => (Command::SignMap, f),
        Sub::S0Threshold(f) => (Command::S0Threshold, f),
        Sub::TauThreshold(f) => (Command::TauThreshold, f),
        Sub::Combined(f) => (Command::Combined, f),
    };
    match execute(command, flags) {
        Ok(commands::Status::Done) => ExitCode::SUCCESS,
        Ok(commands::Status::Inconclusive) => {
            eprintln!("pclattice {}: result inconclusive, see the manifest", command.name());
            ExitCode::from(EXIT_INCONCLUSIVE)
        }
        Err(e) => {
            eprintln!("pclattice {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
