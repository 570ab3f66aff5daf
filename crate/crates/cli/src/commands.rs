//! One function per subcommand. Each writes its CSV outputs and a manifest
//! into the configured directory and reports whether the run was decisive.

use std::fmt::Write as _;
use std::time::Instant;

use pclattice::equilibria::{classify_stability, Stability};
use pclattice::export::{fmt_f64, fmt_opt, trajectory_sidecar, write_trajectory_csv};
use pclattice::lattice::{integrate, make_rest_initial, make_step_initial};
use pclattice::thresholds::{combined_regime_map, threshold_curve, ThresholdKind};
use pclattice::waves::{estimate_speed, sign_map, SignMapGrid};
use pclattice::{Branch, Error, InputSignal, ParamSet, ParamValues, TopologyKind};
use serde_json::json;

use crate::config::{Command, InputKind, RunConfig};
use crate::manifest::Writer;
use crate::CliError;

/// How a finished command ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Done,
    /// Outputs were written but the result cannot be trusted
    /// (boundary guard hit, speed undecided).
    Inconclusive,
}

pub fn run(command: Command, config: &RunConfig) -> Result<Status, CliError> {
    let mut writer = Writer::new(&config.out, command)?;
    let start = Instant::now();
    let (status, details) = match command {
        Command::Equilibria => equilibria(config, &mut writer)?,
        Command::Simulate => simulate(config, &mut writer)?,
        Command::Speed => speed(config, &mut writer)?,
        Command::SignMap => signs(config, &mut writer)?,
        Command::S0Threshold => thresholds(config, ThresholdKind::S0, &mut writer)?,
        Command::TauThreshold => thresholds(config, ThresholdKind::Tau, &mut writer)?,
        Command::Combined => combined(config, &mut writer)?,
    };
    let compute = start.elapsed().as_secs_f64();
    writer.finish(config, compute, details)?;
    Ok(status)
}

type Outcome = (Status, serde_json::Value);

fn equilibria(config: &RunConfig, writer: &mut Writer) -> Result<Outcome, CliError> {
    let mut csv = String::from("theta,x_d,x_m,x_u,stability_d,stability_m,stability_u\n");
    let n = config.theta_steps;
    let mut folds = None;
    for k in 0..n {
        let theta = config.theta_min + (config.theta_max - config.theta_min) * k as f64 / (n - 1) as f64;
        let theta = theta.clamp(0.0, 1.0);
        let set = ParamSet::relaxed(theta, config.mu, config.p, config.q)?;
        folds.get_or_insert(*set.folds());
        let b = set.branches();
        let label = |branch: Branch| match b.get(branch) {
            Some(_) => match classify_stability(branch, &set) {
                Ok(Stability::Stable) => "stable",
                Ok(Stability::Unstable) => "unstable",
                Err(_) => "",
            },
            None => "",
        };
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            fmt_f64(theta),
            fmt_opt(b.get(Branch::Down)),
            fmt_opt(b.get(Branch::Middle)),
            fmt_opt(b.get(Branch::Up)),
            label(Branch::Down),
            label(Branch::Middle),
            label(Branch::Up)
        )
        .expect("writing to a String");
    }
    writer.write("equilibria.csv", csv.as_bytes())?;
    Ok((Status::Done, json!({ "folds": folds })))
}

fn input_signal(config: &RunConfig, set: &ParamSet) -> Result<InputSignal, CliError> {
    let xu = set.branches().require(Branch::Up)?;
    let signal = match config.input {
        InputKind::None => InputSignal::None,
        InputKind::Constant => InputSignal::constant(config.s0.unwrap_or(xu), set)?,
        InputKind::Flashed => {
            let tau = config
                .tau
                .ok_or_else(|| CliError::Usage("flashed input needs tau".into()))?;
            InputSignal::flashed(config.s0.unwrap_or(xu), tau, set)?
        }
    };
    Ok(signal)
}

fn simulate(config: &RunConfig, writer: &mut Writer) -> Result<Outcome, CliError> {
    let set = config.params()?;
    let topology = config.topology()?;
    let initial = if topology.kind == TopologyKind::BiInfinite {
        let direction = match config.direction.list().as_slice() {
            [d] => *d,
            _ => return Err(CliError::Usage("simulate needs a single direction".into())),
        };
        make_step_initial(direction, &set, &topology)?
    } else {
        make_rest_initial(&set, &topology)?
    };
    let input = input_signal(config, &set)?;
    let traj = integrate(&initial, &topology, input, &set, &config.settings())?;
    let mut csv = Vec::new();
    write_trajectory_csv(&traj, &mut csv)?;
    writer.write("trajectory.csv", &csv)?;
    let sidecar = trajectory_sidecar(&traj);
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    writer.write("trajectory.json", text.as_bytes())?;
    let status = if traj.guard_triggered {
        Status::Inconclusive
    } else {
        Status::Done
    };
    Ok((status, json!({ "guard_triggered": traj.guard_triggered })))
}

fn speed(config: &RunConfig, writer: &mut Writer) -> Result<Outcome, CliError> {
    let set = config.params()?;
    let opts = config.speed_options();
    let mut csv = String::from("direction,c,fit_residual,displacement,pinned,sign,layers,t_end,escalated,error\n");
    let mut status = Status::Done;
    for direction in config.direction.list() {
        match estimate_speed(&set, direction, &opts) {
            Ok(e) => writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},",
                direction.label(),
                fmt_f64(e.c),
                fmt_f64(e.fit_residual),
                fmt_f64(e.displacement),
                e.pinned,
                e.sign().symbol(),
                e.layers,
                fmt_f64(e.t_end),
                e.escalated
            ),
            Err(err @ (Error::Inconclusive(_) | Error::Tracking { .. })) => {
                status = Status::Inconclusive;
                writeln!(csv, "{},,,,,?,,,,{}", direction.label(), csv_text(&err.to_string()))
            }
            Err(err) => return Err(err.into()),
        }
        .expect("writing to a String");
    }
    writer.write("speed.csv", csv.as_bytes())?;
    Ok((status, json!({ "solver": opts })))
}

/// Free text made safe for one CSV field.
fn csv_text(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

fn signs(config: &RunConfig, writer: &mut Writer) -> Result<Outcome, CliError> {
    let grid = SignMapGrid {
        mu: config.mu,
        thetas: config.thetas.clone(),
        qs: config.qs.clone(),
        ps: config.ps.clone(),
    };
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let map = sign_map(&grid, &config.direction.list(), &config.speed_options(), config.jobs)?;
    let mut csv = Vec::new();
    map.write_csv(&mut csv)?;
    writer.write("sign_map.csv", &csv)?;
    Ok((Status::Done, map.manifest()))
}

fn grid_points(config: &RunConfig) -> Vec<ParamValues> {
    let mut points = Vec::with_capacity(config.thetas.len() * config.qs.len());
    for &theta in &config.thetas {
        for &q in &config.qs {
            points.push(ParamValues { theta, q, ..config.values() });
        }
    }
    points
}

fn thresholds(config: &RunConfig, kind: ThresholdKind, writer: &mut Writer) -> Result<Outcome, CliError> {
    if config.topology == TopologyKind::BiInfinite {
        return Err(CliError::Usage("thresholds need a bottom-up or top-down topology".into()));
    }
    let points = grid_points(config);
    for p in &points {
        ParamSet::from_values(*p).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let curve = threshold_curve(&points, kind, config.topology, &config.threshold_options(), config.jobs)?;
    let mut csv = Vec::new();
    curve.write_csv(&mut csv)?;
    let name = match kind {
        ThresholdKind::S0 => "s0_threshold.csv",
        ThresholdKind::Tau => "tau_threshold.csv",
    };
    writer.write(name, &csv)?;
    Ok((Status::Done, curve.manifest()))
}

fn combined(config: &RunConfig, writer: &mut Writer) -> Result<Outcome, CliError> {
    for &q in &config.qs {
        ParamSet::new(config.theta, config.mu, config.p, q).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let map = combined_regime_map(
        config.values(),
        &config.qs,
        &config.s0_levels,
        &config.threshold_options(),
        config.jobs,
    )?;
    let mut csv = Vec::new();
    map.write_csv(&mut csv)?;
    writer.write("combined.csv", &csv)?;
    Ok((Status::Done, map.manifest()))
}
