//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid
//! by command-line flags. Layers are merged key by key as JSON objects.

use std::path::{Path, PathBuf};

use pclattice::lattice::{Closure, IntegrationSettings, DEFAULT_GUARD, DEFAULT_SAMPLE_EVERY};
use pclattice::model::CouplingParams;
use pclattice::thresholds::{ClassifyOptions, ThresholdOptions};
use pclattice::waves::SpeedOptions;
use pclattice::{Direction, Method, ParamSet, ParamValues, Topology, TopologyKind};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Equilibria,
    Simulate,
    Speed,
    SignMap,
    S0Threshold,
    TauThreshold,
    Combined,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Equilibria => "equilibria",
            Command::Simulate => "simulate",
            Command::Speed => "speed",
            Command::SignMap => "sign-map",
            Command::S0Threshold => "s0-threshold",
            Command::TauThreshold => "tau-threshold",
            Command::Combined => "combined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Directions {
    #[serde(rename = "u->d")]
    UpToDown,
    #[serde(rename = "d->u")]
    DownToUp,
    #[serde(rename = "both")]
    Both,
}

impl Directions {
    pub fn list(&self) -> Vec<Direction> {
        match self {
            Directions::UpToDown => vec![Direction::UpToDown],
            Directions::DownToUp => vec![Direction::DownToUp],
            Directions::Both => vec![Direction::UpToDown, Direction::DownToUp],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    None,
    Constant,
    Flashed,
}

/// Coupling weights `(alpha, beta, lambda)`; when present they replace `p`, `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

/// Fully resolved configuration. Written verbatim into every manifest, so
/// passing a manifest's `config` back through `--config` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub theta: f64,
    pub mu: f64,
    pub p: f64,
    pub q: f64,
    pub weights: Option<Weights>,
    pub topology: TopologyKind,
    pub layers: usize,
    pub closure: Closure,
    pub guard: usize,
    pub direction: Directions,
    pub input: InputKind,
    pub s0: Option<f64>,
    pub tau: Option<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
    pub method: Method,
    pub c_tol: f64,
    pub s0_max: f64,
    pub s0_width: f64,
    pub tau_max: f64,
    pub tau_width: f64,
    pub thetas: Vec<f64>,
    pub qs: Vec<f64>,
    pub ps: Vec<f64>,
    pub s0_levels: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub theta_steps: usize,
    pub out: PathBuf,
    pub jobs: Option<usize>,
}

/// Keys every layer may set.
const KEYS: &[&str] = &[
    "theta", "mu", "p", "q", "weights", "topology", "layers", "closure", "guard", "direction", "input", "s0",
    "tau", "dt", "t_end", "sample_every", "method", "c_tol", "s0_max", "s0_width", "tau_max", "tau_width",
    "thetas", "qs", "ps", "s0_levels", "theta_min", "theta_max", "theta_steps", "out", "jobs",
];

/// Built-in defaults. Keys left `null` are derived from the rest once the
/// layers are merged (for example the lattice size from the topology).
fn defaults(command: Command) -> Value {
    let (topology, t_end) = match command {
        Command::Simulate | Command::Speed | Command::SignMap => ("bi-infinite", 200.0),
        _ => ("bottom-up", 2000.0),
    };
    let (thetas, qs) = match command {
        Command::S0Threshold | Command::TauThreshold | Command::Combined => (json!(null), json!([0.2, 0.4, 0.6])),
        _ => (json!([0.3, 0.4, 0.5, 0.6, 0.7]), json!([0.1, 0.3, 0.5, 0.7, 0.9])),
    };
    json!({
        "theta": 0.5,
        "mu": 16.0,
        "p": 0.1,
        "q": 0.4,
        "weights": null,
        "topology": topology,
        "layers": null,
        "closure": null,
        "guard": DEFAULT_GUARD,
        "direction": if command == Command::Simulate { "u->d" } else { "both" },
        "input": null,
        "s0": null,
        "tau": null,
        "dt": 0.05,
        "t_end": t_end,
        "sample_every": DEFAULT_SAMPLE_EVERY,
        "method": "rk4",
        "c_tol": 1e-3,
        "s0_max": 5.0,
        "s0_width": 1e-4,
        "tau_max": 500.0,
        "tau_width": 1e-3,
        "thetas": thetas,
        "qs": qs,
        "ps": null,
        "s0_levels": [0.5, 1.0, 2.0],
        "theta_min": 0.0,
        "theta_max": 1.0,
        "theta_steps": 101,
        "out": "out",
        "jobs": null,
    })
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a config file. A manifest is accepted too: its `config` member is used.
pub fn read_file(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{} is not valid JSON: {e}", path.display())))?;
    let value = match value {
        Value::Object(mut obj) if obj.contains_key("manifest_version") => obj.remove("config").unwrap_or(Value::Null),
        other => other,
    };
    match value {
        Value::Object(obj) => {
            for key in obj.keys() {
                if !KEYS.contains(&key.as_str()) {
                    return Err(usage(format!("unknown config key `{key}` in {}", path.display())));
                }
            }
            Ok(obj)
        }
        _ => Err(usage(format!("{} must hold a JSON object", path.display()))),
    }
}

/// Merges `defaults < file < flags` and fills the derived keys.
pub fn resolve(
    command: Command,
    file: Option<Map<String, Value>>,
    flags: Map<String, Value>,
) -> Result<RunConfig, CliError> {
    let Value::Object(mut merged) = defaults(command) else {
        unreachable!("defaults form an object")
    };
    for layer in file.into_iter().chain(std::iter::once(flags)) {
        for (k, v) in layer {
            merged.insert(k, v);
        }
    }
    fill_derived(command, &mut merged)?;
    let config: RunConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("invalid configuration: {e}")))?;
    config.validate(command)?;
    Ok(config)
}

fn fill_derived(command: Command, merged: &mut Map<String, Value>) -> Result<(), CliError> {
    if let Some(w) = merged.get("weights").filter(|w| !w.is_null()) {
        let w: Weights = serde_json::from_value(w.clone()).map_err(|e| usage(format!("invalid weights: {e}")))?;
        let c = CouplingParams::from_weights(w.alpha, w.beta, w.lambda).map_err(|e| usage(e.to_string()))?;
        merged.insert("p".into(), json!(c.p));
        merged.insert("q".into(), json!(c.q));
    }
    let kind: TopologyKind = serde_json::from_value(merged["topology"].clone())
        .map_err(|e| usage(format!("invalid topology: {e}")))?;
    let base = Topology::default_for(kind);
    let speed_run = matches!(command, Command::Speed | Command::SignMap);
    if merged["layers"].is_null() {
        let layers = if speed_run {
            SpeedOptions::default().layers
        } else {
            base.layers
        };
        merged.insert("layers".into(), json!(layers));
    }
    if merged["closure"].is_null() {
        merged.insert("closure".into(), serde_json::to_value(base.closure).expect("closure serializes"));
    }
    if merged["input"].is_null() {
        let input = match (kind, command, merged["tau"].is_null()) {
            (TopologyKind::BiInfinite, _, _) => "none",
            (_, Command::Simulate, false) => "flashed",
            _ => "constant",
        };
        merged.insert("input".into(), json!(input));
    }
    if merged["thetas"].is_null() {
        merged.insert("thetas".into(), json!([merged["theta"].clone()]));
    }
    if merged["ps"].is_null() {
        merged.insert("ps".into(), json!([merged["p"].clone()]));
    }
    Ok(())
}

impl RunConfig {
    fn validate(&self, command: Command) -> Result<(), CliError> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || self.sample_every == 0 {
            return Err(usage("dt and t_end must be positive and sample_every at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(usage("jobs must be at least 1"));
        }
        if self.theta_steps < 2 || !(self.theta_min < self.theta_max) {
            return Err(usage("theta grid needs theta_min < theta_max and at least 2 steps"));
        }
        let cells = match command {
            Command::SignMap => self.thetas.len() * self.qs.len() * self.ps.len(),
            Command::S0Threshold | Command::TauThreshold => self.thetas.len() * self.qs.len(),
            Command::Combined => self.qs.len() * self.s0_levels.len(),
            Command::Equilibria => self.theta_steps,
            _ => 1,
        };
        if cells == 0 || cells > 10_000 {
            return Err(usage(format!("grid has {cells} cells; between 1 and 10000 are allowed")));
        }
        match command {
            Command::Equilibria => {
                ParamSet::relaxed(self.theta, self.mu, self.p, self.q).map_err(|e| usage(e.to_string()))?;
            }
            _ => {
                self.params()?;
            }
        }
        self.topology()?.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn values(&self) -> ParamValues {
        ParamValues {
            theta: self.theta,
            mu: self.mu,
            p: self.p,
            q: self.q,
        }
    }

    pub fn params(&self) -> Result<ParamSet, CliError> {
        ParamSet::new(self.theta, self.mu, self.p, self.q).map_err(|e| usage(e.to_string()))
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        Ok(Topology::default_for(self.topology)
            .with_layers(self.layers)
            .with_closure(self.closure))
    }

    pub fn settings(&self) -> IntegrationSettings {
        IntegrationSettings {
            dt: self.dt,
            t_end: self.t_end,
            sample_every: self.sample_every,
            method: self.method,
            guard: self.guard,
        }
    }

    pub fn speed_options(&self) -> SpeedOptions {
        SpeedOptions {
            layers: self.layers,
            settings: self.settings(),
            c_tol: self.c_tol,
            ..SpeedOptions::default()
        }
    }

    pub fn threshold_options(&self) -> ThresholdOptions {
        let speed = SpeedOptions {
            settings: IntegrationSettings {
                dt: self.dt,
                method: self.method,
                ..IntegrationSettings::default()
            },
            c_tol: self.c_tol,
            ..SpeedOptions::default()
        };
        ThresholdOptions {
            classify: ClassifyOptions {
                layers: self.layers,
                settings: self.settings(),
                c_tol: self.c_tol,
            },
            speed,
            s0_max: self.s0_max,
            s0_width: self.s0_width,
            tau_max: self.tau_max,
            tau_width: self.tau_width,
        }
    }
}
