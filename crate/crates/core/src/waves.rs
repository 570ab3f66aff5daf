//! Front tracking, speed estimation and speed-sign maps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::equilibria::Branch;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, fmt_opt};
use crate::lattice::{
    front_near_edge, make_step_initial, mid_level, Direction, InputSignal, IntegrationSettings,
    LatticeState, LatticeSystem, Simulation, Topology, Trajectory, DEFAULT_BI_INFINITE_LAYERS,
};
use crate::model::{ParamSet, ParamValues};
use crate::parallel::ordered_map;

pub const DEFAULT_C_TOL: f64 = 1e-3;
pub const MONOTONE_TOL: f64 = 1e-6;
pub const CONVERGENCE_TOL: f64 = 1e-3;
const CONVERGENCE_SLACK: f64 = 1e-6;

/// Level crossing found in one snapshot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub position: f64,
    /// More than one crossing, or the profile is not monotone.
    pub flagged: bool,
}

fn is_monotone(values: &[f64], tol: f64) -> bool {
    let (Some(first), Some(last)) = (values.first(), values.last()) else {
        return true;
    };
    let sign = if last >= first { 1.0 } else { -1.0 };
    values.windows(2).all(|w| sign * (w[1] - w[0]) >= -tol)
}

/// Interpolated position where the profile crosses `level`. With several
/// crossings the one closest to `previous` (or the leftmost) is returned.
pub fn locate_front(state: &LatticeState, level: f64, previous: Option<f64>) -> Option<Crossing> {
    let v = &state.values;
    let mut found: Vec<f64> = Vec::new();
    for k in 0..v.len().saturating_sub(1) {
        let (a, b) = (v[k], v[k + 1]);
        if (a >= level) != (b >= level) {
            let j = state.first_layer + k as i64;
            found.push(j as f64 + (level - a) / (b - a));
        }
    }
    let position = match (found.len(), previous) {
        (0, _) => return None,
        (1, _) | (_, None) => found[0],
        (_, Some(prev)) => found
            .iter()
            .copied()
            .min_by(|x, y| (x - prev).abs().total_cmp(&(y - prev).abs()))
            .expect("non-empty"),
    };
    Some(Crossing {
        position,
        flagged: found.len() > 1 || !is_monotone(v, MONOTONE_TOL),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontTrack {
    pub level: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub flagged: Vec<bool>,
}

impl FrontTrack {
    pub fn new(level: f64) -> Self {
        Self {
            level,
            ..Default::default()
        }
    }

    fn push(&mut self, t: f64, crossing: Crossing) {
        self.times.push(t);
        self.positions.push(crossing.position);
        self.flagged.push(crossing.flagged);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the first sample in the regression window (final half).
    pub fn window_start(&self) -> usize {
        self.len() / 2
    }
}

pub fn track_front(trajectory: &Trajectory, level: f64) -> Result<FrontTrack> {
    let mut track = FrontTrack::new(level);
    for state in &trajectory.snapshots {
        let previous = track.positions.last().copied();
        let crossing = locate_front(state, level, previous).ok_or_else(|| Error::Tracking {
            t: state.t,
            reason: format!(
                "level {level} not crossed on layers {}..={}",
                state.first_layer,
                state.last_layer()
            ),
        })?;
        track.push(state.t, crossing);
    }
    Ok(track)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

/// Ordinary least squares `x ≈ slope * t + intercept`.
pub fn fit_line(t: &[f64], x: &[f64]) -> Option<LinearFit> {
    let n = t.len().min(x.len());
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let tm = t[..n].iter().sum::<f64>() / nf;
    let xm = x[..n].iter().sum::<f64>() / nf;
    let (mut stt, mut stx) = (0.0, 0.0);
    for k in 0..n {
        let dt = t[k] - tm;
        stt += dt * dt;
        stx += dt * (x[k] - xm);
    }
    if stt <= 0.0 {
        return None;
    }
    let slope = stx / stt;
    let intercept = xm - slope * tm;
    let sse: f64 = (0..n)
        .map(|k| {
            let r = x[k] - (slope * t[k] + intercept);
            r * r
        })
        .sum();
    Some(LinearFit {
        slope,
        intercept,
        rms: (sse / nf).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedOptions {
    /// Half-width `J` of the bi-infinite lattice.
    pub layers: usize,
    pub settings: IntegrationSettings,
    pub c_tol: f64,
    /// Slide the window with the front so fast fronts stay away from the edges.
    pub recenter: bool,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        Self {
            layers: DEFAULT_BI_INFINITE_LAYERS,
            settings: IntegrationSettings::default(),
            c_tol: DEFAULT_C_TOL,
            recenter: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignClass {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "0")]
    Pinned,
    #[serde(rename = "-")]
    Negative,
    #[serde(rename = "?")]
    Inconclusive,
}

impl SignClass {
    pub fn symbol(&self) -> &'static str {
        match self {
            SignClass::Positive => "+",
            SignClass::Pinned => "0",
            SignClass::Negative => "-",
            SignClass::Inconclusive => "?",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub direction: Direction,
    /// Layers per unit time; positive means the interface moves to higher `j`.
    pub c: f64,
    pub fit_residual: f64,
    /// Net front travel over the regression window, in layers.
    pub displacement: f64,
    pub pinned: bool,
    pub layers: usize,
    pub t_end: f64,
    /// The first run hit the boundary guard and was repeated on a larger domain.
    pub escalated: bool,
    pub recenters: usize,
    pub track: FrontTrack,
}

impl SpeedEstimate {
    pub fn sign(&self) -> SignClass {
        if self.pinned {
            SignClass::Pinned
        } else if self.c > 0.0 {
            SignClass::Positive
        } else {
            SignClass::Negative
        }
    }
}

struct FrontRun {
    track: FrontTrack,
    guard_triggered: bool,
    recenters: usize,
}

fn run_front(
    params: &ParamSet,
    direction: Direction,
    opts: &SpeedOptions,
    layers: usize,
    t_end: f64,
) -> Result<FrontRun> {
    let settings = IntegrationSettings { t_end, ..opts.settings };
    settings.validate()?;
    let topology = Topology::bi_infinite(layers);
    let initial = make_step_initial(direction, params, &topology)?;
    let level = mid_level(params).expect("branches checked by make_step_initial");
    let system = LatticeSystem::new(params, topology, InputSignal::None, &initial)?;
    let mut sim = Simulation::new(system, initial.clone(), settings.dt, settings.method)?;
    let mut track = FrontTrack::new(level);
    let mut recenters = 0;
    let total = settings.total_steps();
    let half = (layers / 2) as f64;
    loop {
        let state = sim.state();
        let crossing = locate_front(&state, level, track.positions.last().copied()).ok_or_else(|| {
            Error::Tracking {
                t: state.t,
                reason: "front left the lattice".into(),
            }
        })?;
        track.push(state.t, crossing);
        if front_near_edge(sim.system(), sim.values(), settings.guard) {
            return Ok(FrontRun {
                track,
                guard_triggered: true,
                recenters,
            });
        }
        if opts.recenter {
            // window centre sits on the initial interface at j = 1/2
            let centre = sim.first_layer() as f64 + layers as f64 + 0.5;
            let offset = crossing.position - centre;
            if offset.abs() > half {
                sim.recenter(offset.round() as i64);
                recenters += 1;
            }
        }
        if sim.steps() >= total {
            break;
        }
        let remaining = (total - sim.steps()).min(settings.sample_every as u64);
        sim.advance(remaining as usize)?;
    }
    Ok(FrontRun {
        track,
        guard_triggered: false,
        recenters,
    })
}

fn summarize(
    direction: Direction,
    track: FrontTrack,
    c_tol: f64,
    layers: usize,
    t_end: f64,
) -> Result<SpeedEstimate> {
    let start = track.window_start();
    if track.flagged[start..].iter().any(|&f| f) {
        return Err(Error::Inconclusive(
            "non-monotone profile inside the regression window".into(),
        ));
    }
    let fit = fit_line(&track.times[start..], &track.positions[start..]).ok_or_else(|| {
        Error::Inconclusive("too few samples for a speed fit".into())
    })?;
    let displacement = (track.positions[track.len() - 1] - track.positions[start]).abs();
    Ok(SpeedEstimate {
        direction,
        c: fit.slope,
        fit_residual: fit.rms,
        displacement,
        pinned: fit.slope.abs() < c_tol && displacement < 1.0,
        layers,
        t_end,
        escalated: false,
        recenters: 0,
        track,
    })
}

/// Front speed from step initial data, retried once on a domain of twice
/// the size and duration when the boundary guard fires.
pub fn estimate_speed(params: &ParamSet, direction: Direction, opts: &SpeedOptions) -> Result<SpeedEstimate> {
    if !params.branches().has_all() {
        return Err(Error::MissingBranch(Branch::Middle));
    }
    let mut layers = opts.layers;
    let mut t_end = opts.settings.t_end;
    for attempt in 0..2 {
        let run = run_front(params, direction, opts, layers, t_end)?;
        if !run.guard_triggered {
            let mut est = summarize(direction, run.track, opts.c_tol, layers, t_end)?;
            est.escalated = attempt > 0;
            est.recenters = run.recenters;
            return Ok(est);
        }
        layers *= 2;
        t_end *= 2.0;
    }
    Err(Error::Inconclusive(format!(
        "front reached the boundary guard on J={} and J={}",
        opts.layers,
        opts.layers * 2
    )))
}

/// Speed estimate from an existing bi-infinite trajectory.
pub fn estimate_from_trajectory(
    trajectory: &Trajectory,
    direction: Direction,
    c_tol: f64,
) -> Result<SpeedEstimate> {
    if trajectory.guard_triggered {
        return Err(Error::Inconclusive("boundary guard triggered".into()));
    }
    let params = ParamSet::from_values(trajectory.params)?;
    let level = mid_level(&params).ok_or(Error::MissingBranch(Branch::Middle))?;
    let track = track_front(trajectory, level)?;
    summarize(
        direction,
        track,
        c_tol,
        trajectory.topology.layers,
        trajectory.settings.t_end,
    )
}

/// Monotone piecewise-cubic interpolant through `(t_k, y_k)`.
#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    t: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Self {
        let n = t.len();
        let mut slopes = vec![0.0; n];
        if n >= 2 {
            let secant: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (t[k + 1] - t[k])).collect();
            slopes[0] = secant[0];
            slopes[n - 1] = secant[n - 2];
            for k in 1..n - 1 {
                let (a, b) = (secant[k - 1], secant[k]);
                slopes[k] = if a * b <= 0.0 {
                    0.0
                } else {
                    let (h0, h1) = (t[k] - t[k - 1], t[k + 1] - t[k]);
                    let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
                    (w1 + w2) / (w1 / a + w2 / b)
                };
            }
        }
        Self { t, y, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.t.len();
        if n == 1 {
            return self.y[0];
        }
        let k = match self.t.partition_point(|&s| s <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let h = self.t[k + 1] - self.t[k];
        let s = (x - self.t[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Time for the front to advance by one layer.
    pub lag: f64,
    pub times: Vec<f64>,
    /// `sup_j |v_j(t) - v_{j-s}(t - lag)|` with `s = sign(c)`.
    pub distances: Vec<f64>,
    /// Distances after the first half of the checkpoints never grow (beyond 1e-6).
    pub non_increasing: bool,
    pub final_distance: f64,
    pub converged: bool,
}

/// Distance between the profile and its one-layer translate.
///
/// A travelling wave satisfies `v_j(t) = v_{j-1}(t - 1/c)`, so the layer
/// time series are compared instead of the spatial profile: the profiles are
/// too steep for sub-layer spatial interpolation, whereas the time series are
/// finely sampled. Checkpoints are one lag apart so the lattice-periodic
/// modulation of the front does not enter the comparison.
pub fn profile_convergence(trajectory: &Trajectory, estimate: &SpeedEstimate) -> Result<ConvergenceReport> {
    if estimate.pinned || estimate.c == 0.0 {
        return Err(Error::NotApplicable("profile convergence needs a moving front".into()));
    }
    let snaps = &trajectory.snapshots;
    if snaps.len() < 4 {
        return Err(Error::NotApplicable("trajectory too short".into()));
    }
    let times: Vec<f64> = snaps.iter().map(|s| s.t).collect();
    let t0 = times[0];
    let t_final = *times.last().expect("non-empty");
    let shift = if estimate.c > 0.0 { 1 } else { -1 };
    let nominal = 1.0 / estimate.c.abs();
    if t_final - t0 <= 2.0 * nominal {
        return Err(Error::NotApplicable("trajectory shorter than two layer passages".into()));
    }
    let lo = snaps.iter().map(|s| s.first_layer).max().expect("non-empty");
    let hi = snaps.iter().map(|s| s.last_layer()).min().expect("non-empty");
    let series: Vec<MonotoneCubic> = (lo..=hi)
        .map(|j| {
            let y = snaps.iter().map(|s| s.layer(j).expect("layer in window")).collect();
            MonotoneCubic::new(times.clone(), y)
        })
        .collect();
    let value_at_sample = |j: i64, k: usize| snaps[k].layer(j).expect("layer in window");
    let distance = |k: usize, lag: f64| {
        let t = times[k] - lag;
        let mut worst: f64 = 0.0;
        for j in lo..=hi {
            let source = j - shift;
            if source < lo || source > hi {
                continue;
            }
            let shifted = series[(source - lo) as usize].eval(t);
            worst = worst.max((value_at_sample(j, k) - shifted).abs());
        }
        worst
    };
    let last = times.len() - 1;
    let lag = golden_min(|l| distance(last, l), 0.8 * nominal, 1.25 * nominal, 1e-10);

    let mut checkpoints = Vec::new();
    let mut target = t_final;
    while target - lag >= t0 {
        let k = times.partition_point(|&s| s < target - 1e-9);
        checkpoints.push(k.min(last));
        target -= lag;
    }
    checkpoints.reverse();
    checkpoints.dedup();
    let distances: Vec<f64> = checkpoints.iter().map(|&k| distance(k, lag)).collect();
    let tail = &distances[distances.len() / 2..];
    let non_increasing = tail.windows(2).all(|w| w[1] <= w[0] + CONVERGENCE_SLACK);
    let final_distance = *distances.last().expect("at least one checkpoint");
    Ok(ConvergenceReport {
        lag,
        times: checkpoints.iter().map(|&k| times[k]).collect(),
        distances,
        non_increasing,
        final_distance,
        converged: non_increasing && final_distance < CONVERGENCE_TOL,
    })
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Cartesian parameter grid; axes with a single value are held fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignMapGrid {
    pub mu: f64,
    pub thetas: Vec<f64>,
    pub qs: Vec<f64>,
    pub ps: Vec<f64>,
}

impl SignMapGrid {
    /// Cells in grid order: `p` outermost, then `q`, then `theta`.
    pub fn cells(&self) -> Vec<ParamValues> {
        let mut out = Vec::with_capacity(self.ps.len() * self.qs.len() * self.thetas.len());
        for &p in &self.ps {
            for &q in &self.qs {
                for &theta in &self.thetas {
                    out.push(ParamValues { theta, mu: self.mu, p, q });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.qs.is_empty() || self.ps.is_empty() {
            return Err(Error::InvalidSettings("empty grid axis".into()));
        }
        for v in self.cells() {
            ParamSet::from_values(v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub c: Option<f64>,
    pub sign: SignClass,
    pub flags: Vec<String>,
}

impl DirectionResult {
    fn from_outcome(outcome: Result<SpeedEstimate>) -> Self {
        match outcome {
            Ok(est) => {
                let mut flags = Vec::new();
                if est.escalated {
                    flags.push("escalated".to_string());
                }
                Self {
                    c: Some(est.c),
                    sign: est.sign(),
                    flags,
                }
            }
            Err(e) => Self {
                c: None,
                sign: SignClass::Inconclusive,
                flags: vec![format!("inconclusive: {e}")],
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignCell {
    pub params: ParamValues,
    pub up_to_down: Option<DirectionResult>,
    pub down_to_up: Option<DirectionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignMap {
    pub grid: SignMapGrid,
    pub options: SpeedOptions,
    pub cells: Vec<SignCell>,
}

/// Speed signs over a parameter grid, cells evaluated in parallel.
pub fn sign_map(
    grid: &SignMapGrid,
    directions: &[Direction],
    opts: &SpeedOptions,
    jobs: Option<usize>,
) -> Result<SignMap> {
    grid.validate()?;
    let cells = grid.cells();
    let want = |d: Direction| directions.contains(&d);
    let tasks: Vec<(usize, Direction)> = (0..cells.len())
        .flat_map(|k| {
            [Direction::UpToDown, Direction::DownToUp]
                .into_iter()
                .filter(|d| want(*d))
                .map(move |d| (k, d))
        })
        .collect();
    let results = ordered_map(&tasks, jobs, |&(k, d)| {
        let outcome = ParamSet::from_values(cells[k]).and_then(|set| estimate_speed(&set, d, opts));
        DirectionResult::from_outcome(outcome)
    });
    let mut out: Vec<SignCell> = cells
        .iter()
        .map(|&params| SignCell {
            params,
            up_to_down: None,
            down_to_up: None,
        })
        .collect();
    for ((k, d), r) in tasks.into_iter().zip(results) {
        match d {
            Direction::UpToDown => out[k].up_to_down = Some(r),
            Direction::DownToUp => out[k].down_to_up = Some(r),
        }
    }
    Ok(SignMap {
        grid: grid.clone(),
        options: *opts,
        cells: out,
    })
}

impl SignMap {
    pub fn cell(&self, theta: f64, q: f64) -> Option<&SignCell> {
        self.cells
            .iter()
            .find(|c| c.params.theta == theta && c.params.q == q)
    }

    /// Writes `theta,q,c_ud,c_du,sign_ud,sign_du,flags`, with a `p` column
    /// after `q` when the grid varies `p`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let with_p = self.grid.ps.len() > 1;
        if with_p {
            writeln!(out, "theta,q,p,c_ud,c_du,sign_ud,sign_du,flags")?;
        } else {
            writeln!(out, "theta,q,c_ud,c_du,sign_ud,sign_du,flags")?;
        }
        for cell in &self.cells {
            let c = |r: &Option<DirectionResult>| fmt_opt(r.as_ref().and_then(|r| r.c));
            let s = |r: &Option<DirectionResult>| r.as_ref().map(|r| r.sign.symbol()).unwrap_or("");
            let mut flags: Vec<String> = Vec::new();
            for (tag, r) in [("ud", &cell.up_to_down), ("du", &cell.down_to_up)] {
                if let Some(r) = r {
                    flags.extend(r.flags.iter().map(|f| format!("{tag} {f}")));
                }
            }
            let flags = flags.join("; ").replace([',', '"', '\n'], " ");
            let mut line = format!("{},{}", fmt_f64(cell.params.theta), fmt_f64(cell.params.q));
            if with_p {
                line.push_str(&format!(",{}", fmt_f64(cell.params.p)));
            }
            line.push_str(&format!(
                ",{},{},{},{},{}",
                c(&cell.up_to_down),
                c(&cell.down_to_up),
                s(&cell.up_to_down),
                s(&cell.down_to_up),
                flags
            ));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.grid,
            "solver": self.options,
            "cells": self.cells.len(),
        })
    }
}
