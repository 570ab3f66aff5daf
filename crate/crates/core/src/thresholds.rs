//! Driven semi-infinite networks: stationary boundary profiles, outcome
//! classification under constant and flashed input, and the thresholds
//! `s0*` and `tau*`.
//!
//! Bottom-up and top-down networks share one code path. Profiles are read in
//! the outward frame `r_k`, `k = 1..=J`, where `k` is the distance from the
//! driven layer (`r_k = v_k` bottom-up, `r_k = v_{-k}` top-down). The
//! outward speed of an interface is then `c` bottom-up and `-c` top-down.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::equilibria::Branch;
use crate::error::{Error, Result};
use crate::export::{fmt_f64, fmt_opt};
use crate::lattice::{
    make_rest_initial, mid_level, Closure, Direction, InputSignal, IntegrationSettings, LatticeState,
    LatticeSystem, Simulation, Topology, TopologyKind, DEFAULT_SEMI_INFINITE_LAYERS,
};
use crate::model::{ParamSet, ParamValues};
use crate::parallel::ordered_map;
use crate::waves::{estimate_speed, fit_line, SpeedEstimate, SpeedOptions, DEFAULT_C_TOL};

pub const PROFILE_RESIDUAL_TOL: f64 = 1e-10;
pub const PROFILE_TAIL_TOL: f64 = 1e-6;
pub const CONVERGED_RESIDUAL: f64 = 1e-8;
pub const LIMIT_DISTANCE_TOL: f64 = 1e-6;
pub const SPEED_TIE_TOL: f64 = 2e-3;
pub const SYMMETRIC_THETA_TOL: f64 = 1e-3;
pub const DEFAULT_S0_MAX: f64 = 5.0;
pub const DEFAULT_S0_WIDTH: f64 = 1e-4;
pub const DEFAULT_TAU_MAX: f64 = 500.0;
pub const DEFAULT_TAU_WIDTH: f64 = 1e-3;

const RELAX_TIME: f64 = 400.0;
const RELAX_RESIDUAL: f64 = 1e-7;
const NEWTON_TARGET: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 60;
/// Convergence must persist this long before stagnation is declared, so a
/// pass near an unstable stationary state is not mistaken for the limit.
const STAGNATION_HOLD: f64 = 50.0;
/// Minimum observation time after the flash before interface speeds are fitted.
const TRAILING_WINDOW: f64 = 100.0;

/// Asymptotic state of a stationary boundary profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Asymptote {
    #[serde(rename = "d")]
    Down,
    #[serde(rename = "u")]
    Up,
}

impl Asymptote {
    pub fn branch(&self) -> Branch {
        match self {
            Asymptote::Down => Branch::Down,
            Asymptote::Up => Branch::Up,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub s0: f64,
    pub asymptote: Asymptote,
    pub topology: TopologyKind,
    pub first_layer: i64,
    /// Layer values in ascending layer order.
    pub values: Vec<f64>,
    pub residual: f64,
}

impl BoundaryProfile {
    /// Values ordered by distance from the driven layer.
    pub fn outward(&self) -> Vec<f64> {
        outward(self.topology, &self.values)
    }

    pub fn layer(&self, j: i64) -> Option<f64> {
        let k = j - self.first_layer;
        if k < 0 {
            return None;
        }
        self.values.get(k as usize).copied()
    }
}

fn check_semi_infinite(kind: TopologyKind) -> Result<()> {
    if kind == TopologyKind::BiInfinite {
        return Err(Error::InvalidTopology(
            "driven networks are bottom-up or top-down".into(),
        ));
    }
    Ok(())
}

fn outward(kind: TopologyKind, values: &[f64]) -> Vec<f64> {
    match kind {
        TopologyKind::TopDown => values.iter().rev().copied().collect(),
        _ => values.to_vec(),
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `lower[k] x[k-1] + diag[k] x[k] + upper[k] x[k+1] = rhs[k]`.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < 1e-300 {
        return None;
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for k in 1..n {
        pivot = diag[k] - lower[k] * c[k - 1];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return None;
        }
        c[k] = upper[k] / pivot;
        d[k] = (rhs[k] - lower[k] * d[k - 1]) / pivot;
    }
    for k in (0..n - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    Some(d)
}

/// Damped Newton iteration on `N = 0` for a fixed boundary value. Returns
/// the polished values and the final residual.
fn newton_polish(system: &LatticeSystem<'_>, start: &[f64], boundary: f64) -> Result<(Vec<f64>, f64)> {
    let mut x = start.to_vec();
    let mut f = system.rhs_with_boundary(&x, Some(boundary));
    let mut norm = sup_norm(&f);
    for _ in 0..NEWTON_MAX_ITER {
        if norm < NEWTON_TARGET {
            break;
        }
        let (lo, di, up) = system.tridiagonal_jacobian(&x, Some(boundary));
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        let delta = solve_tridiagonal(&lo, &di, &up, &neg)
            .ok_or_else(|| Error::NoProfile("singular Jacobian".into()))?;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + step * b).collect();
            let ft = system.rhs_with_boundary(&trial, Some(boundary));
            let nt = sup_norm(&ft);
            if nt.is_finite() && nt < norm {
                x = trial;
                f = ft;
                norm = nt;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm < PROFILE_RESIDUAL_TOL {
        Ok((x, norm))
    } else {
        Err(Error::NoProfile(format!("Newton stalled at residual {norm:e}")))
    }
}

/// Stationary solution with `x_0 = s0` and the far end held at the
/// declared asymptote, found by relaxation followed by damped Newton.
pub fn stationary_boundary_profile(
    s0: f64,
    params: &ParamSet,
    kind: TopologyKind,
    asymptote: Asymptote,
    layers: usize,
) -> Result<BoundaryProfile> {
    check_semi_infinite(kind)?;
    let target = params.branches().require(asymptote.branch())?;
    let input = InputSignal::constant(s0, params)?;
    let topology = Topology {
        kind,
        layers,
        closure: Closure::DirichletEquilibrium,
    };
    topology.validate()?;
    let initial = LatticeState {
        t: 0.0,
        first_layer: topology.first_layer(),
        values: vec![target; topology.len()],
    };
    let system = LatticeSystem::new(params, topology, input, &initial)?;
    let mut sim = Simulation::new(system.clone(), initial, crate::lattice::DEFAULT_DT, crate::lattice::Method::Rk4)?;
    while sim.time() < RELAX_TIME && sim.residual() > RELAX_RESIDUAL {
        sim.advance(20)?;
    }
    let (values, residual) = newton_polish(&system, sim.values(), s0)?;
    let tail = match kind {
        TopologyKind::BottomUp => *values.last().expect("non-empty"),
        _ => values[0],
    };
    if (tail - target).abs() > PROFILE_TAIL_TOL {
        return Err(Error::NoProfile(format!(
            "far end at {tail} instead of the {asymptote:?} state {target}"
        )));
    }
    Ok(BoundaryProfile {
        s0,
        asymptote,
        topology: kind,
        first_layer: topology.first_layer(),
        values,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    Stagnation,
    FrontPropagation,
    StackedPropagation,
    PulsePropagation,
    PropagationFailure,
}

impl OutcomeClass {
    pub fn propagates(&self) -> bool {
        matches!(
            self,
            OutcomeClass::FrontPropagation | OutcomeClass::StackedPropagation | OutcomeClass::PulsePropagation
        )
    }
}

/// Sampled positions of one interface in the outward frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterfaceTrack {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
}

impl InterfaceTrack {
    fn push(&mut self, t: f64, x: f64) {
        self.times.push(t);
        self.positions.push(x);
    }

    /// Slope and net travel over the final half of the samples taken at or
    /// after `since` and strictly inside `limit`.
    fn fit_tail(&self, since: f64, limit: f64) -> Option<(f64, f64)> {
        let idx: Vec<usize> = (0..self.times.len())
            .filter(|&k| self.times[k] >= since && self.positions[k] < limit)
            .collect();
        if idx.len() < 4 {
            return None;
        }
        let tail = &idx[idx.len() / 2..];
        let t: Vec<f64> = tail.iter().map(|&k| self.times[k]).collect();
        let x: Vec<f64> = tail.iter().map(|&k| self.positions[k]).collect();
        let fit = fit_line(&t, &x)?;
        Some((fit.slope, (x[x.len() - 1] - x[0]).abs()))
    }
}

/// Data behind a classification decision.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub t_final: f64,
    pub layers: usize,
    pub escalated: bool,
    /// `max |N|` at the decision.
    pub residual: f64,
    /// Largest activity in the distal probe window `3J/4..=J-B`.
    pub probe_max: Option<f64>,
    /// Sup distance to the candidate limit state.
    pub limit_distance: Option<f64>,
    /// Outward speed of the leading (outermost) interface.
    pub leading_speed: Option<f64>,
    /// Outward speed of the trailing interface left behind by a flash.
    pub trailing_speed: Option<f64>,
    /// Mean plateau width of a pulse, in layers.
    pub width: Option<f64>,
    pub leading: InterfaceTrack,
    pub trailing: InterfaceTrack,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub class: OutcomeClass,
    pub evidence: Evidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub layers: usize,
    /// `t_end` is the observation budget: the full run for constant input,
    /// the time after switch-off for flashed input.
    pub settings: IntegrationSettings,
    pub c_tol: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            layers: DEFAULT_SEMI_INFINITE_LAYERS,
            settings: IntegrationSettings {
                t_end: 2000.0,
                ..Default::default()
            },
            c_tol: DEFAULT_C_TOL,
        }
    }
}

impl ClassifyOptions {
    fn escalated(&self) -> Self {
        let mut next = *self;
        next.layers *= 2;
        next.settings.t_end *= 2.0;
        next
    }

    /// Budget stretched so a front at outward speed `speed` can cross the
    /// lattice twice.
    pub fn for_speed(&self, speed: f64) -> Self {
        let mut next = *self;
        if speed > 0.0 {
            next.settings.t_end = next.settings.t_end.max(2.0 * self.layers as f64 / speed);
        }
        next
    }
}

/// Crossings of the mid level in an outward profile whose driven layer holds `boundary`.
#[derive(Clone, Copy, Debug)]
struct Interfaces {
    leading: Option<f64>,
    trailing: Option<f64>,
    regions: usize,
}

fn interfaces(r: &[f64], boundary: f64, level: f64) -> Interfaces {
    let mut rising = Vec::new();
    let mut falling = Vec::new();
    let mut prev = boundary;
    for (i, &v) in r.iter().enumerate() {
        let k = i as f64;
        if prev < level && v >= level {
            rising.push(k + (level - prev) / (v - prev));
        } else if prev >= level && v < level {
            falling.push(k + (prev - level) / (prev - v));
        }
        prev = v;
    }
    let reaches_edge = r.last().is_some_and(|&v| v >= level);
    let leading = if reaches_edge {
        Some(r.len() as f64)
    } else {
        falling.last().copied()
    };
    Interfaces {
        leading,
        trailing: rising.first().copied(),
        regions: rising.len() + usize::from(boundary >= level),
    }
}

fn probe_bounds(layers: usize, guard: usize) -> (usize, usize) {
    let lo = (3 * layers).div_ceil(4).max(1);
    let hi = layers.saturating_sub(guard).max(lo);
    (lo, hi)
}

struct Driven<'a> {
    params: &'a ParamSet,
    kind: TopologyKind,
    opts: ClassifyOptions,
    level: f64,
    xd: f64,
    xm: f64,
}

impl<'a> Driven<'a> {
    fn new(params: &'a ParamSet, kind: TopologyKind, opts: ClassifyOptions) -> Result<Self> {
        check_semi_infinite(kind)?;
        let b = params.branches();
        let xd = b.require(Branch::Down)?;
        let xm = b.require(Branch::Middle)?;
        b.require(Branch::Up)?;
        Ok(Self {
            params,
            kind,
            opts,
            level: mid_level(params).expect("branches present"),
            xd,
            xm,
        })
    }

    fn topology(&self) -> Topology {
        Topology::default_for(self.kind).with_layers(self.opts.layers)
    }

    fn simulation(&self, input: InputSignal) -> Result<Simulation<'a>> {
        let topology = self.topology();
        let initial = make_rest_initial(self.params, &topology)?;
        let system = LatticeSystem::new(self.params, topology, input, &initial)?;
        Simulation::new(system, initial, self.opts.settings.dt, self.opts.settings.method)
    }

    fn probe_max(&self, r: &[f64]) -> f64 {
        let (lo, hi) = probe_bounds(r.len(), self.opts.settings.guard);
        r[lo - 1..hi].iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    fn evidence(&self, sim: &Simulation<'_>) -> Evidence {
        Evidence {
            t_final: sim.time(),
            layers: self.opts.layers,
            residual: sim.residual(),
            ..Default::default()
        }
    }

    fn constant(&self, s0: f64) -> Result<Option<Outcome>> {
        let input = InputSignal::constant(s0, self.params)?;
        let mut sim = self.simulation(input)?;
        let j = self.opts.layers;
        let guard = self.opts.settings.guard;
        let half = j as f64 / 2.0;
        let far = (j - guard.min(j)) as f64;
        let every = self.opts.settings.sample_every;
        let mut leading = InterfaceTrack::default();
        let mut limit: Option<Vec<f64>> = None;
        let mut settled_since: Option<f64> = None;
        loop {
            let t = sim.time();
            let r = outward(self.kind, sim.values());
            let itf = interfaces(&r, s0, self.level);
            if let Some(x) = itf.leading {
                leading.push(t, x);
            }
            let probe = self.probe_max(&r);
            let front = itf.leading.unwrap_or(0.0);
            if front >= half && probe > self.xm {
                let speed = leading.fit_tail(0.0, f64::INFINITY).map(|(c, _)| c).unwrap_or(0.0);
                if speed > 0.0 {
                    let mut ev = self.evidence(&sim);
                    ev.probe_max = Some(probe);
                    ev.leading_speed = Some(speed);
                    ev.leading = leading;
                    return Ok(Some(Outcome {
                        class: OutcomeClass::FrontPropagation,
                        evidence: ev,
                    }));
                }
            }
            if front >= far {
                // front at the guard without the probe agreeing
                return Ok(None);
            }
            let residual = sim.residual();
            if residual < CONVERGED_RESIDUAL && front < half && probe < self.xm {
                if limit.is_none() {
                    limit = newton_polish(sim.system(), sim.values(), s0).ok().map(|(v, _)| v);
                }
                let distance = limit.as_ref().map(|l| guarded_distance(self.kind, sim.values(), l, guard));
                match distance {
                    Some(d) if d < LIMIT_DISTANCE_TOL => {
                        let since = *settled_since.get_or_insert(t);
                        if t - since >= STAGNATION_HOLD {
                            let mut ev = self.evidence(&sim);
                            ev.residual = residual;
                            ev.probe_max = Some(probe);
                            ev.limit_distance = Some(d);
                            ev.leading = leading;
                            return Ok(Some(Outcome {
                                class: OutcomeClass::Stagnation,
                                evidence: ev,
                            }));
                        }
                    }
                    _ => settled_since = None,
                }
            } else {
                settled_since = None;
                if residual > 1e-6 {
                    limit = None;
                }
            }
            if t >= self.opts.settings.t_end {
                return Ok(None);
            }
            sim.advance(every)?;
        }
    }

    fn flashed(&self, tau: f64) -> Result<Option<Outcome>> {
        let xu = self.params.branches().require(Branch::Up)?;
        let input = InputSignal::flashed(xu, tau, self.params)?;
        let mut sim = self.simulation(input)?;
        let j = self.opts.layers;
        let guard = self.opts.settings.guard;
        let far = (j - guard.min(j)) as f64;
        let (probe_lo, _) = probe_bounds(j, guard);
        let t_end = tau + self.opts.settings.t_end;
        let every = self.opts.settings.sample_every;
        let mut leading = InterfaceTrack::default();
        let mut trailing = InterfaceTrack::default();
        let mut up_profile: Option<Result<Vec<f64>>> = None;
        let symmetric = (self.params.theta() - 0.5).abs() < SYMMETRIC_THETA_TOL;
        loop {
            let t = sim.time();
            let after = t > tau;
            let boundary = if after { self.xd } else { xu };
            let r = outward(self.kind, sim.values());
            let itf = interfaces(&r, boundary, self.level);
            if let Some(x) = itf.leading {
                leading.push(t, x);
            }
            if after {
                if let Some(x) = itf.trailing {
                    trailing.push(t, x);
                }
                if itf.regions == 0 {
                    let distance = r.iter().fold(0.0f64, |m, v| m.max((v - self.xd).abs()));
                    let residual = sim.residual();
                    if distance < LIMIT_DISTANCE_TOL && residual < CONVERGED_RESIDUAL {
                        let mut ev = self.evidence(&sim);
                        ev.limit_distance = Some(distance);
                        ev.leading = leading;
                        ev.trailing = trailing;
                        return Ok(Some(Outcome {
                            class: OutcomeClass::PropagationFailure,
                            evidence: ev,
                        }));
                    }
                } else if itf.regions == 1
                    && itf.leading.is_some_and(|x| x >= probe_lo as f64)
                    && t - tau >= TRAILING_WINDOW
                {
                    let lead = leading.fit_tail(0.0, far);
                    let trail = trailing.fit_tail(tau, far);
                    if let (Some((l, _)), Some((tr, trail_disp))) = (lead, trail) {
                        let mut ev = Evidence {
                            leading_speed: Some(l),
                            trailing_speed: Some(tr),
                            ..self.evidence(&sim)
                        };
                        if tr.abs() < self.opts.c_tol && trail_disp < 1.0 {
                            let profile = up_profile.get_or_insert_with(|| {
                                stationary_boundary_profile(self.xd, self.params, self.kind, Asymptote::Up, j)
                                    .map(|p| p.outward())
                            });
                            if let Ok(profile) = profile {
                                let window = (j / 4).max(1);
                                let d = r[..window]
                                    .iter()
                                    .zip(&profile[..window])
                                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                                if d < LIMIT_DISTANCE_TOL {
                                    ev.limit_distance = Some(d);
                                    ev.leading = leading;
                                    ev.trailing = trailing;
                                    return Ok(Some(Outcome {
                                        class: OutcomeClass::FrontPropagation,
                                        evidence: ev,
                                    }));
                                }
                            }
                        } else if tr > 0.0 && (l - tr).abs() <= SPEED_TIE_TOL {
                            if !symmetric {
                                return Ok(None);
                            }
                            ev.width = pulse_width(&leading, &trailing, tau, far);
                            ev.leading = leading;
                            ev.trailing = trailing;
                            return Ok(Some(Outcome {
                                class: OutcomeClass::PulsePropagation,
                                evidence: ev,
                            }));
                        } else if tr > 0.0 && l > tr {
                            ev.leading = leading;
                            ev.trailing = trailing;
                            return Ok(Some(Outcome {
                                class: OutcomeClass::StackedPropagation,
                                evidence: ev,
                            }));
                        }
                    }
                }
            }
            if t >= t_end {
                return Ok(None);
            }
            sim.advance(every)?;
        }
    }
}

fn guarded_distance(kind: TopologyKind, a: &[f64], b: &[f64], guard: usize) -> f64 {
    let ra = outward(kind, a);
    let rb = outward(kind, b);
    let n = ra.len().saturating_sub(guard).max(1);
    ra[..n]
        .iter()
        .zip(&rb[..n])
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn pulse_width(leading: &InterfaceTrack, trailing: &InterfaceTrack, tau: f64, far: f64) -> Option<f64> {
    let mut widths = Vec::new();
    for (k, &t) in trailing.times.iter().enumerate() {
        if t < tau {
            continue;
        }
        if let Ok(i) = leading.times.binary_search_by(|s| s.total_cmp(&t)) {
            if leading.positions[i] < far {
                widths.push(leading.positions[i] - trailing.positions[k]);
            }
        }
    }
    let tail = &widths[widths.len() / 2..];
    if tail.is_empty() {
        return None;
    }
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

fn run_with_escalation<F>(opts: &ClassifyOptions, what: &str, mut run: F) -> Result<Outcome>
where
    F: FnMut(&ClassifyOptions) -> Result<Option<Outcome>>,
{
    if let Some(outcome) = run(opts)? {
        return Ok(outcome);
    }
    let bigger = opts.escalated();
    if let Some(mut outcome) = run(&bigger)? {
        outcome.evidence.escalated = true;
        return Ok(outcome);
    }
    Err(Error::Inconclusive(format!(
        "{what}: undecided on J={} within t={}",
        bigger.layers, bigger.settings.t_end
    )))
}

/// Stagnation or propagation under a constant drive `s0` from rest.
pub fn classify_constant_input(
    s0: f64,
    params: &ParamSet,
    kind: TopologyKind,
    opts: &ClassifyOptions,
) -> Result<Outcome> {
    Driven::new(params, kind, *opts)?;
    run_with_escalation(opts, "constant input", |o| Driven::new(params, kind, *o)?.constant(s0))
}

/// Outcome of a flash at the up state lasting `tau`. When the up state is
/// itself below the constant-input threshold the result is stagnation.
pub fn classify_flashed(tau: f64, params: &ParamSet, kind: TopologyKind, opts: &ClassifyOptions) -> Result<Outcome> {
    let xu = params.branches().require(Branch::Up)?;
    let constant = classify_constant_input(xu, params, kind, opts)?;
    if !constant.class.propagates() {
        let mut evidence = constant.evidence;
        evidence.note = "the up state is below the constant-input threshold".into();
        return Ok(Outcome {
            class: OutcomeClass::Stagnation,
            evidence,
        });
    }
    classify_flash_run(tau, params, kind, opts)
}

fn classify_flash_run(tau: f64, params: &ParamSet, kind: TopologyKind, opts: &ClassifyOptions) -> Result<Outcome> {
    Driven::new(params, kind, *opts)?;
    run_with_escalation(opts, "flashed input", |o| Driven::new(params, kind, *o)?.flashed(tau))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marker {
    Finite,
    AboveCap,
    NotApplicable,
}

impl Marker {
    pub fn label(&self) -> &'static str {
        match self {
            Marker::Finite => "finite",
            Marker::AboveCap => "above-cap",
            Marker::NotApplicable => "not-applicable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: Option<f64>,
    pub marker: Marker,
    /// Largest tested value without propagation.
    pub lower: Option<f64>,
    /// Smallest tested value with propagation.
    pub upper: Option<f64>,
    pub evaluations: usize,
    pub c_ud: Option<f64>,
    pub c_du: Option<f64>,
}

impl Threshold {
    fn marker_only(marker: Marker, c_ud: Option<f64>, c_du: Option<f64>) -> Self {
        Self {
            value: None,
            marker,
            lower: None,
            upper: None,
            evaluations: 0,
            c_ud,
            c_du,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOptions {
    pub classify: ClassifyOptions,
    pub speed: SpeedOptions,
    pub s0_max: f64,
    pub s0_width: f64,
    pub tau_max: f64,
    pub tau_width: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        Self {
            classify: ClassifyOptions::default(),
            speed: SpeedOptions::default(),
            s0_max: DEFAULT_S0_MAX,
            s0_width: DEFAULT_S0_WIDTH,
            tau_max: DEFAULT_TAU_MAX,
            tau_width: DEFAULT_TAU_WIDTH,
        }
    }
}

/// Outward speed of the interface that invades the network from the drive.
fn invading_speed(kind: TopologyKind, ud: &SpeedEstimate, du: &SpeedEstimate) -> f64 {
    match kind {
        TopologyKind::TopDown => {
            if du.pinned {
                0.0
            } else {
                -du.c
            }
        }
        _ => {
            if ud.pinned {
                0.0
            } else {
                ud.c
            }
        }
    }
}

fn bisect<F>(mut lo: f64, mut hi: f64, width: f64, mut propagates: F) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut count = 0;
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        count += 1;
        if propagates(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo, hi, count))
}

/// Sharp amplitude threshold between stagnation and propagation.
pub fn find_s0_star(params: &ParamSet, kind: TopologyKind, opts: &ThresholdOptions) -> Result<Threshold> {
    check_semi_infinite(kind)?;
    let xm = params.branches().require(Branch::Middle)?;
    let ud = estimate_speed(params, Direction::UpToDown, &opts.speed)?;
    let du = estimate_speed(params, Direction::DownToUp, &opts.speed)?;
    let speed = invading_speed(kind, &ud, &du);
    if speed <= 0.0 {
        return Ok(Threshold::marker_only(Marker::AboveCap, Some(ud.c), Some(du.c)));
    }
    let classify = opts.classify.for_speed(speed);
    let propagates = |s0: f64| -> Result<bool> {
        Ok(classify_constant_input(s0, params, kind, &classify)?.class.propagates())
    };
    if !propagates(opts.s0_max)? {
        let mut t = Threshold::marker_only(Marker::AboveCap, Some(ud.c), Some(du.c));
        t.lower = Some(opts.s0_max);
        t.evaluations = 1;
        return Ok(t);
    }
    let (lo, hi, count) = bisect(xm, opts.s0_max, opts.s0_width, propagates)?;
    Ok(Threshold {
        value: Some(0.5 * (lo + hi)),
        marker: Marker::Finite,
        lower: Some(lo),
        upper: Some(hi),
        evaluations: count + 1,
        c_ud: Some(ud.c),
        c_du: Some(du.c),
    })
}

/// Whether the speed-sign conditions for a flash threshold hold.
pub fn tau_preconditions(kind: TopologyKind, ud: &SpeedEstimate, du: &SpeedEstimate) -> bool {
    let (cud, cdu) = (
        if ud.pinned { 0.0 } else { ud.c },
        if du.pinned { 0.0 } else { du.c },
    );
    match kind {
        TopologyKind::TopDown => cdu < 0.0 && cdu < cud,
        _ => cud > 0.0 && cdu < cud,
    }
}

/// Minimal flash duration at the up state that produces propagation.
pub fn find_tau_star(params: &ParamSet, kind: TopologyKind, opts: &ThresholdOptions) -> Result<Threshold> {
    check_semi_infinite(kind)?;
    let xu = params.branches().require(Branch::Up)?;
    let ud = estimate_speed(params, Direction::UpToDown, &opts.speed)?;
    let du = estimate_speed(params, Direction::DownToUp, &opts.speed)?;
    let (cud, cdu) = (Some(ud.c), Some(du.c));
    if !tau_preconditions(kind, &ud, &du) {
        return Ok(Threshold::marker_only(Marker::NotApplicable, cud, cdu));
    }
    let classify = opts.classify.for_speed(invading_speed(kind, &ud, &du));
    if !classify_constant_input(xu, params, kind, &classify)?.class.propagates() {
        return Ok(Threshold::marker_only(Marker::AboveCap, cud, cdu));
    }
    let mut evaluations = 0;
    let mut propagates = |tau: f64| -> Result<bool> {
        evaluations += 1;
        Ok(classify_flash_run(tau, params, kind, &classify)?.class.propagates())
    };
    if !propagates(opts.tau_max)? {
        let mut t = Threshold::marker_only(Marker::AboveCap, cud, cdu);
        t.lower = Some(opts.tau_max);
        t.evaluations = 1;
        return Ok(t);
    }
    let mut lo = 0.0;
    let mut hi = 1.0f64.min(opts.tau_max);
    while hi < opts.tau_max && !propagates(hi)? {
        lo = hi;
        hi = (2.0 * hi).min(opts.tau_max);
    }
    let (lo, hi, _) = bisect(lo, hi, opts.tau_width, &mut propagates)?;
    Ok(Threshold {
        value: Some(0.5 * (lo + hi)),
        marker: Marker::Finite,
        lower: Some(lo),
        upper: Some(hi),
        evaluations,
        c_ud: cud,
        c_du: cdu,
    })
}

/// One `(q, theta)` cell of a threshold curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCell {
    pub params: ParamValues,
    pub threshold: Option<Threshold>,
    pub error: Option<String>,
}

impl ThresholdCell {
    fn marker_label(&self) -> &'static str {
        match &self.threshold {
            Some(t) => t.marker.label(),
            None => "inconclusive",
        }
    }

    fn value(&self) -> Option<f64> {
        self.threshold.as_ref().and_then(|t| t.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdKind {
    S0,
    Tau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub kind: ThresholdKind,
    pub topology: TopologyKind,
    pub options: ThresholdOptions,
    pub cells: Vec<ThresholdCell>,
}

/// Thresholds over a list of parameter points, in input order.
pub fn threshold_curve(
    points: &[ParamValues],
    kind: ThresholdKind,
    topology: TopologyKind,
    opts: &ThresholdOptions,
    jobs: Option<usize>,
) -> Result<ThresholdCurve> {
    for p in points {
        ParamSet::from_values(*p)?;
    }
    let cells = ordered_map(points, jobs, |&values| {
        let result = ParamSet::from_values(values).and_then(|set| match kind {
            ThresholdKind::S0 => find_s0_star(&set, topology, opts),
            ThresholdKind::Tau => find_tau_star(&set, topology, opts),
        });
        match result {
            Ok(t) => ThresholdCell {
                params: values,
                threshold: Some(t),
                error: None,
            },
            Err(e) => ThresholdCell {
                params: values,
                threshold: None,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(ThresholdCurve {
        kind,
        topology,
        options: *opts,
        cells,
    })
}

impl ThresholdCurve {
    /// `q,theta,s0_star,marker` or `theta,q,tau_star,marker`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match self.kind {
            ThresholdKind::S0 => writeln!(out, "q,theta,s0_star,marker")?,
            ThresholdKind::Tau => writeln!(out, "theta,q,tau_star,marker")?,
        }
        for cell in &self.cells {
            let (a, b) = match self.kind {
                ThresholdKind::S0 => (cell.params.q, cell.params.theta),
                ThresholdKind::Tau => (cell.params.theta, cell.params.q),
            };
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(a),
                fmt_f64(b),
                fmt_opt(cell.value()),
                cell.marker_label()
            )?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "threshold": self.kind,
            "topology": self.topology,
            "solver": self.options,
            "points": self.cells.iter().map(|c| c.params).collect::<Vec<_>>(),
            "errors": self.cells.iter().filter_map(|c| c.error.clone()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointLabel {
    BothStagnate,
    BothPropagate,
    BottomUpOnly,
    TopDownOnly,
    Inconclusive,
}

impl JointLabel {
    pub fn label(&self) -> &'static str {
        match self {
            JointLabel::BothStagnate => "both-stagnate",
            JointLabel::BothPropagate => "both-propagate",
            JointLabel::BottomUpOnly => "bottom-up-only",
            JointLabel::TopDownOnly => "top-down-only",
            JointLabel::Inconclusive => "inconclusive",
        }
    }

    fn from_thresholds(s0: f64, bu: &ThresholdCell, td: &ThresholdCell) -> Self {
        let side = |cell: &ThresholdCell| match &cell.threshold {
            None => None,
            Some(t) => Some(t.value.is_some_and(|v| s0 > v)),
        };
        match (side(bu), side(td)) {
            (Some(true), Some(true)) => JointLabel::BothPropagate,
            (Some(true), Some(false)) => JointLabel::BottomUpOnly,
            (Some(false), Some(true)) => JointLabel::TopDownOnly,
            (Some(false), Some(false)) => JointLabel::BothStagnate,
            _ => JointLabel::Inconclusive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedCell {
    pub q: f64,
    pub s0: f64,
    pub label: JointLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedMap {
    pub theta: f64,
    pub mu: f64,
    pub p: f64,
    pub qs: Vec<f64>,
    pub s0_levels: Vec<f64>,
    pub bottom_up: Vec<ThresholdCell>,
    pub top_down: Vec<ThresholdCell>,
    pub cells: Vec<CombinedCell>,
}

/// Joint bottom-up / top-down regime for every `(q, s0)` pair. Thresholds
/// are computed once per `q` and topology.
pub fn combined_regime_map(
    base: ParamValues,
    qs: &[f64],
    s0_levels: &[f64],
    opts: &ThresholdOptions,
    jobs: Option<usize>,
) -> Result<CombinedMap> {
    let points: Vec<ParamValues> = qs.iter().map(|&q| ParamValues { q, ..base }).collect();
    let bu = threshold_curve(&points, ThresholdKind::S0, TopologyKind::BottomUp, opts, jobs)?;
    let td = threshold_curve(&points, ThresholdKind::S0, TopologyKind::TopDown, opts, jobs)?;
    let mut cells = Vec::with_capacity(qs.len() * s0_levels.len());
    for (i, &q) in qs.iter().enumerate() {
        for &s0 in s0_levels {
            cells.push(CombinedCell {
                q,
                s0,
                label: JointLabel::from_thresholds(s0, &bu.cells[i], &td.cells[i]),
            });
        }
    }
    Ok(CombinedMap {
        theta: base.theta,
        mu: base.mu,
        p: base.p,
        qs: qs.to_vec(),
        s0_levels: s0_levels.to_vec(),
        bottom_up: bu.cells,
        top_down: td.cells,
        cells,
    })
}

impl CombinedMap {
    /// `q,s0,s0_star_bottom_up,s0_star_top_down,label`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "q,s0,s0_star_bottom_up,s0_star_top_down,label")?;
        let per_q = self.s0_levels.len();
        for (k, cell) in self.cells.iter().enumerate() {
            let i = k / per_q.max(1);
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(cell.q),
                fmt_f64(cell.s0),
                fmt_opt(self.bottom_up[i].value()),
                fmt_opt(self.top_down[i].value()),
                cell.label.label()
            )?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "theta": self.theta,
            "mu": self.mu,
            "p": self.p,
            "qs": self.qs,
            "s0_levels": self.s0_levels,
        })
    }
}
