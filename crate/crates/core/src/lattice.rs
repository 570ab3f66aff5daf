//! Time integration of the lattice equations on truncated domains.
//!
//! All three topologies share one kernel: the stored layers are kept in
//! ascending index order and the missing neighbours at both ends are supplied
//! as ghost values.
//!
//! | topology   | stored layers | left ghost           | right ghost          |
//! |------------|---------------|----------------------|----------------------|
//! | BiInfinite | `-J..=J`      | initial left value   | initial right value  |
//! | BottomUp   | `1..=J`       | input `s0(t)`        | far-end closure      |
//! | TopDown    | `-J..=-1`     | far-end closure      | input `s0(t)`        |
//!
//! Dirichlet ghosts stay pinned to the values the initial state carries at
//! that edge, so a rest start pins the far end of a semi-infinite lattice to
//! `x_d` and a step start pins both ends of a bi-infinite one to `x_u`/`x_d`.

use serde::{Deserialize, Serialize};

use crate::equilibria::Branch;
use crate::error::{Error, Result};
use crate::model::{clamp_unit, ParamSet, ParamValues};

pub const MIN_LAYERS: usize = 8;
pub const DEFAULT_BI_INFINITE_LAYERS: usize = 200;
pub const DEFAULT_SEMI_INFINITE_LAYERS: usize = 300;
pub const DEFAULT_GUARD: usize = 10;
pub const DEFAULT_DT: f64 = 0.05;
pub const DEFAULT_SAMPLE_EVERY: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    BiInfinite,
    BottomUp,
    TopDown,
}

/// Rule for the ghost layer past a truncation edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Closure {
    /// Ghost pinned to the initial value at that edge.
    DirichletEquilibrium,
    /// Ghost `S^{-1}(v_edge)`, which cancels the feedback term on the last layer.
    InverseSigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    /// `J`: the number of layers on each side of the interface (bi-infinite)
    /// or the depth of a semi-infinite lattice.
    pub layers: usize,
    /// Far-end closure. Bi-infinite lattices only accept the Dirichlet rule.
    pub closure: Closure,
}

impl Topology {
    pub fn bi_infinite(layers: usize) -> Self {
        Self {
            kind: TopologyKind::BiInfinite,
            layers,
            closure: Closure::DirichletEquilibrium,
        }
    }

    pub fn bottom_up(layers: usize) -> Self {
        Self {
            kind: TopologyKind::BottomUp,
            layers,
            closure: Closure::InverseSigmoid,
        }
    }

    pub fn top_down(layers: usize) -> Self {
        Self {
            kind: TopologyKind::TopDown,
            layers,
            closure: Closure::DirichletEquilibrium,
        }
    }

    /// Default extent and closure for a topology kind.
    pub fn default_for(kind: TopologyKind) -> Self {
        match kind {
            TopologyKind::BiInfinite => Self::bi_infinite(DEFAULT_BI_INFINITE_LAYERS),
            TopologyKind::BottomUp => Self::bottom_up(DEFAULT_SEMI_INFINITE_LAYERS),
            TopologyKind::TopDown => Self::top_down(DEFAULT_SEMI_INFINITE_LAYERS),
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_closure(mut self, closure: Closure) -> Self {
        self.closure = closure;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < MIN_LAYERS {
            return Err(Error::InvalidTopology(format!(
                "need at least {MIN_LAYERS} layers, got {}",
                self.layers
            )));
        }
        if self.kind == TopologyKind::BiInfinite && self.closure != Closure::DirichletEquilibrium {
            return Err(Error::InvalidTopology(
                "bi-infinite lattices use Dirichlet ghosts at both ends".into(),
            ));
        }
        Ok(())
    }

    /// Number of stored layers.
    pub fn len(&self) -> usize {
        match self.kind {
            TopologyKind::BiInfinite => 2 * self.layers + 1,
            _ => self.layers,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the first stored layer.
    pub fn first_layer(&self) -> i64 {
        match self.kind {
            TopologyKind::BiInfinite | TopologyKind::TopDown => -(self.layers as i64),
            TopologyKind::BottomUp => 1,
        }
    }

    pub fn is_semi_infinite(&self) -> bool {
        self.kind != TopologyKind::BiInfinite
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Up state on the left (`j <= 0`), down state on the right.
    #[serde(rename = "u->d")]
    UpToDown,
    /// Down state on the left, up state on the right.
    #[serde(rename = "d->u")]
    DownToUp,
}

impl Direction {
    pub fn label(&self) -> &'static str {
        match self {
            Direction::UpToDown => "u->d",
            Direction::DownToUp => "d->u",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// Boundary drive `s0(t)` of a semi-infinite lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSignal {
    None,
    Constant {
        s0: f64,
    },
    /// `s0` on `[0, tau]`, then the rest value (`x_d`) afterwards.
    Flashed {
        s0: f64,
        tau: f64,
        rest: f64,
    },
}

impl InputSignal {
    pub fn constant(s0: f64, params: &ParamSet) -> Result<Self> {
        let xd = params.branches().require(Branch::Down)?;
        if !s0.is_finite() || s0 < xd {
            return Err(Error::InvalidInput(format!(
                "constant input needs s0 >= x_d = {xd}, got {s0}"
            )));
        }
        Ok(Self::Constant { s0 })
    }

    pub fn flashed(s0: f64, tau: f64, params: &ParamSet) -> Result<Self> {
        let xd = params.branches().require(Branch::Down)?;
        if !s0.is_finite() || s0 <= xd {
            return Err(Error::InvalidInput(format!(
                "flashed input needs s0 > x_d = {xd}, got {s0}"
            )));
        }
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "flash duration must be positive, got {tau}"
            )));
        }
        Ok(Self::Flashed { s0, tau, rest: xd })
    }

    /// `s0(t)`; the flash window is closed on the right.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        match *self {
            InputSignal::None => None,
            InputSignal::Constant { s0 } => Some(s0),
            InputSignal::Flashed { s0, tau, rest } => Some(if t <= tau { s0 } else { rest }),
        }
    }

    /// Value held on the open interval `(t0, t1)`, which never contains a jump.
    fn value_between(&self, t0: f64, t1: f64) -> Option<f64> {
        self.value_at(0.5 * (t0 + t1))
    }

    fn jump_time(&self) -> Option<f64> {
        match *self {
            InputSignal::Flashed { tau, .. } => Some(tau),
            _ => None,
        }
    }
}

/// Activity of every stored layer at time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub t: f64,
    pub first_layer: i64,
    pub values: Vec<f64>,
}

impl LatticeState {
    pub fn layer(&self, j: i64) -> Option<f64> {
        let k = j - self.first_layer;
        if k < 0 {
            return None;
        }
        self.values.get(k as usize).copied()
    }

    pub fn last_layer(&self) -> i64 {
        self.first_layer + self.values.len() as i64 - 1
    }

    pub fn layers(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.first_layer + k as i64, v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Half-and-half step data `h^{u->d}` or `h^{d->u}` with the interface
/// between layers 0 and 1.
pub fn make_step_initial(
    direction: Direction,
    params: &ParamSet,
    topology: &Topology,
) -> Result<LatticeState> {
    topology.validate()?;
    if topology.kind != TopologyKind::BiInfinite {
        return Err(Error::InvalidTopology(
            "step initial data is defined on the bi-infinite lattice".into(),
        ));
    }
    let branches = params.branches();
    let xd = branches.require(Branch::Down)?;
    branches.require(Branch::Middle)?;
    let xu = branches.require(Branch::Up)?;
    let (left, right) = match direction {
        Direction::UpToDown => (xu, xd),
        Direction::DownToUp => (xd, xu),
    };
    let first = topology.first_layer();
    let values = (0..topology.len())
        .map(|k| if first + k as i64 <= 0 { left } else { right })
        .collect();
    Ok(LatticeState {
        t: 0.0,
        first_layer: first,
        values,
    })
}

/// Every layer at the down state `x_d`.
pub fn make_rest_initial(params: &ParamSet, topology: &Topology) -> Result<LatticeState> {
    topology.validate()?;
    let xd = params.branches().require(Branch::Down)?;
    Ok(LatticeState {
        t: 0.0,
        first_layer: topology.first_layer(),
        values: vec![xd; topology.len()],
    })
}

/// Ghost value together with the sigmoid of it used by the kernel.
#[derive(Clone, Copy, Debug)]
struct Ghost {
    value: f64,
    sig: f64,
}

/// The lattice vector field with its boundary closures.
#[derive(Clone, Debug)]
pub struct LatticeSystem<'a> {
    params: &'a ParamSet,
    topology: Topology,
    input: InputSignal,
    left_anchor: f64,
    right_anchor: f64,
}

impl<'a> LatticeSystem<'a> {
    pub fn new(
        params: &'a ParamSet,
        topology: Topology,
        input: InputSignal,
        initial: &LatticeState,
    ) -> Result<Self> {
        topology.validate()?;
        if initial.values.len() != topology.len() {
            return Err(Error::InvalidTopology(format!(
                "initial state has {} layers, topology expects {}",
                initial.values.len(),
                topology.len()
            )));
        }
        if !initial.is_finite() {
            return Err(Error::InvalidSettings("initial state is not finite".into()));
        }
        match (topology.kind, input) {
            (TopologyKind::BiInfinite, InputSignal::None) => {}
            (TopologyKind::BiInfinite, _) => {
                return Err(Error::InvalidInput(
                    "the bi-infinite lattice takes no boundary input".into(),
                ))
            }
            (_, InputSignal::None) => {
                return Err(Error::InvalidInput(
                    "semi-infinite lattices need a boundary input".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            params,
            topology,
            input,
            left_anchor: initial.values[0],
            right_anchor: *initial.values.last().expect("validated non-empty"),
        })
    }

    pub fn params(&self) -> &ParamSet {
        self.params
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn input(&self) -> &InputSignal {
        &self.input
    }

    /// Values the Dirichlet ghosts are pinned to, `(left, right)`.
    pub fn anchors(&self) -> (f64, f64) {
        (self.left_anchor, self.right_anchor)
    }

    /// Ghost values `(v_left, v_right)` for the stored `values` at time `t`.
    pub fn ghost_values(&self, values: &[f64], t: f64) -> (f64, f64) {
        let (l, r) = self.ghosts(values, self.input.value_at(t));
        (l.value, r.value)
    }

    fn ghosts(&self, values: &[f64], boundary: Option<f64>) -> (Ghost, Ghost) {
        let s = self.params.sigmoid();
        let fixed = |value: f64| Ghost {
            value,
            sig: s.eval(value),
        };
        let closed = |edge: f64, anchor: f64| match self.topology.closure {
            Closure::DirichletEquilibrium => fixed(anchor),
            Closure::InverseSigmoid => Ghost {
                value: s.inverse_clamped(edge),
                sig: clamp_unit(edge),
            },
        };
        let first = values[0];
        let last = *values.last().expect("non-empty lattice");
        match self.topology.kind {
            TopologyKind::BiInfinite => (fixed(self.left_anchor), fixed(self.right_anchor)),
            TopologyKind::BottomUp => (
                fixed(boundary.unwrap_or(self.left_anchor)),
                closed(last, self.right_anchor),
            ),
            TopologyKind::TopDown => (
                closed(first, self.left_anchor),
                fixed(boundary.unwrap_or(self.right_anchor)),
            ),
        }
    }

    /// Writes `N(v_{j-1}, v_j, v_{j+1})` for every stored layer into `out`.
    fn eval_into(&self, values: &[f64], boundary: Option<f64>, scratch: &mut Scratch, out: &mut [f64]) {
        let n = values.len();
        let s = self.params.sigmoid();
        let a = self.params.coupling().drive();
        let p = self.params.p();
        let q = self.params.q();
        for (k, &v) in values.iter().enumerate() {
            let (sv, dsv) = s.eval_with_deriv(v);
            scratch.sig[k] = sv;
            scratch.dsig[k] = dsv;
        }
        let (left, right) = self.ghosts(values, boundary);
        for k in 0..n {
            let v = values[k];
            let (u, su) = if k == 0 {
                (left.value, left.sig)
            } else {
                (values[k - 1], scratch.sig[k - 1])
            };
            let sw = if k + 1 == n { right.sig } else { scratch.sig[k + 1] };
            out[k] = a * (su - v) + p * scratch.dsig[k] * (u - scratch.sig[k]) + q * (sw - v);
        }
    }

    /// Tridiagonal Jacobian `(lower, diag, upper)` of the vector field under a
    /// fixed boundary value. `lower[k]` couples row `k` to `k - 1` and
    /// `upper[k]` to `k + 1`; closure ghosts that follow the edge layer are
    /// folded into the diagonal.
    pub fn tridiagonal_jacobian(&self, values: &[f64], boundary: Option<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = values.len();
        let mu = self.params.mu();
        let (left, right) = self.ghosts(values, boundary);
        let ghost_slope = |v: f64| {
            let c = clamp_unit(v);
            if c != v {
                0.0
            } else {
                1.0 / (mu * v * (1.0 - v))
            }
        };
        let inverse_closure = self.topology.closure == Closure::InverseSigmoid;
        let (left_follows, right_follows) = match self.topology.kind {
            TopologyKind::BiInfinite => (false, false),
            TopologyKind::BottomUp => (false, inverse_closure),
            TopologyKind::TopDown => (inverse_closure, false),
        };
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for k in 0..n {
            let v = values[k];
            let u = if k == 0 { left.value } else { values[k - 1] };
            let w = if k + 1 == n { right.value } else { values[k + 1] };
            let (du, mut dv, dw) = self.params.rhs_jacobian(u, v, w);
            if k > 0 {
                lower[k] = du;
            } else if left_follows {
                dv += du * ghost_slope(v);
            }
            if k + 1 < n {
                upper[k] = dw;
            } else if right_follows {
                dv += dw * ghost_slope(v);
            }
            diag[k] = dv;
        }
        (lower, diag, upper)
    }

    /// Vector field under a fixed boundary value.
    pub fn rhs_with_boundary(&self, values: &[f64], boundary: Option<f64>) -> Vec<f64> {
        let mut scratch = Scratch::new(values.len());
        let mut out = vec![0.0; values.len()];
        self.eval_into(values, boundary, &mut scratch, &mut out);
        out
    }

    /// Vector field at time `t` (allocating convenience wrapper).
    pub fn rhs(&self, values: &[f64], t: f64) -> Vec<f64> {
        let mut scratch = Scratch::new(values.len());
        let mut out = vec![0.0; values.len()];
        self.eval_into(values, self.input.value_at(t), &mut scratch, &mut out);
        out
    }

    /// `max_j |N|` over the stored layers.
    pub fn residual(&self, values: &[f64], t: f64) -> f64 {
        self.rhs(values, t).iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

#[derive(Clone, Debug)]
struct Scratch {
    sig: Vec<f64>,
    dsig: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            sig: vec![0.0; n],
            dsig: vec![0.0; n],
        }
    }
}

/// Stage buffers for the explicit schemes.
#[derive(Clone, Debug)]
struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    scratch: Scratch,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            scratch: Scratch::new(n),
        }
    }

    /// Advances `values` from `t` by `h`; the input must be constant on `(t, t + h)`.
    fn advance(&mut self, system: &LatticeSystem<'_>, values: &mut [f64], t: f64, h: f64, method: Method) {
        let boundary = system.input.value_between(t, t + h);
        match method {
            Method::Euler => {
                system.eval_into(values, boundary, &mut self.scratch, &mut self.k1);
                for (v, k) in values.iter_mut().zip(&self.k1) {
                    *v += h * k;
                }
            }
            Method::Rk4 => {
                let half = 0.5 * h;
                system.eval_into(values, boundary, &mut self.scratch, &mut self.k1);
                for ((y, v), k) in self.tmp.iter_mut().zip(values.iter()).zip(&self.k1) {
                    *y = v + half * k;
                }
                system.eval_into(&self.tmp, boundary, &mut self.scratch, &mut self.k2);
                for ((y, v), k) in self.tmp.iter_mut().zip(values.iter()).zip(&self.k2) {
                    *y = v + half * k;
                }
                system.eval_into(&self.tmp, boundary, &mut self.scratch, &mut self.k3);
                for ((y, v), k) in self.tmp.iter_mut().zip(values.iter()).zip(&self.k3) {
                    *y = v + h * k;
                }
                system.eval_into(&self.tmp, boundary, &mut self.scratch, &mut self.k4);
                let sixth = h / 6.0;
                for (k, v) in values.iter_mut().enumerate() {
                    *v += sixth * (self.k1[k] + 2.0 * self.k2[k] + 2.0 * self.k3[k] + self.k4[k]);
                }
            }
        }
    }
}

/// Takes one step of size `dt`. A flash switch-off falling strictly inside
/// the step splits it in two so that no sub-step straddles the jump.
fn advance_step(
    work: &mut Workspace,
    system: &LatticeSystem<'_>,
    values: &mut [f64],
    t: f64,
    dt: f64,
    method: Method,
) {
    let t1 = t + dt;
    match system.input.jump_time() {
        Some(tau) if tau > t + 1e-12 * dt.max(1.0) && tau < t1 - 1e-12 * dt.max(1.0) => {
            work.advance(system, values, t, tau - t, method);
            work.advance(system, values, tau, t1 - tau, method);
        }
        _ => work.advance(system, values, t, dt, method),
    }
}

/// One explicit step of `dv_j/dt = N(v_{j-1}, v_j, v_{j+1})`.
pub fn step(
    system: &LatticeSystem<'_>,
    state: &LatticeState,
    dt: f64,
    method: Method,
) -> Result<LatticeState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidSettings(format!("dt must be positive, got {dt}")));
    }
    if state.values.len() != system.topology.len() {
        return Err(Error::InvalidTopology("state does not match the topology".into()));
    }
    let mut values = state.values.clone();
    let mut work = Workspace::new(values.len());
    advance_step(&mut work, system, &mut values, state.t, dt, method);
    let t = state.t + dt;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { t });
    }
    Ok(LatticeState {
        t,
        first_layer: state.first_layer,
        values,
    })
}

/// A running integration that owns its state. Time is `t0 + n dt` after
/// `n` steps, so sample times never accumulate rounding drift.
#[derive(Clone, Debug)]
pub struct Simulation<'a> {
    system: LatticeSystem<'a>,
    values: Vec<f64>,
    first_layer: i64,
    t0: f64,
    steps: u64,
    dt: f64,
    method: Method,
    work: Workspace,
}

impl<'a> Simulation<'a> {
    pub fn new(system: LatticeSystem<'a>, initial: LatticeState, dt: f64, method: Method) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidSettings(format!("dt must be positive, got {dt}")));
        }
        let n = initial.values.len();
        Ok(Self {
            system,
            values: initial.values,
            first_layer: initial.first_layer,
            t0: initial.t,
            steps: 0,
            dt,
            method,
            work: Workspace::new(n),
        })
    }

    pub fn system(&self) -> &LatticeSystem<'a> {
        &self.system
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_layer(&self) -> i64 {
        self.first_layer
    }

    pub fn state(&self) -> LatticeState {
        LatticeState {
            t: self.time(),
            first_layer: self.first_layer,
            values: self.values.clone(),
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let t = self.time();
        advance_step(&mut self.work, &self.system, &mut self.values, t, self.dt, self.method);
        self.steps += 1;
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: self.time() });
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    /// Current residual `max_j |N|`.
    pub fn residual(&self) -> f64 {
        self.system.residual(&self.values, self.time())
    }

    /// Slides the window of a bi-infinite lattice by `shift` layers (positive
    /// moves it right). Vacated layers take the anchor value of their edge.
    pub fn recenter(&mut self, shift: i64) {
        if shift == 0 || self.system.topology.kind != TopologyKind::BiInfinite {
            return;
        }
        let n = self.values.len();
        let magnitude = (shift.unsigned_abs() as usize).min(n);
        if shift > 0 {
            self.values.copy_within(magnitude.., 0);
            let fill = self.system.right_anchor;
            self.values[n - magnitude..].fill(fill);
        } else {
            self.values.copy_within(..n - magnitude, magnitude);
            let fill = self.system.left_anchor;
            self.values[..magnitude].fill(fill);
        }
        self.first_layer += shift;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSettings {
    pub dt: f64,
    pub t_end: f64,
    /// Steps between stored snapshots.
    pub sample_every: usize,
    pub method: Method,
    /// Guard buffer `B` in layers.
    pub guard: usize,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            t_end: 200.0,
            sample_every: DEFAULT_SAMPLE_EVERY,
            method: Method::Rk4,
            guard: DEFAULT_GUARD,
        }
    }
}

impl IntegrationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSettings(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidSettings(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidSettings("sample_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of whole steps that fit in `t_end`.
    pub fn total_steps(&self) -> u64 {
        (self.t_end / self.dt + 1e-9).floor() as u64
    }
}

/// Sampled time evolution plus the metadata needed to reproduce it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: ParamValues,
    pub topology: Topology,
    pub input: InputSignal,
    pub settings: IntegrationSettings,
    pub guard_triggered: bool,
    pub times: Vec<f64>,
    pub snapshots: Vec<LatticeState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&LatticeState> {
        self.snapshots.last()
    }
}

/// Midpoint between the down and up states, the default front level.
pub fn mid_level(params: &ParamSet) -> Option<f64> {
    let b = params.branches();
    Some(0.5 * (b.get(Branch::Down)? + b.get(Branch::Up)?))
}

/// True when a front has reached the last `guard` layers before a
/// truncation edge, i.e. some layer there has moved more than half the
/// `x_u - x_d` gap away from the edge's anchor value.
pub fn front_near_edge(system: &LatticeSystem<'_>, values: &[f64], guard: usize) -> bool {
    let b = system.params().branches();
    let (Some(xd), Some(xu)) = (b.get(Branch::Down), b.get(Branch::Up)) else {
        return false;
    };
    let tol = 0.5 * (xu - xd);
    let n = values.len();
    let guard = guard.min(n);
    let (left_anchor, right_anchor) = system.anchors();
    let left = || values[..guard].iter().any(|v| (v - left_anchor).abs() > tol);
    let right = || values[n - guard..].iter().any(|v| (v - right_anchor).abs() > tol);
    match system.topology().kind {
        TopologyKind::BiInfinite => left() || right(),
        TopologyKind::BottomUp => right(),
        TopologyKind::TopDown => left(),
    }
}

/// Integrates to `t_end`, storing a snapshot every `sample_every` steps
/// (the initial state included).
pub fn integrate(
    initial: &LatticeState,
    topology: &Topology,
    input: InputSignal,
    params: &ParamSet,
    settings: &IntegrationSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    let system = LatticeSystem::new(params, *topology, input, initial)?;
    let mut sim = Simulation::new(system, initial.clone(), settings.dt, settings.method)?;
    let total = settings.total_steps();
    let mut times = vec![initial.t];
    let mut snapshots = vec![initial.clone()];
    let mut guard_triggered = front_near_edge(sim.system(), sim.values(), settings.guard);
    while sim.steps() < total {
        sim.step()?;
        if sim.steps() % settings.sample_every as u64 == 0 {
            let state = sim.state();
            guard_triggered |= front_near_edge(sim.system(), &state.values, settings.guard);
            times.push(state.t);
            snapshots.push(state);
        }
    }
    Ok(Trajectory {
        params: params.values(),
        topology: *topology,
        input,
        settings: *settings,
        guard_triggered,
        times,
        snapshots,
    })
}
