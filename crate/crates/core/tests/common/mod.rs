#![allow(dead_code)]

use pclattice::equilibria::fold_points;
use pclattice::lattice::{integrate, IntegrationSettings};
use pclattice::model::max_error_fraction;
use pclattice::{Branch, InputSignal, LatticeState, Method, ParamSet, Topology, TopologyKind};
use rand::Rng;

/// Maps unit-interval coordinates onto a bistable parameter set with all
/// three branches present.
pub fn params_from_unit(a: f64, b: f64, c: f64, d: f64) -> ParamSet {
    let mu = 5.0 + 35.0 * a;
    let p = 0.95 * max_error_fraction(mu) * b;
    let q = (1.0 - p) * c;
    let folds = fold_points(mu).unwrap();
    let span = folds.theta_sup_star - folds.theta_star;
    let theta = folds.theta_star + span * (0.02 + 0.96 * d);
    ParamSet::new(theta, mu, p, q).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R) -> ParamSet {
    params_from_unit(rng.gen(), rng.gen(), rng.gen(), rng.gen())
}

pub fn down_up(params: &ParamSet) -> (f64, f64) {
    let b = params.branches();
    (b.get(Branch::Down).unwrap(), b.get(Branch::Up).unwrap())
}

pub fn comparison_settings() -> IntegrationSettings {
    IntegrationSettings {
        dt: 0.01,
        t_end: 20.0,
        sample_every: 50,
        method: Method::Rk4,
        guard: 0,
    }
}

/// Result of integrating one ordered pair of initial data.
pub struct PairReport {
    /// Largest `v_j - w_j` over all samples; ordering holds when this is `<= 1e-8`.
    pub worst_violation: f64,
    /// Largest excursion outside `[x_d, x_u]` over both runs.
    pub worst_escape: f64,
}

/// Draws ordered initial data (and ordered constant inputs on semi-infinite
/// topologies) in `[x_d, x_u]`, integrates both and compares them samplewise.
pub fn ordered_pair<R: Rng>(rng: &mut R, kind: TopologyKind, layers: usize) -> PairReport {
    let params = random_params(rng);
    let (xd, xu) = down_up(&params);
    let topology = Topology::default_for(kind).with_layers(layers);
    let n = topology.len();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for _ in 0..n {
        let a = xd + (xu - xd) * rng.gen::<f64>();
        let b = xd + (xu - xd) * rng.gen::<f64>();
        lo.push(a.min(b));
        hi.push(a.max(b));
    }
    let (input_lo, input_hi) = if kind == TopologyKind::BiInfinite {
        (InputSignal::None, InputSignal::None)
    } else {
        let a = xd + (xu - xd) * rng.gen::<f64>();
        let b = xd + (xu - xd) * rng.gen::<f64>();
        (
            InputSignal::constant(a.min(b), &params).unwrap(),
            InputSignal::constant(a.max(b), &params).unwrap(),
        )
    };
    let first = topology.first_layer();
    let state = |values: Vec<f64>| LatticeState {
        t: 0.0,
        first_layer: first,
        values,
    };
    let settings = comparison_settings();
    let v = integrate(&state(lo), &topology, input_lo, &params, &settings).unwrap();
    let w = integrate(&state(hi), &topology, input_hi, &params, &settings).unwrap();
    let mut worst_violation = f64::NEG_INFINITY;
    let mut worst_escape = 0.0f64;
    for (a, b) in v.snapshots.iter().zip(&w.snapshots) {
        for (x, y) in a.values.iter().zip(&b.values) {
            worst_violation = worst_violation.max(x - y);
            for z in [x, y] {
                worst_escape = worst_escape.max(xd - z).max(z - xu);
            }
        }
    }
    PairReport {
        worst_violation,
        worst_escape,
    }
}

/// Runs non-increasing initial data running from `x_u` down to `x_d` on the
/// bi-infinite lattice and returns
/// the largest upward step `v_{j+1} - v_j` seen at any sample.
pub fn monotone_run<R: Rng>(rng: &mut R, layers: usize) -> f64 {
    let params = random_params(rng);
    let (xd, xu) = down_up(&params);
    let topology = Topology::bi_infinite(layers);
    let mut values: Vec<f64> = (0..topology.len())
        .map(|_| xd + (xu - xd) * rng.gen::<f64>())
        .collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let n = values.len();
    values[0] = xu;
    values[n - 1] = xd;
    let initial = LatticeState {
        t: 0.0,
        first_layer: topology.first_layer(),
        values,
    };
    let traj = integrate(&initial, &topology, InputSignal::None, &params, &comparison_settings()).unwrap();
    traj.snapshots
        .iter()
        .flat_map(|s| s.values.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Centre-layer value after integrating spatially uniform data `x0` on a
/// wide bi-infinite lattice; edge effects cannot reach the centre at
/// double precision over the short horizons used here.
pub fn homogeneous_run(params: &ParamSet, x0: f64, t_end: f64, dt: f64, method: Method) -> f64 {
    let topology = Topology::bi_infinite(100);
    let initial = LatticeState {
        t: 0.0,
        first_layer: topology.first_layer(),
        values: vec![x0; topology.len()],
    };
    let settings = IntegrationSettings {
        dt,
        t_end,
        sample_every: 1,
        method,
        guard: 0,
    };
    let traj = integrate(&initial, &topology, InputSignal::None, params, &settings).unwrap();
    let last = traj.last().unwrap();
    assert!((last.t - t_end).abs() < 1e-9);
    last.layer(0).unwrap()
}

/// Fine-step scalar RK4 for `x' = F_p(x)`, written independently of the
/// lattice stepper.
pub fn scalar_reference(params: &ParamSet, x0: f64, t_end: f64) -> f64 {
    let n = 200_000;
    let h = t_end / n as f64;
    let f = |x: f64| params.reaction(x);
    let mut x = x0;
    for _ in 0..n {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

/// Least-squares slope of `ln err` against `ln dt`.
pub fn loglog_slope(dts: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
