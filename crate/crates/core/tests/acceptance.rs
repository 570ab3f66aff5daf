//! Acceptance run: one line per criterion, non-zero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use pclattice::equilibria::{classify_stability, fold_points, max_growth, Stability};
use pclattice::export::write_trajectory_csv;
use pclattice::lattice::{integrate, make_step_initial, IntegrationSettings};
use pclattice::thresholds::{
    classify_constant_input, classify_flashed, find_s0_star, find_tau_star, Marker, OutcomeClass,
    Threshold, ThresholdOptions,
};
use pclattice::waves::{estimate_speed, sign_map, SignClass, SignMapGrid, SpeedEstimate, SpeedOptions};
use pclattice::{Branch, Direction, InputSignal, Method, ParamSet, Topology, TopologyKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MU: f64 = 16.0;
const P: f64 = 0.1;
const C_TOL: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn params(theta: f64, q: f64) -> ParamSet {
    ParamSet::new(theta, MU, P, q).unwrap()
}

fn speed(theta: f64, q: f64, direction: Direction) -> SpeedEstimate {
    estimate_speed(&params(theta, q), direction, &SpeedOptions::default()).unwrap()
}

fn f(x: f64, mu: f64) -> f64 {
    x + ((1.0 - x) / x).ln() / mu
}

fn criterion_1() -> Verdict {
    let folds = fold_points(16.0).unwrap();
    let x_star = 0.5 - 3f64.sqrt() / 4.0;
    let x_sup = 0.5 + 3f64.sqrt() / 4.0;
    let ok_x = (folds.x_star - x_star).abs() < 1e-12;
    let ok_lo = (folds.theta_star - f(x_star, 16.0)).abs() < 1e-9 && (folds.theta_star - 0.231607).abs() < 5e-7;
    let ok_hi =
        (folds.theta_sup_star - f(x_sup, 16.0)).abs() < 1e-9 && (folds.theta_sup_star - 0.768393).abs() < 5e-7;
    Verdict::new(
        ok_x && ok_lo && ok_hi,
        format!(
            "x_* = {:.15}, theta_* = {:.9}, theta^* = {:.9}",
            folds.x_star, folds.theta_star, folds.theta_sup_star
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = Vec::new();
    for k in 0..100 {
        let set = random_params(&mut rng);
        let s = set.sigmoid();
        let b = set.branches();
        let xs: Vec<f64> = [Branch::Down, Branch::Middle, Branch::Up]
            .iter()
            .map(|&br| b.get(br).unwrap())
            .collect();
        let residual_ok = xs.iter().all(|&x| (x - s.eval(x)).abs() < 1e-12);
        let order_ok = xs[0] < xs[1] && xs[1] < xs[2];
        let pattern = [Branch::Down, Branch::Middle, Branch::Up].map(|br| classify_stability(br, &set).unwrap());
        let pattern_ok = pattern == [Stability::Stable, Stability::Unstable, Stability::Stable];
        let argmax_ok = xs.iter().all(|&x| max_growth(x, &set).unwrap().0 == 0.0);
        if !(residual_ok && order_ok && pattern_ok && argmax_ok) {
            bad.push(k);
        }
    }
    Verdict::new(bad.is_empty(), format!("100 random parameter sets, failing samples {bad:?}"))
}

fn criterion_3() -> Verdict {
    let down = speed(0.5, 0.6, Direction::UpToDown);
    let up = speed(0.5, 0.4, Direction::UpToDown);
    let mid_ud = speed(0.5, 0.5, Direction::UpToDown);
    let mid_du = speed(0.5, 0.5, Direction::DownToUp);
    let pass = down.c < -C_TOL && up.c > C_TOL && mid_ud.pinned && mid_du.pinned;
    Verdict::new(
        pass,
        format!(
            "c_ud(q=0.6) = {:.6}, c_ud(q=0.4) = {:.6}, q=0.5: c_ud = {:.6} pinned {}, c_du = {:.6} pinned {}",
            down.c, up.c, mid_ud.c, mid_ud.pinned, mid_du.c, mid_du.pinned
        ),
    )
}

fn criterion_4() -> Verdict {
    let thetas = [0.3, 0.4, 0.5, 0.6, 0.7];
    let qs = [0.2, 0.5, 0.8];
    let mut worst = 0.0f64;
    for &q in &qs {
        for &theta in &thetas {
            let ud = speed(theta, q, Direction::UpToDown);
            let du = speed(1.0 - theta, q, Direction::DownToUp);
            worst = worst.max((ud.c - du.c).abs());
        }
    }
    let mut worst_half = 0.0f64;
    for &q in &qs {
        let ud = speed(0.5, q, Direction::UpToDown);
        let du = speed(0.5, q, Direction::DownToUp);
        worst_half = worst_half.max((ud.c - du.c).abs());
    }
    Verdict::new(
        worst < 2e-3 && worst_half < 2e-3,
        format!("max |c_ud(theta) - c_du(1-theta)| = {worst:.3e}, max gap at theta=0.5 = {worst_half:.3e}"),
    )
}

fn criterion_5() -> Verdict {
    let grid = SignMapGrid {
        mu: MU,
        thetas: vec![0.3, 0.4, 0.5, 0.6, 0.7],
        qs: vec![0.1, 0.3, 0.52, 0.7, 0.9],
        ps: vec![P],
    };
    let map = sign_map(&grid, &[Direction::UpToDown, Direction::DownToUp], &SpeedOptions::default(), None).unwrap();
    let signs = |c: &pclattice::waves::SignCell| {
        (
            c.up_to_down.as_ref().unwrap().sign,
            c.down_to_up.as_ref().unwrap().sign,
        )
    };
    let row = |q: f64| map.cells.iter().filter(move |c| c.params.q == q);
    let low_ok = row(0.1).all(|c| signs(c) == (SignClass::Positive, SignClass::Positive));
    let high_ok = row(0.9).all(|c| signs(c) == (SignClass::Negative, SignClass::Negative));
    let pinned: Vec<(f64, f64)> = map
        .cells
        .iter()
        .filter(|c| (c.params.q - 0.5).abs() <= 0.05 && (c.params.theta - 0.5).abs() <= 0.1)
        .filter(|c| signs(c) == (SignClass::Pinned, SignClass::Pinned))
        .map(|c| (c.params.q, c.params.theta))
        .collect();
    Verdict::new(
        low_ok && high_ok && !pinned.is_empty(),
        format!("q=0.1 row (+,+): {low_ok}, q=0.9 row (-,-): {high_ok}, pinned cells near (0.5,0.5): {pinned:?}"),
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = f64::NEG_INFINITY;
    let mut escape = 0.0f64;
    for kind in [TopologyKind::BiInfinite, TopologyKind::BottomUp, TopologyKind::TopDown] {
        for _ in 0..50 {
            let r = ordered_pair(&mut rng, kind, 30);
            worst = worst.max(r.worst_violation);
            escape = escape.max(r.worst_escape);
        }
    }
    let rise = (0..50).map(|_| monotone_run(&mut rng, 30)).fold(f64::NEG_INFINITY, f64::max);
    Verdict::new(
        worst <= 1e-8 && escape <= 1e-8 && rise <= 1e-8,
        format!("max ordering violation {worst:.3e}, max escape from [x_d, x_u] {escape:.3e}, max monotonicity defect {rise:.3e}"),
    )
}

fn as_level(t: &Threshold) -> f64 {
    match t.marker {
        Marker::Finite => t.value.unwrap(),
        _ => f64::INFINITY,
    }
}

/// Shared body of the threshold criterion for either topology. `direction`
/// names the front whose sign governs invasion from the drive.
fn threshold_dichotomy(kind: TopologyKind, base_q: f64, ladder: &[f64], direction: Direction) -> Verdict {
    let opts = ThresholdOptions::default();
    let set = params(0.35, base_q);
    let xm = set.branches().get(Branch::Middle).unwrap();
    let star = find_s0_star(&set, kind, &opts).unwrap();
    let mut notes = Vec::new();
    let bracket_ok = match star.value {
        Some(s) if s > xm && s < opts.s0_max => {
            let c = speed(0.35, base_q, direction).c.abs();
            let mut check = opts.classify.for_speed(c);
            check.settings.t_end *= 2.0;
            let below = classify_constant_input(s - 2e-4, &set, kind, &check).map(|o| o.class);
            let above = classify_constant_input(s + 2e-4, &set, kind, &check).map(|o| o.class);
            notes.push(format!("s0* = {s:.5} (x_m = {xm:.5}), below -> {below:?}, above -> {above:?}"));
            matches!(below, Ok(OutcomeClass::Stagnation)) && matches!(above, Ok(OutcomeClass::FrontPropagation))
        }
        _ => {
            notes.push(format!("s0* = {:?} {:?}", star.value, star.marker));
            false
        }
    };

    let mut levels = Vec::new();
    let mut cap_before_zero = false;
    for &q in ladder {
        let t = find_s0_star(&params(0.35, q), kind, &opts).unwrap();
        let sign = speed(0.35, q, direction).sign();
        let moving = match kind {
            TopologyKind::TopDown => sign == SignClass::Negative,
            _ => sign == SignClass::Positive,
        };
        if t.marker == Marker::AboveCap && moving {
            cap_before_zero = true;
        }
        notes.push(format!("q={q}: {} {} (speed sign {})", t.value.map_or("-".into(), |v| format!("{v:.4}")), t.marker.label(), sign.symbol()));
        levels.push(as_level(&t));
    }
    let monotone = levels.windows(2).all(|w| w[1] >= w[0]);
    notes.push(format!("non-decreasing {monotone}, above-cap while still invading {cap_before_zero}"));
    Verdict::new(bracket_ok && monotone && cap_before_zero, notes.join("; "))
}

fn criterion_7() -> Verdict {
    threshold_dichotomy(TopologyKind::BottomUp, 0.2, &[0.2, 0.5, 0.65, 0.662], Direction::UpToDown)
}

/// Flash outcomes for one topology, with cases chosen from a computed sign map.
fn flashed_cases(kind: TopologyKind, pulse_q: f64) -> Verdict {
    let grid = SignMapGrid {
        mu: MU,
        thetas: vec![0.3, 0.5, 0.7],
        qs: vec![0.1, 0.5, 0.9],
        ps: vec![P],
    };
    let map = sign_map(&grid, &[Direction::UpToDown, Direction::DownToUp], &SpeedOptions::default(), None).unwrap();
    // Outward speeds of the invading (d->u behind the drive) and receding
    // interfaces in the frame of the topology.
    let outward = |c: &pclattice::waves::SignCell| {
        let ud = c.up_to_down.as_ref().unwrap();
        let du = c.down_to_up.as_ref().unwrap();
        let moving = |r: &pclattice::waves::DirectionResult| {
            matches!(r.sign, SignClass::Positive | SignClass::Negative)
        };
        if !moving(ud) || !moving(du) {
            return None;
        }
        let (ud, du) = (ud.c.unwrap(), du.c.unwrap());
        Some(match kind {
            TopologyKind::TopDown => (-du, -ud),
            _ => (ud, du),
        })
    };
    let pick = |pred: &dyn Fn(f64, f64) -> bool| {
        map.cells
            .iter()
            .filter(|c| c.params.theta != 0.5)
            .find(|c| outward(c).is_some_and(|(lead, trail)| pred(lead, trail)))
            .map(|c| (c.params, outward(c).unwrap()))
    };
    let cases: [(&str, OutcomeClass, Option<_>); 3] = [
        ("i", OutcomeClass::PropagationFailure, pick(&|lead, trail| lead > 0.0 && trail > lead)),
        ("ii", OutcomeClass::StackedPropagation, pick(&|lead, trail| trail > 0.0 && lead > trail)),
        ("iii", OutcomeClass::FrontPropagation, pick(&|lead, trail| lead > 0.0 && trail < 0.0)),
    ];
    let opts = ThresholdOptions::default().classify;
    let mut pass = true;
    let mut notes = Vec::new();
    for (label, want, found) in cases {
        let Some((pv, (lead, trail))) = found else {
            pass = false;
            notes.push(format!("case ({label}) not found in sign map"));
            continue;
        };
        let set = ParamSet::from_values(pv).unwrap();
        let out = classify_flashed(40.0, &set, kind, &opts.for_speed(lead));
        match out {
            Ok(o) => {
                let mut ok = o.class == want;
                if want == OutcomeClass::StackedPropagation {
                    let l = o.evidence.leading_speed.unwrap_or(f64::NAN);
                    let t = o.evidence.trailing_speed.unwrap_or(f64::NAN);
                    ok &= (l - lead).abs() < 5e-3 && (t - trail).abs() < 5e-3;
                    notes.push(format!(
                        "({label}) theta={} q={}: {:?}, speeds {l:.4}/{t:.4} vs {lead:.4}/{trail:.4}",
                        pv.theta, pv.q, o.class
                    ));
                } else {
                    notes.push(format!("({label}) theta={} q={}: {:?}", pv.theta, pv.q, o.class));
                }
                pass &= ok;
            }
            Err(e) => {
                pass = false;
                notes.push(format!("({label}) theta={} q={}: {e}", pv.theta, pv.q));
            }
        }
    }

    let set = params(0.5, pulse_q);
    let mut widths = Vec::new();
    let mut pulses = true;
    for tau in [12.0, 16.0, 20.0, 24.0, 28.0] {
        match classify_flashed(tau, &set, kind, &opts) {
            Ok(o) if o.class == OutcomeClass::PulsePropagation => widths.push(o.evidence.width.unwrap_or(f64::NAN)),
            other => {
                pulses = false;
                notes.push(format!("tau={tau}: {:?}", other.map(|o| o.class)));
            }
        }
    }
    let widening = pulses && widths.windows(2).all(|w| w[1] >= w[0]);
    notes.push(format!("pulse widths at theta=0.5, q={pulse_q}: {widths:.2?}"));
    Verdict::new(pass && widening, notes.join("; "))
}

fn criterion_8() -> Verdict {
    flashed_cases(TopologyKind::BottomUp, 0.1)
}

fn criterion_9() -> Verdict {
    let thresholds = threshold_dichotomy(TopologyKind::TopDown, 0.8, &[0.8, 0.6, 0.45, 0.39], Direction::DownToUp);
    let flashed = flashed_cases(TopologyKind::TopDown, 0.9);
    let opts = ThresholdOptions::default();
    let set = params(0.3, 0.65);
    let bu = find_tau_star(&set, TopologyKind::BottomUp, &opts).unwrap();
    let td = find_tau_star(&set, TopologyKind::TopDown, &opts).unwrap();
    let ordered = matches!((td.value, bu.value), (Some(a), Some(b)) if a < b);
    Verdict::new(
        thresholds.pass && flashed.pass && ordered,
        format!(
            "thresholds [{}] {}; flashed [{}] {}; tau* at theta=0.3, q=0.65: top-down {:?} vs bottom-up {:?}",
            if thresholds.pass { "ok" } else { "FAIL" },
            thresholds.detail,
            if flashed.pass { "ok" } else { "FAIL" },
            flashed.detail,
            td.value,
            bu.value
        ),
    )
}

fn criterion_10() -> Verdict {
    let set = params(0.5, 0.4);
    let (x0, t_end) = (0.45, 4.0);
    let reference = scalar_reference(&set, x0, t_end);
    let dts = [0.2, 0.1, 0.05, 0.025];
    let errs: Vec<f64> = dts
        .iter()
        .map(|&dt| (homogeneous_run(&set, x0, t_end, dt, Method::Rk4) - reference).abs())
        .collect();
    let slope = loglog_slope(&dts, &errs);

    let topology = Topology::bi_infinite(60);
    let initial = make_step_initial(Direction::UpToDown, &set, &topology).unwrap();
    let settings = IntegrationSettings {
        t_end: 50.0,
        ..Default::default()
    };
    let csv = || {
        let traj = integrate(&initial, &topology, InputSignal::None, &set, &settings).unwrap();
        let mut out = Vec::new();
        write_trajectory_csv(&traj, &mut out).unwrap();
        out
    };
    let grid = SignMapGrid {
        mu: MU,
        thetas: vec![0.4, 0.6],
        qs: vec![0.3, 0.7],
        ps: vec![P],
    };
    let map_csv = || {
        let map = sign_map(&grid, &[Direction::UpToDown, Direction::DownToUp], &SpeedOptions::default(), None).unwrap();
        let mut out = Vec::new();
        map.write_csv(&mut out).unwrap();
        out
    };
    let identical = csv() == csv() && map_csv() == map_csv();
    Verdict::new(
        (slope - 4.0).abs() <= 0.2 && identical,
        format!("log-log slope {slope:.3}, errors {errs:?}, repeated CSV byte-identical {identical}"),
    )
}

fn main() {
    let criteria: [(u32, Duration, fn() -> Verdict); 10] = [
        (1, Duration::from_secs(1), criterion_1),
        (2, Duration::from_secs(5), criterion_2),
        (3, Duration::from_secs(120), criterion_3),
        (4, Duration::from_secs(600), criterion_4),
        (5, Duration::from_secs(900), criterion_5),
        (6, Duration::from_secs(300), criterion_6),
        (7, Duration::from_secs(1200), criterion_7),
        (8, Duration::from_secs(1200), criterion_8),
        (9, Duration::from_secs(1500), criterion_9),
        (10, Duration::from_secs(60), criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, budget, run) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = verdict.pass && in_time;
        println!(
            "criterion {n}: {} ({:.1}s of {}s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            verdict.detail
        );
        if !pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
