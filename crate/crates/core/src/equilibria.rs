//! Homogeneous equilibria, fold points and linear stability.
//!
//! Equilibria solve `x = S(x)`, i.e. `theta = f(x)` with
//! `f(x) = x + ln((1 - x) / x) / mu`. For `mu > 4`, `f` has three intervals
//! of monotonicity on `(0, 1)` separated by `x_*` and `x^*`; inverting `f`
//! on each one yields the down, middle and up branches.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamSet, SigmoidParams};

/// Width at which the bracketing phase hands over to Newton polishing.
const BISECTION_WIDTH: f64 = 1e-14;
const MAX_NEWTON_STEPS: usize = 5;
/// Distance to a fold below which two branches are reported as one.
const FOLD_MERGE: f64 = 1e-10;
/// Uniform phi-grid used to cross-check the analytic maximum at `phi = 0`.
pub const DISPERSION_GRID: usize = 721;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "d")]
    Down,
    #[serde(rename = "m")]
    Middle,
    #[serde(rename = "u")]
    Up,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Down => "d",
            Branch::Middle => "m",
            Branch::Up => "u",
        })
    }
}

/// Fold activities `x_*`, `x^*` and the thresholds `theta_* = f(x_*)`,
/// `theta^* = f(x^*)` bounding the bistable window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPoints {
    pub x_star: f64,
    pub x_sup_star: f64,
    pub theta_star: f64,
    pub theta_sup_star: f64,
}

/// `f(x) = x + ln((1 - x) / x) / mu`, the threshold at which `x` is an equilibrium.
pub fn threshold_of_activity(x: f64, mu: f64) -> f64 {
    x + ((1.0 - x) / x).ln() / mu
}

pub fn fold_points(mu: f64) -> Result<FoldPoints> {
    if !mu.is_finite() || mu <= 4.0 {
        return Err(Error::NoBistability(mu));
    }
    let half_gap = (0.25 - 1.0 / mu).sqrt();
    let x_star = 0.5 - half_gap;
    let x_sup_star = 0.5 + half_gap;
    Ok(FoldPoints {
        x_star,
        x_sup_star,
        theta_star: threshold_of_activity(x_star, mu),
        theta_sup_star: threshold_of_activity(x_sup_star, mu),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchValue {
    pub x: f64,
    /// `|x - S(x)|`
    pub residual: f64,
}

/// The homogeneous equilibria present at a given `(theta, mu)`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchSet {
    pub down: Option<BranchValue>,
    pub middle: Option<BranchValue>,
    pub up: Option<BranchValue>,
}

impl BranchSet {
    pub fn get(&self, branch: Branch) -> Option<f64> {
        match branch {
            Branch::Down => self.down,
            Branch::Middle => self.middle,
            Branch::Up => self.up,
        }
        .map(|b| b.x)
    }

    pub fn require(&self, branch: Branch) -> Result<f64> {
        self.get(branch).ok_or(Error::MissingBranch(branch))
    }

    pub fn has_all(&self) -> bool {
        self.down.is_some() && self.middle.is_some() && self.up.is_some()
    }
}

/// Solves `f(x) = theta` on each monotonicity interval.
pub fn equilibrium_branches(theta: f64, mu: f64) -> Result<BranchSet> {
    let folds = fold_points(mu)?;
    let sigmoid = SigmoidParams { mu, theta };
    let value = |x: f64| BranchValue {
        x,
        residual: (x - sigmoid.eval(x)).abs(),
    };
    let mut set = BranchSet::default();

    let near_lower_fold = (theta - folds.theta_star).abs() < FOLD_MERGE;
    let near_upper_fold = (theta - folds.theta_sup_star).abs() < FOLD_MERGE;

    if near_lower_fold {
        set.down = Some(value(folds.x_star));
        set.middle = Some(value(folds.x_star));
    } else {
        if theta > folds.theta_star {
            // f decreases from +inf to theta_* on (0, x_*)
            let x = solve_on(theta, mu, f64::MIN_POSITIVE, folds.x_star, false);
            set.down = Some(value(polish(x, &sigmoid, 0.0, folds.x_star)));
        }
        if theta > folds.theta_star && theta < folds.theta_sup_star {
            let x = solve_on(theta, mu, folds.x_star, folds.x_sup_star, true);
            set.middle = Some(value(polish(x, &sigmoid, folds.x_star, folds.x_sup_star)));
        }
    }
    if near_upper_fold {
        set.middle = Some(value(folds.x_sup_star));
        set.up = Some(value(folds.x_sup_star));
    } else if theta < folds.theta_sup_star {
        // f decreases from theta^* to -inf on (x^*, 1)
        let x = solve_on(theta, mu, folds.x_sup_star, 1.0 - f64::EPSILON / 2.0, false);
        set.up = Some(value(polish(x, &sigmoid, folds.x_sup_star, 1.0)));
    }
    Ok(set)
}

/// Bisection for `f(x) = theta` on `[lo, hi]` where `f` is monotone.
fn solve_on(theta: f64, mu: f64, mut lo: f64, mut hi: f64, increasing: bool) -> f64 {
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = threshold_of_activity(mid, mu) > theta;
        // root lies left of mid when f(mid) is already past theta
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A few Newton steps on `g(x) = x - S(x)`, kept inside the bracket.
fn polish(mut x: f64, s: &SigmoidParams, lo: f64, hi: f64) -> f64 {
    for _ in 0..MAX_NEWTON_STEPS {
        let (sx, dsx) = s.eval_with_deriv(x);
        let g = x - sx;
        let dg = 1.0 - dsx;
        if g == 0.0 || dg == 0.0 {
            break;
        }
        let next = x - g / dg;
        if !(next > lo && next < hi) {
            break;
        }
        if (next - x).abs() <= f64::EPSILON * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// One point of the dispersion curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionSample {
    pub phi: f64,
    pub nu: Complex64,
}

/// Growth rate `nu(phi)` of the Fourier mode `exp(nu t + i phi j)` about an
/// equilibrium `x`:
/// `nu = (1-q) S' e^{-i phi} - (1-p) - p S'^2 + q S' e^{i phi}`.
pub fn dispersion_relation(x: f64, phi: f64, params: &ParamSet) -> Result<Complex64> {
    let s = params.sigmoid();
    let residual = (x - s.eval(x)).abs();
    if residual >= 1e-8 {
        return Err(Error::NotEquilibrium { x, residual });
    }
    Ok(growth_rate(s.deriv(x), phi, params))
}

fn growth_rate(slope: f64, phi: f64, params: &ParamSet) -> Complex64 {
    let (p, q) = (params.p(), params.q());
    let back = Complex64::from_polar(1.0, -phi);
    let fwd = Complex64::from_polar(1.0, phi);
    back * ((1.0 - q) * slope) - (1.0 - p) - p * slope * slope + fwd * (q * slope)
}

/// Samples `nu` on a uniform grid of `points` values over `[-pi, pi]`.
/// With an odd number of points the middle sample sits exactly at `phi = 0`.
pub fn dispersion_curve(x: f64, params: &ParamSet, points: usize) -> Result<Vec<DispersionSample>> {
    let points = points.max(2);
    let half = (points - 1) as f64 / 2.0;
    (0..points)
        .map(|k| {
            let phi = PI * (k as f64 - half) / half;
            dispersion_relation(x, phi, params).map(|nu| DispersionSample { phi, nu })
        })
        .collect()
}

/// Largest real part over the phi-grid and where it is attained.
pub fn max_growth(x: f64, params: &ParamSet) -> Result<(f64, f64)> {
    let curve = dispersion_curve(x, params, DISPERSION_GRID)?;
    let at_zero = dispersion_relation(x, 0.0, params)?.re;
    let mut best = (0.0, at_zero);
    for sample in curve {
        if sample.nu.re > best.1 {
            best = (sample.phi, sample.nu.re);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

/// Linear stability of a homogeneous branch: stable iff `Re nu(0) < 0`.
pub fn classify_stability(branch: Branch, params: &ParamSet) -> Result<Stability> {
    let x = params.branches().require(branch)?;
    let leading = dispersion_relation(x, 0.0, params)?.re;
    Ok(if leading < 0.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    })
}
