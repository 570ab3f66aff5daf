//! Sigmoid nonlinearity, coupling fractions and the lattice vector field.
//!
//! After time rescaling every layer obeys
//!
//! ```text
//! v_j' = N(v_{j-1}, v_j, v_{j+1})
//! N(u, v, w) = (1-p-q)(S(u) - v) + p S'(v)(u - S(v)) + q(S(w) - v)
//! ```
//!
//! with `S(x) = 1 / (1 + exp(-mu (x - theta)))`. [`ParamSet`] is the single
//! validation gate for `(theta, mu, p, q)`; everything downstream assumes a
//! validated instance.

use serde::{Deserialize, Serialize};

use crate::equilibria::{self, BranchSet, FoldPoints};
use crate::error::{Error, Result};

/// Clamp applied before inverting the sigmoid on saturated values.
pub const INVERSE_CLAMP: f64 = 1e-12;

/// Slope and threshold of the sigmoid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub mu: f64,
    pub theta: f64,
}

impl SigmoidParams {
    pub fn new(mu: f64, theta: f64) -> Result<Self> {
        if !mu.is_finite() || mu <= 4.0 {
            return Err(Error::NoBistability(mu));
        }
        if !theta.is_finite() || theta < 0.0 {
            return Err(Error::InvalidParams(format!(
                "theta must be finite and non-negative, got {theta}"
            )));
        }
        Ok(Self { mu, theta })
    }

    /// `S(x)`, evaluated so that only `exp` of a non-positive argument is taken.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let z = self.mu * (x - self.theta);
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    }

    /// `S'(x) = mu S(x) (1 - S(x))`.
    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        self.eval_with_deriv(x).1
    }

    /// `S''(x) = mu^2 S (1 - S)(1 - 2S)`; vanishes exactly at `x = theta`.
    pub fn second_deriv(&self, x: f64) -> f64 {
        let (s, ds) = self.eval_with_deriv(x);
        self.mu * ds * (1.0 - 2.0 * s)
    }

    /// `(S(x), S'(x))` from a single exponential.
    #[inline]
    pub fn eval_with_deriv(&self, x: f64) -> (f64, f64) {
        let z = self.mu * (x - self.theta);
        let e = (-z.abs()).exp();
        let denom = 1.0 + e;
        let s = if z >= 0.0 { 1.0 / denom } else { e / denom };
        (s, self.mu * e / (denom * denom))
    }

    /// `S^{-1}(y) = theta + ln(y / (1 - y)) / mu` for `y` in `(0, 1)`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0 && y < 1.0) {
            return Err(Error::Domain(y));
        }
        Ok(self.theta + (y / (1.0 - y)).ln() / self.mu)
    }

    /// Inverse after clamping `y` into `[INVERSE_CLAMP, 1 - INVERSE_CLAMP]`.
    pub fn inverse_clamped(&self, y: f64) -> f64 {
        let y = clamp_unit(y);
        self.theta + (y / (1.0 - y)).ln() / self.mu
    }
}

#[inline]
pub(crate) fn clamp_unit(y: f64) -> f64 {
    if y.is_nan() {
        return 0.5;
    }
    y.clamp(INVERSE_CLAMP, 1.0 - INVERSE_CLAMP)
}

/// Fractions of feedforward error correction (`p`) and feedback (`q`).
/// The instantaneous feedforward drive gets the remainder `1 - p - q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub p: f64,
    pub q: f64,
}

impl CouplingParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !p.is_finite() || !q.is_finite() {
            return Err(Error::InvalidParams("p and q must be finite".into()));
        }
        if p < 0.0 || q < 0.0 || q > 1.0 || p + q > 1.0 {
            return Err(Error::InvalidParams(format!(
                "need 0 <= p, 0 <= q <= 1 and p + q <= 1, got p = {p}, q = {q}"
            )));
        }
        Ok(Self { p, q })
    }

    /// Normalizes raw weights: `p = alpha / sum`, `q = lambda / sum`.
    pub fn from_weights(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        if [alpha, beta, lambda]
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(Error::InvalidParams(format!(
                "weights must be finite and non-negative, got ({alpha}, {beta}, {lambda})"
            )));
        }
        let total = alpha + beta + lambda;
        if total <= 0.0 {
            return Err(Error::DegenerateCoupling);
        }
        let p = alpha / total;
        let q = lambda / total;
        // rounding can push p + q a hair above 1 when beta = 0
        let q = q.min(1.0 - p);
        Self::new(p, q)
    }

    /// Weight `1 - p - q` of the instantaneous drive.
    #[inline]
    pub fn drive(&self) -> f64 {
        1.0 - self.p - self.q
    }
}

/// Upper bound on `p` so that `1 - p - p S'(x)` never vanishes.
pub fn max_error_fraction(mu: f64) -> f64 {
    4.0 / (4.0 + mu)
}

/// Validated model parameters together with the fold data and the
/// homogeneous equilibria they imply.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    sigmoid: SigmoidParams,
    coupling: CouplingParams,
    folds: FoldPoints,
    branches: BranchSet,
    relaxed: bool,
}

/// Plain `(theta, mu, p, q)` record used for serialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamValues {
    pub theta: f64,
    pub mu: f64,
    pub p: f64,
    pub q: f64,
}

impl ParamSet {
    /// Strict constructor: requires `theta_* < theta < theta^*`.
    pub fn new(theta: f64, mu: f64, p: f64, q: f64) -> Result<Self> {
        let set = Self::build(theta, mu, p, q, false)?;
        if !set.is_bistable() {
            return Err(Error::InvalidParams(format!(
                "theta = {theta} lies outside the bistable window ({}, {}) for mu = {mu}",
                set.folds.theta_star, set.folds.theta_sup_star
            )));
        }
        Ok(set)
    }

    /// Accepts any `theta >= 0`; used for equilibrium tables that leave the
    /// bistable window. The instance is tagged and [`Self::is_relaxed`] reports it.
    pub fn relaxed(theta: f64, mu: f64, p: f64, q: f64) -> Result<Self> {
        Self::build(theta, mu, p, q, true)
    }

    fn build(theta: f64, mu: f64, p: f64, q: f64, relaxed: bool) -> Result<Self> {
        let sigmoid = SigmoidParams::new(mu, theta)?;
        let coupling = CouplingParams::new(p, q)?;
        if p >= max_error_fraction(mu) {
            return Err(Error::InvalidParams(format!(
                "p = {p} violates p < 4/(4+mu) = {}",
                max_error_fraction(mu)
            )));
        }
        let folds = equilibria::fold_points(mu)?;
        let branches = equilibria::equilibrium_branches(theta, mu)?;
        Ok(Self {
            sigmoid,
            coupling,
            folds,
            branches,
            relaxed,
        })
    }

    pub fn from_values(v: ParamValues) -> Result<Self> {
        Self::new(v.theta, v.mu, v.p, v.q)
    }

    pub fn values(&self) -> ParamValues {
        ParamValues {
            theta: self.theta(),
            mu: self.mu(),
            p: self.p(),
            q: self.q(),
        }
    }

    /// Same slope and coupling, threshold `1 - theta`.
    pub fn mirrored(&self) -> Result<Self> {
        Self::build(1.0 - self.theta(), self.mu(), self.p(), self.q(), self.relaxed)
    }

    pub fn theta(&self) -> f64 {
        self.sigmoid.theta
    }
    pub fn mu(&self) -> f64 {
        self.sigmoid.mu
    }
    pub fn p(&self) -> f64 {
        self.coupling.p
    }
    pub fn q(&self) -> f64 {
        self.coupling.q
    }
    pub fn sigmoid(&self) -> &SigmoidParams {
        &self.sigmoid
    }
    pub fn coupling(&self) -> &CouplingParams {
        &self.coupling
    }
    pub fn folds(&self) -> &FoldPoints {
        &self.folds
    }
    pub fn branches(&self) -> &BranchSet {
        &self.branches
    }
    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    /// `theta_* < theta < theta^*`: all three homogeneous states coexist.
    pub fn is_bistable(&self) -> bool {
        self.theta() > self.folds.theta_star && self.theta() < self.folds.theta_sup_star
    }

    /// The vector field `N(u, v, w)`.
    #[inline]
    pub fn rhs(&self, u: f64, v: f64, w: f64) -> f64 {
        let s = &self.sigmoid;
        let (sv, dsv) = s.eval_with_deriv(v);
        self.coupling.drive() * (s.eval(u) - v)
            + self.coupling.p * dsv * (u - sv)
            + self.coupling.q * (s.eval(w) - v)
    }

    /// Homogeneous reaction `F_p(x) = (S(x) - x)(1 - p - p S'(x))`.
    pub fn reaction(&self, x: f64) -> f64 {
        let (s, ds) = self.sigmoid.eval_with_deriv(x);
        (s - x) * (1.0 - self.p() - self.p() * ds)
    }

    /// Partial derivatives `(dN/du, dN/dv, dN/dw)`.
    pub fn rhs_jacobian(&self, u: f64, v: f64, w: f64) -> (f64, f64, f64) {
        let s = &self.sigmoid;
        let (p, q, a) = (self.p(), self.q(), self.coupling.drive());
        let dsu = s.deriv(u);
        let (sv, dsv) = s.eval_with_deriv(v);
        let d2sv = s.second_deriv(v);
        let dsw = s.deriv(w);
        let du = a * dsu + p * dsv;
        let dv = -a + p * d2sv * (u - sv) - p * dsv * dsv - q;
        let dw = q * dsw;
        (du, dv, dw)
    }
}

impl Serialize for ParamSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.values().serialize(serializer)
    }
}
