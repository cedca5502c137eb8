//! Generalized Pareto distribution (GPD) mathematics.
//!
//! Distribution function of a threshold excess `y > 0`:
//!
//! ```text
//! H(y; σ, ξ) = 1 − (1 + ξ y / σ)₊^(−1/ξ),     σ > 0,
//! ```
//!
//! with the exponential limit `1 − exp(−y/σ)` as ξ → 0 and density
//! `h(y; σ, ξ) = (1/σ)(1 + ξ y / σ)₊^(−1/ξ−1)`. Negative shape gives the
//! finite support `[0, −σ/ξ]`. All formulas use `ln_1p`-style expressions to
//! avoid cancellation in `(1 + ξy/σ)^(−1/ξ)` for small `|ξ|`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparError};

/// Shape magnitude below which the exponential-limit branch is used.
pub const XI_SWITCH_TOL: f64 = 1e-6;

/// Scale and shape of a GPD; shape restricted to the open interval
/// `(-0.5, 0.5)` matching both likelihood regularity and the bounded
/// network output head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    sigma: f64,
    xi: f64,
}

impl GpdParams {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SparError::ParamDomain(format!("sigma must be finite positive, got {sigma}")));
        }
        if !(xi.is_finite() && xi > -0.5 && xi < 0.5) {
            return Err(SparError::ParamDomain(format!("xi must lie in (-0.5, 0.5), got {xi}")));
        }
        Ok(Self { sigma, xi })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Upper endpoint of the support: `−σ/ξ` for ξ < 0, `+∞` otherwise.
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < 0.0 {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }
}

fn check_y(y: f64) -> Result<()> {
    if !y.is_finite() || y < 0.0 {
        return Err(SparError::ParamDomain(format!("y must be finite and nonnegative, got {y}")));
    }
    Ok(())
}

/// Distribution function `H(y; σ, ξ)`. Returns exactly 1 at and beyond a
/// finite upper endpoint.
pub fn gpd_cdf(y: f64, p: &GpdParams) -> Result<f64> {
    check_y(y)?;
    if p.xi.abs() < XI_SWITCH_TOL {
        // Taylor-consistent limit: ln(1+ξz)/ξ = z(1 − ξz/2) + O(ξ²z³)
        let z = y / p.sigma;
        return Ok(1.0 - (-z * (1.0 - 0.5 * p.xi * z)).exp());
    }
    let t = p.xi * y / p.sigma;
    if 1.0 + t <= 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (-t.ln_1p() / p.xi).exp())
}

/// Log-density `ln h(y; σ, ξ)`; `−∞` outside the support (the finite upper
/// endpoint included).
pub fn gpd_logpdf(y: f64, p: &GpdParams) -> Result<f64> {
    check_y(y)?;
    if p.xi.abs() < XI_SWITCH_TOL {
        let z = y / p.sigma;
        return Ok(-p.sigma.ln() - z + p.xi * (0.5 * z * z - z));
    }
    let t = p.xi * y / p.sigma;
    if 1.0 + t <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-p.sigma.ln() - (1.0 / p.xi + 1.0) * t.ln_1p())
}

/// Quantile function: the `y ≥ 0` with `gpd_cdf(y) = q`, for `q ∈ [0, 1)`.
pub fn gpd_quantile(q: f64, p: &GpdParams) -> Result<f64> {
    if !(q.is_finite() && (0.0..1.0).contains(&q)) {
        return Err(SparError::ParamDomain(format!("quantile level must lie in [0, 1), got {q}")));
    }
    // ln(1-q) via ln_1p(-q) keeps precision for small q.
    let log_surv = (-q).ln_1p();
    if p.xi.abs() < XI_SWITCH_TOL {
        // (exp(−ξ ls) − 1)/ξ = −ls(1 − ξ ls/2) + O(ξ²)
        return Ok(p.sigma * -log_surv * (1.0 - 0.5 * p.xi * log_surv));
    }
    Ok(p.sigma * (-p.xi * log_surv).exp_m1() / p.xi)
}

/// Inverse-transform sampling; the empirical CDF of the output converges to
/// [`gpd_cdf`].
pub fn gpd_sample<R: Rng + ?Sized>(count: usize, p: &GpdParams, rng: &mut R) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(SparError::ParamDomain("sample count must be >= 1".into()));
    }
    (0..count).map(|_| gpd_quantile(rng.random::<f64>(), p)).collect()
}

/// Single inverse-transform draw; used in the tail simulation hot loop.
pub(crate) fn gpd_sample_one<R: Rng + ?Sized>(p: &GpdParams, rng: &mut R) -> f64 {
    let q: f64 = rng.random();
    let log_surv = (-q).ln_1p();
    if p.xi.abs() < XI_SWITCH_TOL {
        p.sigma * -log_surv * (1.0 - 0.5 * p.xi * log_surv)
    } else {
        p.sigma * (-p.xi * log_surv).exp_m1() / p.xi
    }
}

/// Probability integral transform onto the standard exponential scale:
/// `−ln(1 − H(y)) = ln(1 + ξy/σ)/ξ` (limit `y/σ` at ξ = 0). Standard
/// exponential when `y ~ GPD(σ, ξ)`; the basis of the GPD QQ diagnostic.
pub fn to_std_exponential(y: f64, p: &GpdParams) -> Result<f64> {
    check_y(y)?;
    if p.xi.abs() < XI_SWITCH_TOL {
        let z = y / p.sigma;
        return Ok(z * (1.0 - 0.5 * p.xi * z));
    }
    let t = p.xi * y / p.sigma;
    if 1.0 + t <= 0.0 {
        return Err(SparError::ParamDomain(format!(
            "y = {y} outside GPD support [0, {})",
            p.upper_endpoint()
        )));
    }
    Ok(t.ln_1p() / p.xi)
}
