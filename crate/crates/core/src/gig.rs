//! Generalized inverse Gaussian (GIG) distribution.
//!
//! Density ∝ g^(ϑ−1) exp(−ρg − τ/g) on g > 0. Under a gamma prior on the
//! gain and gamma-distributed spectral observations this is the exact gain
//! posterior, so its moments drive every E-step.

use crate::bessel::{ln_bessel_k_order_derivative, ln_bessel_k_scaled_neighbors};
use crate::error::{Error, Result};
use crate::special::digamma;

/// Below this value of 2√(ρτ) the moments switch to their gamma limits.
pub const GAMMA_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    pub order: f64,
    pub rate: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigMoments {
    pub mean: f64,
    pub mean_inv: f64,
    pub mean_ln: f64,
}

impl GigParams {
    pub fn new(order: f64, rate: f64, tau: f64) -> Result<Self> {
        let p = GigParams { order, rate, tau };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !self.order.is_finite() || !(self.rate > 0.0) || !self.rate.is_finite() {
            return Err(Error::input(format!("invalid GIG parameters {self:?}")));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::input(format!("GIG tau must be finite and non-negative, got {}", self.tau)));
        }
        Ok(())
    }

    /// The Bessel argument 2√(ρτ).
    pub fn argument(&self) -> f64 {
        2.0 * (self.rate * self.tau).sqrt()
    }

    fn is_gamma_limit(&self) -> bool {
        self.argument() < GAMMA_LIMIT
    }
}

fn gamma_limit_order(p: &GigParams) -> Result<()> {
    if p.order <= 0.0 {
        return Err(Error::numerical(format!(
            "GIG with tau≈0 needs a positive order, got {}",
            p.order
        )));
    }
    Ok(())
}

/// E(G), E(1/G) and E(ln G).
pub fn gig_moments(p: &GigParams) -> Result<GigMoments> {
    p.validate()?;
    if p.is_gamma_limit() {
        gamma_limit_order(p)?;
        if p.order <= 1.0 {
            return Err(Error::numerical(format!(
                "E(1/G) diverges for a gamma posterior of shape {}",
                p.order
            )));
        }
        return Ok(GigMoments {
            mean: p.order / p.rate,
            mean_inv: p.rate / (p.order - 1.0),
            mean_ln: digamma(p.order) - p.rate.ln(),
        });
    }
    let x = p.argument();
    let [below, at, above] = ln_bessel_k_scaled_neighbors(p.order, x)?;
    let half_log_ratio = 0.5 * (p.tau.ln() - p.rate.ln());
    let m = GigMoments {
        mean: (half_log_ratio + above - at).exp(),
        mean_inv: (below - at - half_log_ratio).exp(),
        mean_ln: ln_bessel_k_order_derivative(p.order, x)? + half_log_ratio,
    };
    if !(m.mean.is_finite() && m.mean_inv.is_finite() && m.mean_ln.is_finite()) {
        return Err(Error::numerical(format!("non-finite GIG moments for {p:?}")));
    }
    Ok(m)
}

/// E(G) alone; cheaper than [`gig_moments`] because it skips the order
/// derivative.
pub fn gig_mean(p: &GigParams) -> Result<f64> {
    p.validate()?;
    if p.is_gamma_limit() {
        gamma_limit_order(p)?;
        return Ok(p.order / p.rate);
    }
    let x = p.argument();
    let [_, at, above] = ln_bessel_k_scaled_neighbors(p.order, x)?;
    Ok((0.5 * (p.tau.ln() - p.rate.ln()) + above - at).exp())
}

/// ∂K_v(x)/∂v at v = ϑ.
pub fn gig_order_derivative(order: f64, x: f64) -> Result<f64> {
    crate::bessel::bessel_k_order_derivative(order, x)
}
