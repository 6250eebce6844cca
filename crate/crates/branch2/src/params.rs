//! Model parameters shared by the particle model, the diffusion limit and
//! the dual process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the two-level branching model.
///
/// `split_rate_base` and `split_exponent` describe the cell splitting rate
/// `r(z) = r̄ (1 + z^p)`; `p = 0` gives the constant rate `r = r̄` used by
/// the limit and dual models. `theta` is the binomial allocation bias at a
/// split, `sigma` the within-cell branching strength, `capital_k` the linear
/// drift, `lambda` the competition coefficient and `zeta` the individual
/// particle mass (particle model only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub split_rate_base: f64,
    #[serde(default)]
    pub split_exponent: u32,
    pub theta: f64,
    pub sigma: f64,
    pub capital_k: f64,
    pub lambda: f64,
    #[serde(default = "default_zeta")]
    pub zeta: f64,
}

fn default_zeta() -> f64 {
    1.0
}

impl Params {
    pub fn new(
        split_rate_base: f64,
        split_exponent: u32,
        theta: f64,
        sigma: f64,
        capital_k: f64,
        lambda: f64,
        zeta: f64,
    ) -> Result<Self> {
        let p = Self {
            split_rate_base,
            split_exponent,
            theta,
            sigma,
            capital_k,
            lambda,
            zeta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Constant-rate shorthand (`p = 0`).
    pub fn constant_rate(
        r: f64,
        theta: f64,
        sigma: f64,
        capital_k: f64,
        lambda: f64,
        zeta: f64,
    ) -> Result<Self> {
        Self::new(r, 0, theta, sigma, capital_k, lambda, zeta)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.split_rate_base.is_finite() || self.split_rate_base <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "split_rate_base must be positive, got {}",
                self.split_rate_base
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParams(format!(
                "theta must lie strictly in (0,1), got {}",
                self.theta
            )));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParams(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "zeta must lie in (0,1], got {}",
                self.zeta
            )));
        }
        if !self.capital_k.is_finite() {
            return Err(Error::InvalidParams("capital_k must be finite".into()));
        }
        Ok(())
    }

    /// Particle-model use additionally needs a nonnegative per-particle
    /// birth rate.
    pub fn validate_particle(&self) -> Result<()> {
        self.validate()?;
        if self.sigma / self.zeta + self.capital_k < 0.0 {
            return Err(Error::InvalidParams(format!(
                "sigma/zeta + K must be nonnegative, got {}",
                self.sigma / self.zeta + self.capital_k
            )));
        }
        Ok(())
    }

    /// Cell splitting rate at virus mass `z`: `r̄ (1 + z^p)`, constant `r̄`
    /// when `p = 0`.
    pub fn split_rate(&self, z: f64) -> f64 {
        if self.split_exponent == 0 {
            self.split_rate_base
        } else {
            self.split_rate_base * (1.0 + z.powi(self.split_exponent as i32))
        }
    }
}
