//! The reflected variance-exploding noise schedule.
//!
//! Time `t in [0, 1]` of the schedule corresponds to time `sigma(t)^2` of a
//! reflected Brownian motion: the process `dx = gbar(t) dB + dL` with
//! `gbar(t)^2 = d/dt sigma(t)^2` accumulates exactly `sigma(t)^2 - sigma(s)^2`
//! of kernel variance between times `s` and `t`.

use crate::{Error, Result};

/// Geometric noise schedule `sigma(t) = sigma0^(1-t) * sigma1^t`.
///
/// Immutable value object; freely shareable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    sigma0: f64,
    sigma1: f64,
    /// Training/sampling floor for `t`; the transition variance vanishes as
    /// `t -> 0` and the conditional score blows up there.
    pub t_min: f64,
}

impl NoiseSchedule {
    /// Default time floor.
    pub const DEFAULT_T_MIN: f64 = 1e-5;

    pub fn new(sigma0: f64, sigma1: f64) -> Result<Self> {
        if !(sigma0.is_finite() && sigma1.is_finite()) {
            return Err(Error::InvalidSchedule("non-finite sigma".into()));
        }
        if sigma0 <= 0.0 {
            return Err(Error::InvalidSchedule(format!("sigma0 = {sigma0} must be > 0")));
        }
        if sigma1 <= sigma0 {
            // Equal endpoints make the log-ratio zero and the schedule vacuous.
            return Err(Error::InvalidSchedule(format!(
                "sigma1 = {sigma1} must exceed sigma0 = {sigma0}"
            )));
        }
        Ok(Self { sigma0, sigma1, t_min: Self::DEFAULT_T_MIN })
    }

    pub fn with_t_min(mut self, t_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::InvalidSchedule(format!("t_min = {t_min} outside [0, 1)")));
        }
        self.t_min = t_min;
        Ok(self)
    }

    /// `(sigma0, sigma1) = (0.01, 5)`: the sample-quality configuration.
    pub fn sample_quality() -> Self {
        Self::new(0.01, 5.0).unwrap()
    }

    /// `(sigma0, sigma1) = (1e-4, 5)`: the likelihood configuration, which
    /// drives the prior and reconstruction terms to numerical zero.
    pub fn likelihood() -> Self {
        Self::new(1e-4, 5.0).unwrap()
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    /// `sigma(t) = sigma0^(1-t) sigma1^t` for `t in [0, 1]`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidTime { t, lo: 0.0, hi: 1.0 });
        }
        Ok(self.sigma_unchecked(t))
    }

    #[inline]
    fn sigma_unchecked(&self, t: f64) -> f64 {
        self.sigma0.powf(1.0 - t) * self.sigma1.powf(t)
    }

    /// Diffusion coefficient `gbar(t) = sigma(t) sqrt(2 log(sigma1/sigma0))`,
    /// satisfying `gbar(t)^2 = d/dt sigma(t)^2`.
    #[inline]
    pub fn gbar(&self, t: f64) -> f64 {
        self.sigma_unchecked(t) * (2.0 * (self.sigma1 / self.sigma0).ln()).sqrt()
    }

    /// Kernel variance accumulated between times `s <= t`:
    /// `int_s^t gbar(u)^2 du = sigma(t)^2 - sigma(s)^2`.
    pub fn accumulated_variance(&self, s: f64, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidTime { t: if (0.0..=1.0).contains(&s) { t } else { s }, lo: 0.0, hi: 1.0 });
        }
        if s > t {
            return Err(Error::InvalidTime { t: s, lo: 0.0, hi: t });
        }
        let ss = self.sigma_unchecked(s);
        let st = self.sigma_unchecked(t);
        Ok(st * st - ss * ss)
    }
}
