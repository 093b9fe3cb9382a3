//! Noise schedules and the deterministic DDIM step coefficients.
//!
//! A generative step from `t` to an earlier timestep `p` is the linear map
//! `z_p = m · z_t + n · ε` with
//!
//! ```text
//! m = sqrt(ᾱ_p / ᾱ_t)
//! n = sqrt(1 − ᾱ_p) − sqrt(1 − ᾱ_t) · m
//! ```
//!
//! For consecutive timesteps (`p = t − 1`) this is `m = 1/sqrt(α_t)`.
//! `ᾱ_0` is defined as 1, so the last step lands on the clean sample.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            train_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.train_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DdimCoeffs {
    pub m: f64,
    pub n: f64,
}

impl DdimCoeffs {
    /// Coefficients of the step from cumulative product `alpha_bar_t` to `alpha_bar_prev`.
    pub fn from_alpha_bars(alpha_bar_t: f64, alpha_bar_prev: f64) -> Self {
        let m = (alpha_bar_prev / alpha_bar_t).sqrt();
        let n = (1.0 - alpha_bar_prev).sqrt() - (1.0 - alpha_bar_t).sqrt() * m;
        DdimCoeffs { m, n }
    }
}

impl NoiseSchedule {
    /// Linear β schedule over `steps` timesteps, endpoints inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        if let Some(w) = alpha_bars.windows(2).find(|w| w[1] >= w[0]) {
            return Err(Error::param(format!(
                "alpha_bar not strictly decreasing ({} -> {})",
                w[0], w[1]
            )));
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Total number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimestepOutOfRange { t, max: self.steps() })
        }
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t - 1])
    }

    /// `ᾱ_t` for `0 ≤ t ≤ T`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `(m_t, n_t)` for the single step `t → t − 1`.
    pub fn ddim_coeffs(&self, t: usize) -> Result<DdimCoeffs> {
        self.check(t)?;
        self.ddim_coeffs_between(t, t - 1)
    }

    /// `(m, n)` for a strided step `t → prev` with `prev < t`.
    pub fn ddim_coeffs_between(&self, t: usize, prev: usize) -> Result<DdimCoeffs> {
        self.check(t)?;
        if prev >= t {
            return Err(Error::param(format!("step target {prev} must precede {t}")));
        }
        Ok(DdimCoeffs::from_alpha_bars(self.alpha_bar(t)?, self.alpha_bar(prev)?))
    }

    /// `count` evenly strided timesteps in ascending order, ending at `T`.
    ///
    /// With `T = 1000` and 50 stops this is `20, 40, …, 1000`.
    pub fn timesteps(&self, count: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if count == 0 || count > total {
            return Err(Error::param(format!(
                "visited step count must be in 1..={total}, got {count}"
            )));
        }
        Ok((1..=count).map(|k| k * total / count).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn thousand_step_terminal_alpha_bar() {
        // Oracle: plain cumulative product of the 1000 linearly spaced betas.
        let mut prod = 1.0f64;
        for i in 0..1000 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let last = s.alpha_bar(1000).unwrap();
        assert!((last - prod).abs() < 1e-12);
        assert!((last - 4.04e-5).abs() < 0.01e-5, "{last}");
    }

    #[test]
    fn parameter_range_checks() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn identity_step_coefficients() {
        let c = DdimCoeffs::from_alpha_bars(0.3, 0.3);
        assert_eq!(c.m, 1.0);
        assert_eq!(c.n, 0.0);
    }

    #[test]
    fn half_quarter_coefficients() {
        let c = DdimCoeffs::from_alpha_bars(0.25, 0.5);
        assert!((c.m - 2f64.sqrt()).abs() < 1e-12);
        let n = 0.5f64.sqrt() - 0.75f64.sqrt() / 0.5f64.sqrt();
        assert!((c.n - n).abs() < 1e-12);
        assert!((c.n + 0.517638).abs() < 1e-6);
    }

    #[test]
    fn first_step_uses_unit_alpha_bar_zero() {
        let s = NoiseSchedule::linear(10, 0.05, 0.2).unwrap();
        let c = s.ddim_coeffs(1).unwrap();
        let a1 = s.alpha(1).unwrap();
        let ab1 = s.alpha_bar(1).unwrap();
        assert!((c.m - 1.0 / a1.sqrt()).abs() < 1e-12);
        assert!((c.n + (1.0 - ab1).sqrt() / a1.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn timestep_bounds() {
        let s = NoiseSchedule::linear(10, 0.05, 0.2).unwrap();
        assert!(s.ddim_coeffs(0).is_err());
        assert!(s.ddim_coeffs(11).is_err());
        assert!(s.ddim_coeffs_between(5, 5).is_err());
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let ts = s.timesteps(50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 20);
        assert_eq!(*ts.last().unwrap(), 1000);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert!(s.timesteps(0).is_err());
    }

    proptest! {
        #[test]
        fn invariants_hold(steps in 1usize..400, lo in 1e-5f64..0.05, span in 0.0f64..0.5) {
            let hi = (lo + span).min(0.9);
            let s = NoiseSchedule::linear(steps, lo, hi).unwrap();
            let ab = s.alpha_bars();
            prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(ab.iter().all(|&a| a > 0.0 && a <= 1.0));
            for t in 1..=steps {
                let a = s.alpha(t).unwrap();
                prop_assert!(a > 0.0 && a < 1.0);
                let rel = (s.alpha_bar(t).unwrap() - a * s.alpha_bar(t - 1).unwrap()).abs() / s.alpha_bar(t).unwrap();
                prop_assert!(rel < 1e-6);
                // m_t · sqrt(ᾱ_t) recovers sqrt(ᾱ_{t−1}).
                let c = s.ddim_coeffs(t).unwrap();
                let lhs = c.m * s.alpha_bar(t).unwrap().sqrt();
                let rhs = s.alpha_bar(t - 1).unwrap().sqrt();
                prop_assert!((lhs - rhs).abs() / rhs < 1e-6);
            }
        }
    }
}
