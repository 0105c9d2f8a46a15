//! Closed forms for the exponential-ramp intensity `λ(δ) = exp(α + w δ)`.

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;
use crate::special::{exprel, log1p_over};

/// `-ln(1e-12)`: cumulative hazard at which the survival is treated as zero.
const TAIL_HAZARD: f64 = 27.631_021_115_928_547;

/// Quadrature settings for [`IntensityHead::expected_next`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadConfig {
    pub tol: f64,
    /// Conditioning horizon for defective laws; `None` picks the point where
    /// the remaining hazard mass drops below `1e-12`.
    pub defective_horizon: Option<f64>,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            defective_horizon: None,
        }
    }
}

/// Intensity of the next arrival as a function of the elapsed time `δ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityHead {
    pub alpha: f64,
    pub w: f64,
}

impl IntensityHead {
    pub fn new(alpha: f64, w: f64) -> Self {
        Self { alpha, w }
    }

    pub fn intensity(&self, delta: f64) -> Result<f64> {
        check_elapsed(delta)?;
        Ok((self.alpha + self.w * delta).exp())
    }

    /// Integrated intensity `Λ(τ) = (e^α / w)(e^{wτ} - 1)`.
    pub fn cumulative(&self, tau: f64) -> f64 {
        self.alpha.exp() * tau * exprel(self.w * tau)
    }

    /// `ln λ(δ) - Λ(δ)`.
    pub fn log_f_star(&self, delta: f64) -> Result<f64> {
        check_elapsed(delta)?;
        Ok(self.alpha + self.w * delta - self.cumulative(delta))
    }

    pub fn log_survival(&self, tau: f64) -> Result<f64> {
        check_elapsed(tau)?;
        Ok(-self.cumulative(tau))
    }

    /// `G(τ) = exp(-Λ(τ))`.
    pub fn survival(&self, tau: f64) -> Result<f64> {
        Ok(self.log_survival(tau)?.exp())
    }

    pub fn cdf(&self, tau: f64) -> Result<f64> {
        Ok(-self.log_survival(tau)?.exp_m1())
    }

    /// Probability that no arrival ever occurs: `exp(e^α / w)` for `w < 0`.
    pub fn survival_at_infinity(&self) -> f64 {
        if self.w < 0.0 {
            (self.alpha.exp() / self.w).exp()
        } else {
            0.0
        }
    }

    /// Inverse CDF; `None` when `y` falls in the mass that never arrives.
    pub fn inverse_cdf(&self, y: f64) -> Result<Option<f64>> {
        if !(0.0..1.0).contains(&y) {
            return Err(Error::InvalidArgument(format!("quantile {y} outside [0, 1)")));
        }
        let hazard = -(-y).ln_1p();
        let scale = (-self.alpha).exp() * hazard;
        let x = self.w * scale;
        if x <= -1.0 {
            return Ok(None);
        }
        Ok(Some(scale * log1p_over(x)))
    }

    /// Elapsed time at which the cumulative hazard reaches `target`, if ever.
    fn time_to_hazard(&self, target: f64) -> Option<f64> {
        let scale = (-self.alpha).exp() * target;
        let x = self.w * scale;
        (x > -1.0).then(|| scale * log1p_over(x))
    }

    /// Mean time to the next arrival, `∫ G`. For a defective law the mean
    /// conditional on arriving before the horizon is returned, with the flag set.
    pub fn expected_next(&self, cfg: &QuadConfig) -> Result<(f64, bool)> {
        let g = |t: f64| (-self.cumulative(t)).exp();
        if let Some(end) = self.time_to_hazard(TAIL_HAZARD) {
            return Ok((adaptive_simpson(g, 0.0, end, cfg.tol)?, false));
        }
        let horizon = match cfg.defective_horizon {
            Some(h) if h > 0.0 => h,
            Some(h) => {
                return Err(Error::InvalidArgument(format!("defective horizon {h} must be positive")))
            }
            // Remaining hazard after H is e^{α + wH} / |w|.
            None => ((1e-12 * self.w.abs()).ln() - self.alpha) / self.w,
        }
        .max(f64::MIN_POSITIVE);
        let g_h = g(horizon);
        let mass = 1.0 - g_h;
        if !(mass > 0.0) {
            return Ok((horizon, true));
        }
        let area = adaptive_simpson(|t| g(t) - g_h, 0.0, horizon, cfg.tol)?;
        Ok((area / mass, true))
    }
}

fn check_elapsed(delta: f64) -> Result<()> {
    if delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("elapsed time {delta} is negative")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn intensity_values() {
        assert_eq!(IntensityHead::new(0.0, 0.0).intensity(3.0).unwrap(), 1.0);
        assert!((IntensityHead::new(0.0, 0.5).intensity(2.0).unwrap() - E).abs() < 1e-15);
        assert!(IntensityHead::new(0.0, 0.5).intensity(-1.0).is_err());
    }

    #[test]
    fn density_values() {
        let flat = IntensityHead::new(0.0, 1e-9);
        assert!((flat.log_f_star(1.0).unwrap() + 1.0).abs() < 1e-8);
        let ramp = IntensityHead::new(0.0, 1.0);
        assert!((ramp.log_f_star(1.0).unwrap() - (1.0 - (E - 1.0))).abs() < 1e-14);
    }

    #[test]
    fn survival_values() {
        let flat = IntensityHead::new(0.0, 0.0);
        assert_eq!(flat.survival(0.0).unwrap(), 1.0);
        assert!((flat.survival(2.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        let ramp = IntensityHead::new(0.0, 1.0);
        assert!((ramp.survival(1.0).unwrap() - (-(E - 1.0)).exp()).abs() < 1e-15);
    }

    #[test]
    fn inverse_cdf_values() {
        let flat = IntensityHead::new(0.0, 0.0);
        assert_eq!(flat.inverse_cdf(0.0).unwrap(), Some(0.0));
        assert!((flat.inverse_cdf(0.5).unwrap().unwrap() - 2f64.ln()).abs() < 1e-15);
        let ramp = IntensityHead::new(0.0, 1.0);
        let y = ramp.cdf(1.0).unwrap();
        assert!((ramp.inverse_cdf(y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert!(flat.inverse_cdf(1.0).is_err());
        let decay = IntensityHead::new(0.0, -1.0);
        assert_eq!(decay.inverse_cdf(0.9).unwrap(), None);
    }

    #[test]
    fn expected_next_values() {
        let cfg = QuadConfig::default();
        let (m, d) = IntensityHead::new(0.0, 0.0).expected_next(&cfg).unwrap();
        assert!((m - 1.0).abs() < 1e-8 && !d);
        let (_, d) = IntensityHead::new(0.0, -1.0).expected_next(&cfg).unwrap();
        assert!(d);
        // Strongly decaying hazard whose mass is nearly all used: not defective.
        let (m, d) = IntensityHead::new(5.0, -0.01).expected_next(&cfg).unwrap();
        assert!(!d && m > 0.0 && m < 0.05);
    }
}
