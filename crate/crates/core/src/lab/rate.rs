//! Least-squares rate fits on log-log data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Confidence level of the reported slope interval.
pub const RATE_CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residual variance.
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateFit {
    pub fn contains(&self, rate: f64) -> bool {
        self.ci_low <= rate && rate <= self.ci_high
    }
}

/// Fits `log error = intercept + slope * log h`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPoints(pairs.len()));
    }
    if let Some(&(h, error)) = pairs.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0 && h.is_finite() && e.is_finite())) {
        return Err(Error::NonPositiveError { h, error });
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidPlan("rate fit needs at least two distinct h".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let dof = n - 2.0;
    let slope_stderr = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.5 + 0.5 * RATE_CONFIDENCE);
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr,
        ci_low: slope - t * slope_stderr,
        ci_high: slope + t * slope_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ladder() -> Vec<f64> {
        (3..=8).map(|l| 2f64.powi(-l)).collect()
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = ladder().iter().map(|&h| (h, 3.7 * h * h)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.7f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn constant_errors_have_zero_slope() {
        let pts: Vec<(f64, f64)> = ladder().iter().map(|&h| (h, 0.25)).collect();
        let fit = fit_rate(&pts).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(fit_rate(&[(0.5, 1.0), (0.25, 0.5)]), Err(Error::TooFewPoints(2))));
        assert!(matches!(
            fit_rate(&[(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)]),
            Err(Error::NonPositiveError { .. })
        ));
        assert!(fit_rate(&[(0.5, 1.0), (0.25, -1.0), (0.125, 0.1)]).is_err());
    }

    #[test]
    fn interval_covers_true_rate_on_noisy_data() {
        // h^1.5 with 5% multiplicative noise, 100 regenerations
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hits = (0..100)
            .filter(|_| {
                let pts: Vec<(f64, f64)> = ladder()
                    .iter()
                    .map(|&h| (h, h.powf(1.5) * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt())))
                    .collect();
                fit_rate(&pts).unwrap().contains(1.5)
            })
            .count();
        assert!(hits >= 90, "coverage {hits}/100");
    }
}
