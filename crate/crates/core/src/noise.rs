//! Truncated `Q`-Wiener increments in eigen-coordinates of `A`.
//!
//! Coordinate `i` of an increment over `dt` is `sqrt(q_i dt) xi_i` with
//! `xi_i ~ N(0, 1)`. Every block of [`MODE_BLOCK`] modes draws from its own
//! ChaCha8 stream keyed by `(seed, sample, step, block)`, so an increment is
//! reproducible from its key alone, independent of thread schedule, and its
//! leading modes do not depend on the truncation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{FemFunction, FemSpace, SineLoads};
use crate::spectral::{eigenvalue, CovarianceSpec};
use crate::util::NeumaierSum;

/// Modes per random stream.
pub const MODE_BLOCK: usize = 256;

/// `|z|` threshold of the statistical checks.
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct WienerConfig {
    truncation: usize,
    covariance: CovarianceSpec,
    seed: u64,
    sqrt_q: Arc<Vec<f64>>,
}

impl WienerConfig {
    pub fn new(truncation: usize, covariance: CovarianceSpec, seed: u64) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::ZeroModes);
        }
        covariance.validate()?;
        let sqrt_q = Arc::new(covariance.variances(truncation).into_iter().map(f64::sqrt).collect());
        Ok(WienerConfig {
            truncation,
            covariance,
            seed,
            sqrt_q,
        })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        &self.covariance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `K >= N_h`: every discrete mode of the finest space sees noise.
    pub fn check_coupling(&self, finest_dim: usize) -> Result<()> {
        if self.truncation < finest_dim {
            return Err(Error::InvalidPlan(format!(
                "noise truncation {} is below the finest space dimension {finest_dim}",
                self.truncation
            )));
        }
        Ok(())
    }

    /// `sum_{i > K} q_i / (2 lambda_i)`: stationary variance carried by the
    /// discarded modes.
    pub fn tail_variance(&self) -> f64 {
        0.5 * self.covariance.tail_bound(self.truncation, 1.0)
    }

    pub fn stream(&self, sample: u64) -> NoiseStream {
        NoiseStream {
            seed: self.seed,
            sample,
            step: 0,
            sqrt_q: self.sqrt_q.clone(),
        }
    }
}

/// Increments of one Monte Carlo sample, one step at a time.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    sample: u64,
    step: u64,
    sqrt_q: Arc<Vec<f64>>,
}

impl NoiseStream {
    pub fn sample(&self) -> u64 {
        self.sample
    }

    /// Index of the next step to be drawn.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }

    pub fn truncation(&self) -> usize {
        self.sqrt_q.len()
    }

    fn block_rng(&self, block: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.sample.to_le_bytes());
        key[16..24].copy_from_slice(&self.step.to_le_bytes());
        key[24..].copy_from_slice(&(block as u64).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// Standard normals for the current step's first `out.len()` modes; advances.
    pub fn fill_standard(&mut self, out: &mut [f64]) {
        assert!(out.len() <= self.truncation(), "more modes than the truncation");
        for (b, chunk) in out.chunks_mut(MODE_BLOCK).enumerate() {
            let mut rng = self.block_rng(b);
            for v in chunk {
                *v = rng.sample(StandardNormal);
            }
        }
        self.step += 1;
    }

    /// Increment coordinates `sqrt(q_i dt) xi_i`; advances.
    pub fn fill_increment(&mut self, dt: f64, out: &mut [f64]) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        self.fill_standard(out);
        let s = dt.sqrt();
        out.iter_mut().zip(self.sqrt_q.iter()).for_each(|(v, q)| *v *= q * s);
        Ok(())
    }

    pub fn sample_increment(&mut self, dt: f64) -> Result<WienerIncrement> {
        let mut coords = vec![0.0; self.truncation()];
        self.fill_increment(dt, &mut coords)?;
        Ok(WienerIncrement { dt, coords })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WienerIncrement {
    pub dt: f64,
    pub coords: Vec<f64>,
}

impl WienerIncrement {
    pub fn new(dt: f64, coords: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        Ok(WienerIncrement { dt, coords })
    }

    pub fn truncation(&self) -> usize {
        self.coords.len()
    }

    /// `a x + b y` over the longer of the two truncations.
    pub fn combine(a: f64, x: &WienerIncrement, b: f64, y: &WienerIncrement) -> WienerIncrement {
        let n = x.coords.len().max(y.coords.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        WienerIncrement {
            dt: x.dt,
            coords: (0..n).map(|i| a * get(&x.coords, i) + b * get(&y.coords, i)).collect(),
        }
    }
}

/// `P_h (sum_i xi_i phi_i)`: solves `M c = b` with `b_j = sum_i xi_i <phi_i, chi_j>`.
pub fn embed_in_fem(inc: &WienerIncrement, space: &Arc<FemSpace>) -> Result<FemFunction> {
    if inc.coords.is_empty() {
        return Ok(FemFunction::zeros(space.clone()));
    }
    let loads = SineLoads::new(space, inc.coords.len())?;
    let mut scratch = loads.scratch();
    let mut b = vec![0.0; space.dim()];
    loads.apply(&mut scratch, &inc.coords, &mut b);
    FemFunction::new(space.clone(), space.mass_solve(&b))
}

/// Deterministic integrands for the Ito isometry check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Integrand {
    Zero,
    /// `Phi = I` on the first `modes` modes.
    Identity { modes: usize },
    /// `Phi(t) = S(T - t)` on the first `modes` modes.
    HeatKernel { modes: usize },
}

impl Integrand {
    pub fn name(&self) -> &'static str {
        match self {
            Integrand::Zero => "zero",
            Integrand::Identity { .. } => "identity",
            Integrand::HeatKernel { .. } => "heat_kernel",
        }
    }

    fn modes(&self) -> usize {
        match self {
            Integrand::Zero => 0,
            Integrand::Identity { modes } | Integrand::HeatKernel { modes } => *modes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub integrand: String,
    pub final_time: f64,
    pub dt: f64,
    pub samples: usize,
    /// Sample mean of `||sum_n Phi_n dW_n||^2`.
    pub empirical: f64,
    /// `int_0^T ||Phi(t) Q^{1/2}||_HS^2 dt`.
    pub analytic: f64,
    /// `sum_n dt ||Phi_n Q^{1/2}||_HS^2`, the exact second moment of the sampled sum.
    pub discrete: f64,
    /// `discrete - analytic`.
    pub quadrature_bias: f64,
    pub stderr: f64,
    pub z: f64,
    pub passed: bool,
}

/// Compares the sample second moment of `sum_n Phi(s_n) dW_n` with the Ito
/// isometry. The heat kernel is evaluated at interval midpoints
/// `s_n = (n + 1/2) dt`, whose second moment differs from the continuous one
/// by the factor `x / sinh x`, `x = lambda_i dt`, per mode; that bias is
/// reported separately.
pub fn ito_isometry_check(
    integrand: Integrand,
    config: &WienerConfig,
    final_time: f64,
    dt: f64,
    samples: usize,
) -> Result<ItoReport> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidTimeStep(dt));
    }
    if !(final_time > 0.0 && final_time.is_finite()) {
        return Err(Error::NegativeTime(final_time));
    }
    let steps = (final_time / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - final_time).abs() > 1e-9 * final_time {
        return Err(Error::InvalidTimeStep(dt));
    }
    if samples < 2 {
        return Err(Error::InvalidPlan("at least two samples are needed".into()));
    }
    let modes = integrand.modes();
    if modes > config.truncation() {
        return Err(Error::ProjectionTooLarge {
            requested: modes,
            available: config.truncation(),
        });
    }
    let q = config.covariance().variances(modes);
    let lambda: Vec<f64> = (1..=modes).map(eigenvalue).collect();

    let (analytic, discrete, weights) = match integrand {
        Integrand::Zero => {
            return Ok(ItoReport {
                integrand: integrand.name().into(),
                final_time,
                dt,
                samples,
                empirical: 0.0,
                analytic: 0.0,
                discrete: 0.0,
                quadrature_bias: 0.0,
                stderr: 0.0,
                z: 0.0,
                passed: true,
            })
        }
        Integrand::Identity { .. } => {
            let a: f64 = q.iter().map(|qi| qi * final_time).collect::<NeumaierSum>().value();
            (a, a, None)
        }
        Integrand::HeatKernel { .. } => {
            let analytic = q
                .iter()
                .zip(&lambda)
                .map(|(qi, l)| qi * -(-2.0 * l * final_time).exp_m1() / (2.0 * l))
                .collect::<NeumaierSum>()
                .value();
            let discrete = q
                .iter()
                .zip(&lambda)
                .map(|(qi, l)| {
                    let x = l * dt;
                    qi * -(-2.0 * l * final_time).exp_m1() / (2.0 * l) * (x / x.sinh())
                })
                .collect::<NeumaierSum>()
                .value();
            let weights: Vec<f64> = (0..steps)
                .flat_map(|n| {
                    let tau = final_time - (n as f64 + 0.5) * dt;
                    lambda.iter().map(move |l| (-l * tau).exp())
                })
                .collect();
            (analytic, discrete, Some(weights))
        }
    };

    let values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut stream = config.stream(s);
            let mut inc = vec![0.0; modes];
            let mut acc = vec![0.0; modes];
            for n in 0..steps {
                stream.fill_increment(dt, &mut inc).expect("validated step");
                match &weights {
                    None => acc.iter_mut().zip(&inc).for_each(|(a, x)| *a += x),
                    Some(w) => {
                        let w = &w[n * modes..(n + 1) * modes];
                        for ((a, x), wi) in acc.iter_mut().zip(&inc).zip(w) {
                            *a += wi * x;
                        }
                    }
                }
            }
            acc.iter().map(|a| a * a).sum()
        })
        .collect();

    let (mean, stderr) = mean_and_stderr(&values);
    let z = if stderr > 0.0 { (mean - analytic) / stderr } else { 0.0 };
    Ok(ItoReport {
        integrand: integrand.name().into(),
        final_time,
        dt,
        samples,
        empirical: mean,
        analytic,
        discrete,
        quadrature_bias: discrete - analytic,
        stderr,
        z,
        passed: z.abs() < Z_THRESHOLD,
    })
}

/// Compensated sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().copied().collect::<NeumaierSum>().value() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).collect::<NeumaierSum>().value() / (n - 1.0);
    (mean, (var / n).sqrt())
}
