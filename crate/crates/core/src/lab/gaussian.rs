//! Exact laws for the linear additive model.
//!
//! With `f(v) = a v` (or zero) and additive noise every scheme is linear and
//! diagonal in the eigenbasis of the target operator, so the terminal state is
//! Gaussian. In eigen-coordinates `y`:
//!
//! ```text
//! y_{n+1,k} = rho_k y_{n,k} + kappa_k (B xi_n)_k,   rho_k = alpha_k (1 + a dt)
//! ```
//!
//! where `B = W^T L` maps noise modes to discrete eigen-coordinates (the
//! identity for the spectral reference). Hence `y_N` has mean `rho^N y_0` and
//! covariance `C_kl = dt (B Q B^T)_kl kappa_k kappa_l sum_{j<N} (rho_k rho_l)^j`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{l2_project, FemSpace, SineLoads, Source};
use crate::integrator::{ModelSpec, StepScheme, Target};
use crate::lab::testfn::TestFunction;
use crate::spectral::{eigenvalue, SpectralVector};

/// Gaussian terminal law in eigen-coordinates, with the coordinates of the
/// test direction.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// `l~` with `<X, w> = l~^T y`.
    pub direction: Option<DVector<f64>>,
}

impl GaussianLaw {
    /// `E[phi(X(T))]`. The coordinates are orthonormal in both targets, so
    /// `||X||^2 = y^T y`.
    pub fn expectation(&self, phi: &TestFunction) -> Result<f64> {
        match phi {
            TestFunction::Cosine { .. } => {
                let l = self
                    .direction
                    .as_ref()
                    .ok_or_else(|| Error::InvalidPlan("law was built without a direction".into()))?;
                let mu = l.dot(&self.mean);
                let var = (l.transpose() * &self.cov * l)[(0, 0)];
                Ok(mu.cos() * (-0.5 * var).exp())
            }
            TestFunction::Gauss => {
                // E exp(-y^T y) = det(I + 2C)^{-1/2} exp(-mu^T (I + 2C)^{-1} mu)
                let n = self.mean.len();
                let s = DMatrix::<f64>::identity(n, n) + &self.cov * 2.0;
                let chol = s
                    .cholesky()
                    .ok_or_else(|| Error::Eigen("I + 2C is not positive definite".into()))?;
                let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
                let x = chol.solve(&self.mean);
                Ok((-0.5 * log_det - self.mean.dot(&x)).exp())
            }
        }
    }
}

/// Exact law of the scheme's terminal state on `target` driven by `truncation` noise modes.
pub fn linear_gaussian_law(
    model: &ModelSpec,
    scheme: &StepScheme,
    target: &Target,
    truncation: usize,
    direction: Option<&SpectralVector>,
) -> Result<GaussianLaw> {
    let a = model
        .linear_coefficient()
        .filter(|_| model.is_linear_additive())
        .ok_or_else(|| Error::InvalidModel("closed-form law needs linear drift and additive noise".into()))?;
    let dt = scheme.dt();
    let steps = scheme.steps() as i32;
    let noisy = model.diffusion() != crate::integrator::Diffusion::Zero;
    let q = model.covariance().variances(truncation);

    // eigenvalues, initial coordinates, B Q^{1/2}, direction coordinates
    let (lambda, y0, g, dir): (Vec<f64>, DVector<f64>, DMatrix<f64>, Option<DVector<f64>>) = match target {
        Target::Spectral(m) => {
            let m = *m;
            let lambda = (1..=m).map(eigenvalue).collect();
            let y0 = DVector::from_vec(model.x0().resized(m).into_coeffs());
            let g = DMatrix::from_fn(m, truncation, |k, i| if k == i { q[i].sqrt() } else { 0.0 });
            let dir = direction.map(|w| DVector::from_vec(w.resized(m).into_coeffs()));
            (lambda, y0, g, dir)
        }
        Target::Fem(space) => fem_coordinates(model, space, truncation, &q, direction)?,
    };

    let n = lambda.len();
    let factors: Vec<(f64, f64)> = lambda.iter().map(|&l| scheme.kind().factors(l, dt)).collect();
    let rho: Vec<f64> = factors.iter().map(|(al, _)| al * (1.0 + a * dt)).collect();
    let mean = DVector::from_fn(n, |k, _| rho[k].powi(steps) * y0[k]);
    let cov = if noisy {
        let ggt = &g * g.transpose();
        DMatrix::from_fn(n, n, |k, l| {
            let r = rho[k] * rho[l];
            let geo = if (1.0 - r).abs() < 1e-14 {
                steps as f64
            } else {
                (1.0 - r.powi(steps)) / (1.0 - r)
            };
            dt * ggt[(k, l)] * factors[k].1 * factors[l].1 * geo
        })
    } else {
        DMatrix::zeros(n, n)
    };
    Ok(GaussianLaw {
        mean,
        cov,
        direction: dir,
    })
}

#[allow(clippy::type_complexity)]
fn fem_coordinates(
    model: &ModelSpec,
    space: &Arc<FemSpace>,
    truncation: usize,
    q: &[f64],
    direction: Option<&SpectralVector>,
) -> Result<(Vec<f64>, DVector<f64>, DMatrix<f64>, Option<DVector<f64>>)> {
    let n = space.dim();
    let mut ws = space.workspace();
    let c0 = l2_project(space, Source::Spectral(model.x0()))?;
    let mut y0 = vec![0.0; n];
    space.to_eigen(&mut ws, c0.coeffs(), &mut y0);

    let loads = SineLoads::new(space, truncation)?;
    let mut g = DMatrix::zeros(n, truncation);
    let mut col = vec![0.0; n];
    let mut coords = vec![0.0; n];
    for i in 0..truncation {
        for (j, c) in col.iter_mut().enumerate() {
            *c = loads.entry(i + 1, j);
        }
        space.load_to_eigen(&mut ws, &col, &mut coords);
        for k in 0..n {
            g[(k, i)] = coords[k] * q[i].sqrt();
        }
    }

    let dir = match direction {
        None => None,
        Some(w) => {
            let wl = SineLoads::new(space, w.len().max(1))?;
            let mut ell = vec![0.0; n];
            wl.apply(&mut wl.scratch(), w.coeffs(), &mut ell);
            let mut lt = vec![0.0; n];
            space.load_to_eigen(&mut ws, &ell, &mut lt);
            Some(DVector::from_vec(lt))
        }
    };
    Ok((space.eigenvalues().to_vec(), DVector::from_vec(y0), g, dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Diffusion, Drift, FemStepper, SchemeKind, SpectralStepper};
    use crate::noise::WienerConfig;
    use crate::spectral::CovarianceSpec;

    fn model() -> ModelSpec {
        ModelSpec::new(
            Drift::Linear { a: 0.5 },
            Diffusion::Additive,
            CovarianceSpec::Fractional { s: 0.75 },
            SpectralVector::new(vec![0.8, 0.0, 0.3]),
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn rejects_nonlinear_models() {
        let m = ModelSpec::new(Drift::Sin, Diffusion::Additive, CovarianceSpec::Fractional { s: 1.0 }, SpectralVector::zeros(1), 0.1).unwrap();
        let s = StepScheme::new(SchemeKind::ExponentialEuler, 0.01, 0.1).unwrap();
        assert!(linear_gaussian_law(&m, &s, &Target::Spectral(4), 4, None).is_err());
    }

    #[test]
    fn deterministic_mean_matches_stepping() {
        let m = ModelSpec::new(Drift::Linear { a: 0.5 }, Diffusion::Zero, CovarianceSpec::White, SpectralVector::new(vec![0.8, 0.0, 0.3]), 0.05).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialOu, 0.005, 0.05).unwrap();
        let space = Arc::new(FemSpace::uniform(16).unwrap());
        let law = linear_gaussian_law(&m, &scheme, &Target::Fem(space.clone()), 16, None).unwrap();
        let mut c = l2_project(&space, Source::Spectral(m.x0())).unwrap().into_coeffs();
        let mut st = FemStepper::new(&m, &scheme, space.clone(), 16).unwrap();
        for _ in 0..scheme.steps() {
            st.step(&mut c, &[]);
        }
        let mut y = vec![0.0; 15];
        space.to_eigen(&mut space.workspace(), &c, &mut y);
        for (a, b) in y.iter().zip(law.mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let phi = TestFunction::Gauss;
        let norm2 = space.mass_inner(&c, &c);
        assert!((law.expectation(&phi).unwrap() - (-norm2).exp()).abs() < 1e-12);
    }

    #[test]
    fn spectral_law_matches_monte_carlo() {
        let m = model();
        let scheme = StepScheme::new(SchemeKind::ExponentialOu, 0.005, 0.05).unwrap();
        let modes = 8;
        let law = linear_gaussian_law(&m, &scheme, &Target::Spectral(modes), modes, Some(&SpectralVector::unit(1, 1))).unwrap();
        let cfg = WienerConfig::new(modes, m.covariance().clone(), 4).unwrap();
        let mut stepper = SpectralStepper::new(&m, &scheme, modes).unwrap();
        let mut xi = vec![0.0; modes];
        let n = 20_000;
        let vals: Vec<f64> = (0..n)
            .map(|s| {
                let mut st = cfg.stream(s);
                let mut x = m.x0().resized(modes).into_coeffs();
                for _ in 0..scheme.steps() {
                    st.fill_increment(scheme.dt(), &mut xi).unwrap();
                    stepper.step(&mut x, &xi);
                }
                x.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let gauss: Vec<f64> = vals.iter().map(|v| (-v).exp()).collect();
        let (mean, se) = crate::noise::mean_and_stderr(&gauss);
        let exact = law.expectation(&TestFunction::Gauss).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn fem_law_matches_monte_carlo() {
        let m = model();
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 0.005, 0.05).unwrap();
        let space = Arc::new(FemSpace::uniform(8).unwrap());
        let k = 16;
        let w = SpectralVector::unit(1, 1);
        let law = linear_gaussian_law(&m, &scheme, &Target::Fem(space.clone()), k, Some(&w)).unwrap();
        let cfg = WienerConfig::new(k, m.covariance().clone(), 9).unwrap();
        let mut stepper = FemStepper::new(&m, &scheme, space.clone(), k).unwrap();
        let c0 = l2_project(&space, Source::Spectral(m.x0())).unwrap().into_coeffs();
        let loads = SineLoads::new(&space, 1).unwrap();
        let mut xi = vec![0.0; k];
        let mut proj = vec![0.0; 1];
        let n = 20_000;
        let vals: Vec<f64> = (0..n)
            .map(|s| {
                let mut st = cfg.stream(s);
                let mut c = c0.clone();
                for _ in 0..scheme.steps() {
                    st.fill_increment(scheme.dt(), &mut xi).unwrap();
                    stepper.step(&mut c, &xi);
                }
                loads.apply_transpose(&mut loads.scratch(), &c, &mut proj);
                proj[0].cos()
            })
            .collect();
        let (mean, se) = crate::noise::mean_and_stderr(&vals);
        let exact = law.expectation(&TestFunction::Cosine { w }).unwrap();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    }
}
