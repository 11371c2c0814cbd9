use serde::{Deserialize, Serialize};

use crate::spectral::SpectralVector;

/// Test functionals with bounded first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `exp(-||v||^2)`.
    Gauss,
    /// `cos <v, w>`.
    Cosine { w: SpectralVector },
}

impl TestFunction {
    /// `cos <v, phi_1>`.
    pub fn cosine_phi1() -> Self {
        TestFunction::Cosine {
            w: SpectralVector::unit(1, 1),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Gauss => "gauss",
            TestFunction::Cosine { .. } => "cosine",
        }
    }

    /// Direction `w` whose inner product the functional needs, if any.
    pub fn direction(&self) -> Option<&SpectralVector> {
        match self {
            TestFunction::Gauss => None,
            TestFunction::Cosine { w } => Some(w),
        }
    }

    /// Evaluates from `||v||^2` and `<v, w>`.
    #[inline]
    pub fn eval_parts(&self, norm_sq: f64, inner_w: f64) -> f64 {
        match self {
            TestFunction::Gauss => (-norm_sq).exp(),
            TestFunction::Cosine { .. } => inner_w.cos(),
        }
    }

    pub fn eval_spectral(&self, v: &SpectralVector) -> f64 {
        let inner = self.direction().map_or(0.0, |w| w.dot(v));
        self.eval_parts(v.norm().powi(2), inner)
    }

    /// `(sup ||D phi||, sup ||D^2 phi||)`. For the Gaussian the first is
    /// attained at `||v|| = 1/sqrt(2)`, the second at `v = 0`.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        match self {
            TestFunction::Gauss => (std::f64::consts::SQRT_2 * (-0.5f64).exp(), 2.0),
            TestFunction::Cosine { w } => (w.norm(), w.norm().powi(2)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let v = SpectralVector::new(vec![0.3, 0.4]);
        assert!((TestFunction::Gauss.eval_spectral(&v) - (-0.25f64).exp()).abs() < 1e-15);
        assert!((TestFunction::cosine_phi1().eval_spectral(&v) - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn gauss_derivative_bounds_hold_along_rays() {
        let (d1, d2) = TestFunction::Gauss.derivative_bounds();
        // radial profile exp(-r^2): first derivative 2 r e^{-r^2}, second |4 r^2 - 2| e^{-r^2}
        for k in 0..2000 {
            let r = k as f64 * 0.002;
            let e = (-r * r).exp();
            assert!(2.0 * r * e <= d1 + 1e-12);
            assert!((4.0 * r * r - 2.0).abs() * e <= d2 + 1e-12);
            assert!(2.0 * e <= d2 + 1e-12);
        }
    }
}
