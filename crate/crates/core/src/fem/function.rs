use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::projection::SineLoads;
use crate::fem::space::FemSpace;
use crate::spectral::SpectralVector;

/// Element of `V_h` given by its interior nodal values.
#[derive(Debug, Clone)]
pub struct FemFunction {
    space: Arc<FemSpace>,
    coeffs: Vec<f64>,
}

impl FemFunction {
    pub fn new(space: Arc<FemSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: coeffs.len(),
            });
        }
        Ok(FemFunction { space, coeffs })
    }

    pub fn zeros(space: Arc<FemSpace>) -> Self {
        let n = space.dim();
        FemFunction {
            space,
            coeffs: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate<F: Fn(f64) -> f64>(space: Arc<FemSpace>, f: F) -> Self {
        let coeffs = space.mesh().interior_nodes().iter().map(|&x| f(x)).collect();
        FemFunction { space, coeffs }
    }

    /// The `k`-th discrete eigenfunction (1-based), `M`-normalised.
    pub fn eigenvector(space: Arc<FemSpace>, k: usize) -> Self {
        let coeffs = space.eigenvectors().column(k - 1).iter().copied().collect();
        FemFunction { space, coeffs }
    }

    pub fn space(&self) -> &Arc<FemSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `sqrt(c^T M c)`.
    pub fn l2_norm(&self) -> f64 {
        self.space.mass_inner(&self.coeffs, &self.coeffs).max(0.0).sqrt()
    }

    /// `sqrt(c^T K c) = ||grad v_h|| = ||A_h^{1/2} v_h||`.
    pub fn h1_seminorm(&self) -> f64 {
        self.space.stiffness_inner(&self.coeffs, &self.coeffs).max(0.0).sqrt()
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let nodes = self.space.mesh().nodes();
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let e = nodes.partition_point(|&p| p <= x).clamp(1, nodes.len() - 1) - 1;
        let (lo, hi) = (nodes[e], nodes[e + 1]);
        let n = self.coeffs.len();
        let left = if e >= 1 { self.coeffs[e - 1] } else { 0.0 };
        let right = if e < n { self.coeffs[e] } else { 0.0 };
        left + (right - left) * (x - lo) / (hi - lo)
    }

    /// `g(A_h) v` for a scalar function of the discrete eigenvalues.
    pub fn apply_function<G: Fn(f64) -> f64>(&self, g: G) -> FemFunction {
        let mut ws = self.space.workspace();
        let mut out = vec![0.0; self.coeffs.len()];
        self.space.apply_function(&mut ws, g, &self.coeffs, &mut out);
        FemFunction {
            space: self.space.clone(),
            coeffs: out,
        }
    }

    /// `A_h^gamma v`.
    pub fn apply_ah_power(&self, gamma: f64) -> FemFunction {
        if gamma == 0.0 {
            return self.clone();
        }
        self.apply_function(|l| l.powf(gamma))
    }

    /// `S_h(t) v = exp(-t A_h) v`.
    pub fn semigroup_h(&self, t: f64) -> Result<FemFunction> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        Ok(self.apply_function(|l| (-l * t).exp()))
    }

    /// `<v_h, phi_i>` for `i = 1..=modes`.
    pub fn spectral_coefficients(&self, modes: usize) -> SpectralVector {
        let loads = SineLoads::new(&self.space, modes.max(1)).expect("positive mode count");
        let mut scratch = loads.scratch();
        let mut out = vec![0.0; modes];
        loads.apply_transpose(&mut scratch, &self.coeffs, &mut out);
        SpectralVector::new(out)
    }

    /// `||u - v_h||` for a finite spectral vector `u`, exactly:
    /// `||u||^2 - 2 sum_i u_i <phi_i, v_h> + c^T M c`.
    pub fn l2_distance_to(&self, u: &SpectralVector) -> f64 {
        let cross = if u.is_empty() {
            0.0
        } else {
            self.spectral_coefficients(u.len()).dot(u)
        };
        let d2 = u.norm().powi(2) - 2.0 * cross + self.l2_norm().powi(2);
        d2.max(0.0).sqrt()
    }

    /// `||grad(u - v_h)||`, using `<grad u, grad v_h> = <A u, v_h>`.
    pub fn h1_distance_to(&self, u: &SpectralVector) -> f64 {
        let cross = if u.is_empty() {
            0.0
        } else {
            let au = u.apply_fractional(1.0);
            self.spectral_coefficients(u.len()).dot(&au)
        };
        let d2 = u.apply_fractional(0.5).norm().powi(2) - 2.0 * cross + self.h1_seminorm().powi(2);
        d2.max(0.0).sqrt()
    }

    pub fn sub(&self, other: &FemFunction) -> Result<FemFunction> {
        if !Arc::ptr_eq(&self.space, &other.space) && self.coeffs.len() != other.coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coeffs.len(),
                got: other.coeffs.len(),
            });
        }
        Ok(FemFunction {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect(),
        })
    }
}
