//! Exact spectral calculus of the Dirichlet Laplacian on `(0, 1)`.
//!
//! The eigenpairs are `lambda_i = (i pi)^2` and `phi_i(x) = sqrt(2) sin(i pi x)`,
//! `i = 1, 2, ...`. A [`SpectralVector`] holds coordinates in this basis; its
//! first entry is the coefficient of `phi_1`. Binary operations between
//! vectors of different length zero-pad the shorter one.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::dst::Dst;
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::util::NeumaierSum;

/// `lambda_i` for the 1-based mode index `i`.
#[inline]
pub fn eigenvalue(i: usize) -> f64 {
    let k = i as f64 * PI;
    k * k
}

/// `phi_i(x)` for the 1-based mode index `i`.
#[inline]
pub fn eigenfunction(i: usize, x: f64) -> f64 {
    SQRT_2 * (i as f64 * PI * x).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralBasis {
    modes: usize,
}

impl SpectralBasis {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        Ok(SpectralBasis { modes })
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.modes).map(eigenvalue).collect()
    }

    pub fn eigenfunction(&self, i: usize, x: f64) -> f64 {
        eigenfunction(i, x)
    }

    /// Point value of `sum_i v_i phi_i(x)`.
    pub fn reconstruct(&self, v: &SpectralVector, x: f64) -> f64 {
        v.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * eigenfunction(i + 1, x))
            .sum()
    }

    /// Gauss-Legendre rule of order 8 on panels of length at most
    /// `1 / (4 * highest mode)`; resolves every oscillation of the basis.
    pub fn quadrature_panels(highest_mode: usize) -> usize {
        4 * highest_mode.max(1)
    }

    /// L2 norm of the reconstructed function, computed by quadrature rather
    /// than from the coefficients.
    pub fn quadrature_norm(&self, v: &SpectralVector) -> f64 {
        let q = GaussLegendre::new(8);
        let panels = Self::quadrature_panels(v.len());
        q.integrate_composite(0.0, 1.0, panels, |x| {
            let u = self.reconstruct(v, x);
            u * u
        })
        .sqrt()
    }

    /// `<phi_i, phi_j>` by quadrature.
    pub fn quadrature_inner(&self, i: usize, j: usize) -> f64 {
        let q = GaussLegendre::new(8);
        let panels = Self::quadrature_panels(i.max(j));
        q.integrate_composite(0.0, 1.0, panels, |x| eigenfunction(i, x) * eigenfunction(j, x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVector {
    coeffs: Vec<f64>,
}

impl SpectralVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        SpectralVector { coeffs }
    }

    pub fn zeros(modes: usize) -> Self {
        SpectralVector { coeffs: vec![0.0; modes] }
    }

    /// The basis vector `e_i` (1-based) in a space of `modes` modes.
    pub fn unit(i: usize, modes: usize) -> Self {
        let mut v = Self::zeros(modes.max(i));
        v.coeffs[i - 1] = 1.0;
        v
    }

    /// Spectral coefficients of a function, by quadrature.
    pub fn from_function<F: Fn(f64) -> f64>(f: F, modes: usize) -> Self {
        let q = GaussLegendre::new(8);
        let panels = SpectralBasis::quadrature_panels(modes);
        let coeffs = (1..=modes)
            .map(|i| q.integrate_composite(0.0, 1.0, panels, |x| f(x) * eigenfunction(i, x)))
            .collect();
        SpectralVector { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
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

    /// L2 norm (Parseval).
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SpectralVector) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum()
    }

    /// `||v||_{H^beta} = ||A^{beta/2} v||`.
    pub fn hdot_norm(&self, beta: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| eigenvalue(i + 1).powf(beta) * c * c)
            .sum::<f64>()
            .sqrt()
    }

    /// `A^gamma v`.
    pub fn apply_fractional(&self, gamma: f64) -> SpectralVector {
        if gamma == 0.0 {
            return self.clone();
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * eigenvalue(i + 1).powf(gamma))
            .collect();
        SpectralVector { coeffs }
    }

    /// `S(t) v = exp(-t A) v`.
    pub fn semigroup(&self, t: f64) -> Result<SpectralVector> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * (-eigenvalue(i + 1) * t).exp())
            .collect();
        Ok(SpectralVector { coeffs })
    }

    /// `P_m v`: zero all coefficients beyond mode `m`.
    pub fn project(&self, m: usize) -> Result<SpectralVector> {
        if m == 0 {
            return Err(Error::ZeroModes);
        }
        if m > self.len() {
            return Err(Error::ProjectionTooLarge {
                requested: m,
                available: self.len(),
            });
        }
        let mut coeffs = self.coeffs.clone();
        coeffs[m..].iter_mut().for_each(|c| *c = 0.0);
        Ok(SpectralVector { coeffs })
    }

    /// `self + a * other`, zero padding the shorter operand.
    pub fn axpy(&self, a: f64, other: &SpectralVector) -> SpectralVector {
        let n = self.len().max(other.len());
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n, 0.0);
        for (c, o) in coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
        SpectralVector { coeffs }
    }

    pub fn scale(&self, a: f64) -> SpectralVector {
        SpectralVector {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// Truncate or zero-pad to `modes` modes.
    pub fn resized(&self, modes: usize) -> SpectralVector {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(modes, 0.0);
        SpectralVector { coeffs }
    }
}

/// The covariance operator `Q`, diagonal in the eigenbasis of `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// `Q = I`.
    White,
    /// `Q = A^{-s}`.
    Fractional { s: f64 },
    /// `q_1, ..., q_K`; modes beyond `K` carry no noise.
    Diagonal { q: Vec<f64> },
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceSpec::White => Ok(()),
            CovarianceSpec::Fractional { s } => {
                if s.is_finite() && *s >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidCovariance(format!("fractional exponent must be >= 0, got {s}")))
                }
            }
            CovarianceSpec::Diagonal { q } => {
                if let Some((i, v)) = q.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                    Err(Error::InvalidCovariance(format!("q_{} = {v} is negative or not finite", i + 1)))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// `q_i` for the 1-based mode index `i`.
    #[inline]
    pub fn variance(&self, i: usize) -> f64 {
        match self {
            CovarianceSpec::White => 1.0,
            CovarianceSpec::Fractional { s } => eigenvalue(i).powf(-s),
            CovarianceSpec::Diagonal { q } => q.get(i - 1).copied().unwrap_or(0.0),
        }
    }

    pub fn variances(&self, modes: usize) -> Vec<f64> {
        (1..=modes).map(|i| self.variance(i)).collect()
    }

    /// Whether `Tr(Q) < infinity`.
    pub fn is_trace_class(&self) -> bool {
        match self {
            CovarianceSpec::White => false,
            CovarianceSpec::Fractional { s } => *s > 0.5,
            CovarianceSpec::Diagonal { .. } => true,
        }
    }

    /// Upper bound for `sum_{i > n} q_i * weight(lambda_i)` where `weight` is
    /// `lambda^{-p}`, `p >= 0`. Infinite when the series diverges.
    pub fn tail_bound(&self, n: usize, p: f64) -> f64 {
        match self {
            CovarianceSpec::Diagonal { q } => q
                .iter()
                .enumerate()
                .skip(n)
                .map(|(i, v)| v * eigenvalue(i + 1).powf(-p))
                .sum(),
            _ => {
                let s = match self {
                    CovarianceSpec::Fractional { s } => *s,
                    _ => 0.0,
                };
                // sum_{i>n} (i pi)^{-2(s+p)} <= int_n^inf (x pi)^{-2(s+p)} dx
                let e = 2.0 * (s + p);
                if e <= 1.0 {
                    f64::INFINITY
                } else {
                    (n as f64).powf(1.0 - e) / ((e - 1.0) * PI.powf(e))
                }
            }
        }
    }

    /// Truncated trace `sum_{i <= n} q_i` and the Cauchy increment
    /// `sum_{n < i <= 4n} q_i`.
    pub fn truncated_trace(&self, n: usize) -> (f64, f64) {
        let mut s = NeumaierSum::default();
        for i in 1..=n {
            s.add(self.variance(i));
        }
        let mut tail = NeumaierSum::default();
        for i in n + 1..=4 * n {
            tail.add(self.variance(i));
        }
        (s.value(), tail.value())
    }
}

/// Partial sums of `sum_i lambda_i^{beta - 1} q_i` at `N = 2^10, 2^12, 2^14`.
fn regularity_partial_sums(q: &CovarianceSpec, beta: f64) -> [f64; 3] {
    let checkpoints = [1usize << 10, 1 << 12, 1 << 14];
    let mut out = [0.0; 3];
    let mut sum = NeumaierSum::default();
    let mut next = 0;
    for i in 1..=checkpoints[2] {
        sum.add(eigenvalue(i).powf(beta - 1.0) * q.variance(i));
        if i == checkpoints[next] {
            out[next] = sum.value();
            next += 1;
        }
    }
    out
}

/// Partial-sum ratio test: for terms decaying like `i^{-p}` the ratio of
/// successive four-fold increments tends to `4^{1-p}`, which is below one
/// exactly when the series converges.
fn regularity_series_converges(q: &CovarianceSpec, beta: f64) -> bool {
    let [s10, s12, s14] = regularity_partial_sums(q, beta);
    let d1 = s12 - s10;
    let d2 = s14 - s12;
    if d1 <= 0.0 || d2 <= 0.0 {
        // no mass beyond 2^10: finite sum
        return d2 <= 0.0;
    }
    d2 / d1 < 1.0
}

/// Largest `beta <= 1` with `||A^{(beta-1)/2} Q^{1/2}||_HS < infinity`, found by
/// bisection to `tolerance`. The returned value lies on the convergent side.
pub fn regularity_beta(q: &CovarianceSpec, tolerance: f64) -> Result<f64> {
    q.validate()?;
    let tolerance = if tolerance > 0.0 { tolerance } else { 1e-6 };
    if regularity_series_converges(q, 1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    if !regularity_series_converges(q, lo) {
        // even beta = 0 diverges; move the bracket down until it converges
        while !regularity_series_converges(q, lo) {
            hi = lo;
            lo -= 1.0;
            if lo < -64.0 {
                return Err(Error::InvalidCovariance("no admissible regularity".into()));
            }
        }
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if regularity_series_converges(q, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Physical grid for Nemytskii maps on `m` modes: `2m - 1`
/// interior points `x_g = g / (2m)`, enough to keep quadratic products
/// free of aliasing in the first `m` modes. Synthesis and trapezoidal
/// re-expansion are carried out by a sine transform.
#[derive(Debug, Clone)]
pub struct NemytskiiGrid {
    modes: usize,
    points: usize,
    dst: Dst,
    tmp_a: Vec<f64>,
    tmp_b: Vec<f64>,
}

impl NemytskiiGrid {
    pub fn new(modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        let points = 2 * modes - 1;
        Ok(NemytskiiGrid {
            modes,
            points,
            dst: Dst::new(points),
            tmp_a: vec![0.0; points],
            tmp_b: vec![0.0; points],
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn node(&self, g: usize) -> f64 {
        (g + 1) as f64 / (self.points + 1) as f64
    }

    /// Grid values of `sum_i c_i phi_i`.
    pub fn synthesize(&mut self, coeffs: &[f64], values: &mut [f64]) {
        assert!(coeffs.len() <= self.modes && values.len() == self.points);
        self.dst.transform(coeffs, values);
        values.iter_mut().for_each(|v| *v *= SQRT_2);
    }

    pub fn synthesize_pair(&mut self, a: &[f64], b: &[f64], va: &mut [f64], vb: &mut [f64]) {
        self.dst.transform_pair(a, b, va, vb);
        va.iter_mut().chain(vb.iter_mut()).for_each(|v| *v *= SQRT_2);
    }

    /// First `coeffs.len()` spectral coefficients of the grid function.
    pub fn analyze(&mut self, values: &[f64], coeffs: &mut [f64]) {
        assert!(coeffs.len() <= self.modes && values.len() == self.points);
        self.dst.transform(values, coeffs);
        let s = SQRT_2 / (self.points + 1) as f64;
        coeffs.iter_mut().for_each(|c| *c *= s);
    }

    pub fn analyze_pair(&mut self, a: &[f64], b: &[f64], ca: &mut [f64], cb: &mut [f64]) {
        self.dst.transform_pair(a, b, ca, cb);
        let s = SQRT_2 / (self.points + 1) as f64;
        ca.iter_mut().chain(cb.iter_mut()).for_each(|c| *c *= s);
    }

    /// Spectral coefficients of `F(u)` for `u = sum_i c_i phi_i`.
    pub fn apply<F: Fn(f64) -> f64>(&mut self, f: F, coeffs: &[f64], out: &mut [f64]) {
        let mut vals = std::mem::take(&mut self.tmp_a);
        self.synthesize(coeffs, &mut vals);
        vals.iter_mut().for_each(|v| *v = f(*v));
        self.analyze(&vals, out);
        self.tmp_a = vals;
    }

    /// Scratch buffers of grid length, handed out for callers composing
    /// several transforms.
    pub fn scratch(&mut self) -> (Vec<f64>, Vec<f64>) {
        (std::mem::take(&mut self.tmp_a), std::mem::take(&mut self.tmp_b))
    }

    pub fn restore_scratch(&mut self, a: Vec<f64>, b: Vec<f64>) {
        self.tmp_a = a;
        self.tmp_b = b;
    }
}
