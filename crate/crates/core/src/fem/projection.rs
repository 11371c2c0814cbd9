//! Load vectors and the projections `P_h`, `R_h` and `A_h^{-1} P_h`.
//!
//! Loads of eigenfunctions against hat functions are exact:
//!
//! ```text
//! <phi_i, chi_j> = sqrt(2) [ (sin kb - sin ka) / (k^2 h1) - (sin kc - sin kb) / (k^2 h2) ]
//! ```
//!
//! with `k = i pi`, `a < b < c` the nodes around `x_j = b`, `h1 = b - a`,
//! `h2 = c - b`. On a uniform mesh this is `sigma_i sqrt(2) sin(k x_j)` with
//! `sigma_i = 4 sin^2(k h / 2) / (k^2 h)`, and since `sin(i pi j h)` is periodic
//! in `i` with period `2 (N + 1)`, any number of modes folds into `N` sine
//! bins followed by a single sine transform.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use crate::dst::Dst;
use crate::error::{Error, Result};
use crate::fem::function::FemFunction;
use crate::fem::space::FemSpace;
use crate::quadrature::GaussLegendre;
use crate::spectral::{eigenvalue, SpectralVector};

#[derive(Debug, Clone)]
enum Route {
    Folded { sigma: Vec<f64> },
    /// `table[i * n + j] = <phi_{i+1}, chi_j>`.
    Dense { table: Vec<f64> },
}

/// The linear map `xi -> (sum_i xi_i <phi_i, chi_j>)_j` for the first `modes`
/// eigenfunctions, and its transpose.
#[derive(Debug, Clone)]
pub struct SineLoads {
    n: usize,
    modes: usize,
    route: Route,
}

/// Scratch for [`SineLoads`].
#[derive(Debug, Clone)]
pub struct LoadScratch {
    dst: Option<Dst>,
    bins: Vec<f64>,
}

impl SineLoads {
    /// Fastest exact route for `space`.
    pub fn new(space: &FemSpace, modes: usize) -> Result<Self> {
        if space.is_uniform() {
            Self::folded(space, modes)
        } else {
            Self::dense(space, modes)
        }
    }

    /// Tabulated closed form, valid on any mesh.
    pub fn dense(space: &FemSpace, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        let n = space.dim();
        let x = space.mesh().nodes();
        let mut table = vec![0.0; modes * n];
        for i in 1..=modes {
            let k = i as f64 * PI;
            let row = &mut table[(i - 1) * n..i * n];
            for (j, r) in row.iter_mut().enumerate() {
                let (a, b, c) = (x[j], x[j + 1], x[j + 2]);
                *r = SQRT_2 * (sine_difference(k, a, b) - sine_difference(k, b, c));
            }
        }
        Ok(SineLoads {
            n,
            modes,
            route: Route::Dense { table },
        })
    }

    fn folded(space: &FemSpace, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        let h = space.h();
        let sigma = (1..=modes)
            .map(|i| {
                let k = i as f64 * PI;
                let s = (0.5 * k * h).sin();
                SQRT_2 * 4.0 * s * s / (k * k * h)
            })
            .collect();
        Ok(SineLoads {
            n: space.dim(),
            modes,
            route: Route::Folded { sigma },
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn is_folded(&self) -> bool {
        matches!(self.route, Route::Folded { .. })
    }

    pub fn scratch(&self) -> LoadScratch {
        LoadScratch {
            dst: self.is_folded().then(|| Dst::new(self.n)),
            bins: vec![0.0; self.n],
        }
    }

    /// `<phi_i, chi_j>` for 1-based `i`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.route {
            Route::Dense { table } => table[(i - 1) * self.n + j],
            Route::Folded { sigma } => {
                let h = 1.0 / (self.n + 1) as f64;
                sigma[i - 1] * (i as f64 * PI * (j + 1) as f64 * h).sin()
            }
        }
    }

    /// `out_j = sum_i xi_i <phi_i, chi_j>`; `xi` may be shorter than `modes`.
    pub fn apply(&self, scratch: &mut LoadScratch, xi: &[f64], out: &mut [f64]) {
        assert!(xi.len() <= self.modes && out.len() == self.n);
        match &self.route {
            Route::Dense { table } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &x) in xi.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let row = &table[i * self.n..(i + 1) * self.n];
                    out.iter_mut().zip(row).for_each(|(o, r)| *o += x * r);
                }
            }
            Route::Folded { sigma } => {
                self.fold(sigma, xi, &mut scratch.bins);
                scratch.dst.as_mut().expect("folded loads need a transform").transform(&scratch.bins, out);
            }
        }
    }

    /// Folded sine bins of `xi` so that `DST(bins)` is the load vector; on
    /// dense routes this is unavailable and returns `false`.
    pub fn fold_into(&self, xi: &[f64], bins: &mut [f64]) -> bool {
        match &self.route {
            Route::Folded { sigma } => {
                self.fold(sigma, xi, bins);
                true
            }
            Route::Dense { .. } => false,
        }
    }

    fn fold(&self, sigma: &[f64], xi: &[f64], bins: &mut [f64]) {
        let n = self.n;
        let period = 2 * (n + 1);
        bins.iter_mut().for_each(|b| *b = 0.0);
        for (idx, (&x, &s)) in xi.iter().zip(sigma).enumerate() {
            let r = (idx + 1) % period;
            if r == 0 || r == n + 1 {
                continue;
            }
            if r <= n {
                bins[r - 1] += x * s;
            } else {
                bins[period - r - 1] -= x * s;
            }
        }
    }

    /// `out_i = sum_j c_j <phi_i, chi_j> = <phi_i, v_h>` for `i <= out.len()`.
    pub fn apply_transpose(&self, scratch: &mut LoadScratch, c: &[f64], out: &mut [f64]) {
        assert!(out.len() <= self.modes && c.len() == self.n);
        match &self.route {
            Route::Dense { table } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &table[i * self.n..(i + 1) * self.n];
                    *o = row.iter().zip(c).map(|(a, b)| a * b).sum();
                }
            }
            Route::Folded { sigma } => {
                let n = self.n;
                let period = 2 * (n + 1);
                scratch.dst.as_mut().expect("folded loads need a transform").transform(c, &mut scratch.bins);
                for (idx, o) in out.iter_mut().enumerate() {
                    let r = (idx + 1) % period;
                    *o = if r == 0 || r == n + 1 {
                        0.0
                    } else if r <= n {
                        sigma[idx] * scratch.bins[r - 1]
                    } else {
                        -sigma[idx] * scratch.bins[period - r - 1]
                    };
                }
            }
        }
    }
}

/// `(sin kb - sin ka) / (k^2 (b - a))` without cancellation.
fn sine_difference(k: f64, a: f64, b: f64) -> f64 {
    let w = b - a;
    2.0 * (0.5 * k * (a + b)).cos() * (0.5 * k * w).sin() / (k * k * w)
}

/// Right-hand side of a projection.
#[derive(Clone, Copy)]
pub enum Source<'a> {
    /// `sum_i v_i phi_i`, loads in closed form.
    Spectral(&'a SpectralVector),
    /// A pointwise function, loads by Gauss-Legendre quadrature of order 8 per element.
    Function(&'a dyn Fn(f64) -> f64),
}

impl std::fmt::Debug for Source<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Spectral(v) => f.debug_tuple("Spectral").field(v).finish(),
            Source::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Load vector `b_j = <f, chi_j>`.
pub fn load_vector(space: &FemSpace, source: Source<'_>) -> Result<Vec<f64>> {
    let n = space.dim();
    let mut b = vec![0.0; n];
    match source {
        Source::Spectral(v) => {
            if v.is_empty() {
                return Ok(b);
            }
            let loads = SineLoads::new(space, v.len())?;
            let mut scratch = loads.scratch();
            loads.apply(&mut scratch, v.coeffs(), &mut b);
        }
        Source::Function(f) => {
            let q = GaussLegendre::new(8);
            let x = space.mesh().nodes();
            for e in 0..x.len() - 1 {
                let (lo, hi) = (x[e], x[e + 1]);
                let w = hi - lo;
                // element e carries the right half of hat e-1 and the left half of hat e
                if e >= 1 {
                    b[e - 1] += q.integrate(lo, hi, |t| f(t) * (hi - t) / w);
                }
                if e < n {
                    b[e] += q.integrate(lo, hi, |t| f(t) * (t - lo) / w);
                }
            }
        }
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature);
    }
    Ok(b)
}

/// `P_h f`: solves `M c = b`.
pub fn l2_project(space: &Arc<FemSpace>, source: Source<'_>) -> Result<FemFunction> {
    let b = load_vector(space, source)?;
    FemFunction::new(space.clone(), space.mass_solve(&b))
}

/// `R_h u`: solves `K c = b` with `b_j = <A u, chi_j>`.
pub fn ritz_project(space: &Arc<FemSpace>, u: &SpectralVector) -> Result<FemFunction> {
    let au = SpectralVector::new(u.coeffs().iter().enumerate().map(|(i, c)| eigenvalue(i + 1) * c).collect());
    let b = load_vector(space, Source::Spectral(&au))?;
    FemFunction::new(space.clone(), space.stiffness_solve(&b))
}

/// `A_h^{-1} P_h f`: solves `K c = b` with `b_j = <f, chi_j>`.
pub fn elliptic_solve(space: &Arc<FemSpace>, source: Source<'_>) -> Result<FemFunction> {
    let b = load_vector(space, source)?;
    FemFunction::new(space.clone(), space.stiffness_solve(&b))
}
