//! P1 finite-element space on a [`Mesh1D`] with its discrete Laplacian.
//!
//! The mass matrix `M` and stiffness matrix `K` are assembled exactly. The
//! discrete Laplacian `A_h = M^{-1} K` is diagonalised once through the
//! generalized symmetric problem `K w = lambda M w` with `M`-orthonormal
//! eigenvectors, so every function of `A_h` (powers, the semigroup, the
//! exponential-integrator factors) is exact up to rounding.
//!
//! On uniform meshes the eigenvectors are discrete sine vectors and the same
//! functional calculus runs through a sine transform; [`FemWorkspace`] picks
//! that route automatically. The dense route stays available for checking.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::dst::Dst;
use crate::error::{Error, Result};
use crate::fem::mesh::Mesh1D;
use crate::util::{solve_tridiagonal, tridiagonal_mul};

/// Largest interior node count handled by the dense eigensolver.
pub const MAX_DENSE_NODES: usize = 2048;

#[derive(Debug, Clone)]
struct UniformFactors {
    h: f64,
    /// `h sqrt(2 (2 + cos theta_k) / 3)`: maps `DST(c)` to `W^T M c`.
    mass_scale: Vec<f64>,
    /// `sqrt(6 / (2 + cos theta_k))`: maps `DST(b)` to `W^T b`, and `y` to
    /// the DST input of `W y`.
    load_scale: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: Mesh1D,
    mass_diag: Vec<f64>,
    mass_off: Vec<f64>,
    stiff_diag: Vec<f64>,
    stiff_off: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    uniform: Option<UniformFactors>,
}

impl FemSpace {
    pub fn assemble(mesh: Mesh1D) -> Result<Self> {
        let n = mesh.interior_count();
        if n == 0 {
            return Err(Error::InvalidMesh("no interior nodes".into()));
        }
        if n > MAX_DENSE_NODES {
            return Err(Error::MeshTooLarge(n));
        }
        let w = mesh.widths();
        let mut mass_diag = vec![0.0; n];
        let mut stiff_diag = vec![0.0; n];
        let mut mass_off = vec![0.0; n - 1];
        let mut stiff_off = vec![0.0; n - 1];
        for i in 0..n {
            let (left, right) = (w[i], w[i + 1]);
            mass_diag[i] = (left + right) / 3.0;
            stiff_diag[i] = 1.0 / left + 1.0 / right;
            if i + 1 < n {
                mass_off[i] = right / 6.0;
                stiff_off[i] = -1.0 / right;
            }
        }

        let (eigenvalues, eigenvectors) = generalized_eigen(&mass_diag, &mass_off, &stiff_diag, &stiff_off)?;

        let uniform = mesh.is_uniform().then(|| {
            let h = 1.0 / (n + 1) as f64;
            let cos: Vec<f64> = (1..=n).map(|k| (k as f64 * std::f64::consts::PI * h).cos()).collect();
            UniformFactors {
                h,
                mass_scale: cos.iter().map(|c| h * (2.0 * (2.0 + c) / 3.0).sqrt()).collect(),
                load_scale: cos.iter().map(|c| (6.0 / (2.0 + c)).sqrt()).collect(),
            }
        });

        Ok(FemSpace {
            mesh,
            mass_diag,
            mass_off,
            stiff_diag,
            stiff_off,
            eigenvalues,
            eigenvectors,
            uniform,
        })
    }

    pub fn uniform(intervals: usize) -> Result<Self> {
        Self::assemble(Mesh1D::uniform(intervals)?)
    }

    /// Uniform space with `h = 2^-level`.
    pub fn dyadic(level: u32) -> Result<Self> {
        Self::assemble(Mesh1D::dyadic(level)?)
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    /// `N_h`, the number of interior nodes.
    pub fn dim(&self) -> usize {
        self.mass_diag.len()
    }

    pub fn h(&self) -> f64 {
        self.mesh.h_max()
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform.is_some()
    }

    pub fn mass_tridiagonal(&self) -> (&[f64], &[f64]) {
        (&self.mass_diag, &self.mass_off)
    }

    pub fn stiffness_tridiagonal(&self) -> (&[f64], &[f64]) {
        (&self.stiff_diag, &self.stiff_off)
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        tridiagonal_dense(&self.mass_diag, &self.mass_off)
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        tridiagonal_dense(&self.stiff_diag, &self.stiff_off)
    }

    /// Discrete eigenvalues `lambda_1^h <= ... <= lambda_{N_h}^h`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `M`-orthonormal eigenvectors as columns.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn mass_mul(&self, x: &[f64], y: &mut [f64]) {
        tridiagonal_mul(&self.mass_diag, &self.mass_off, x, y);
    }

    pub fn stiffness_mul(&self, x: &[f64], y: &mut [f64]) {
        tridiagonal_mul(&self.stiff_diag, &self.stiff_off, x, y);
    }

    /// `M^{-1} b` in place.
    pub fn mass_solve_in_place(&self, b: &mut [f64], work: &mut [f64]) {
        solve_tridiagonal(&self.mass_diag, &self.mass_off, b, work);
    }

    /// `K^{-1} b` in place.
    pub fn stiffness_solve_in_place(&self, b: &mut [f64], work: &mut [f64]) {
        solve_tridiagonal(&self.stiff_diag, &self.stiff_off, b, work);
    }

    pub fn mass_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut work = vec![0.0; b.len()];
        self.mass_solve_in_place(&mut x, &mut work);
        x
    }

    pub fn stiffness_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        let mut work = vec![0.0; b.len()];
        self.stiffness_solve_in_place(&mut x, &mut work);
        x
    }

    /// `(M + a K) x = b` in place.
    pub fn shifted_solve_in_place(&self, a: f64, b: &mut [f64], diag: &mut [f64], off: &mut [f64], work: &mut [f64]) {
        for i in 0..self.dim() {
            diag[i] = self.mass_diag[i] + a * self.stiff_diag[i];
        }
        for i in 0..self.dim().saturating_sub(1) {
            off[i] = self.mass_off[i] + a * self.stiff_off[i];
        }
        solve_tridiagonal(diag, off, b, work);
    }

    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut mb = vec![0.0; b.len()];
        self.mass_mul(b, &mut mb);
        a.iter().zip(&mb).map(|(x, y)| x * y).sum()
    }

    pub fn stiffness_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut kb = vec![0.0; b.len()];
        self.stiffness_mul(b, &mut kb);
        a.iter().zip(&kb).map(|(x, y)| x * y).sum()
    }

    /// Workspace using the fastest available route.
    pub fn workspace(&self) -> FemWorkspace {
        FemWorkspace::new(self.dim(), self.uniform.is_some())
    }

    /// Workspace forced onto the dense eigenvector route.
    pub fn dense_workspace(&self) -> FemWorkspace {
        FemWorkspace::new(self.dim(), false)
    }

    /// `out = W^T M c`: coordinates of `c` in the discrete eigenbasis.
    pub fn to_eigen(&self, ws: &mut FemWorkspace, c: &[f64], out: &mut [f64]) {
        match (&self.uniform, ws.dst.as_mut()) {
            (Some(u), Some(dst)) => {
                dst.transform(c, out);
                out.iter_mut().zip(&u.mass_scale).for_each(|(o, s)| *o *= s);
            }
            _ => {
                self.mass_mul(c, &mut ws.tmp);
                self.dense_transpose_mul(&ws.tmp, out);
            }
        }
    }

    /// `out = W^T b` for a load vector `b` (entries `<f, chi_j>`).
    pub fn load_to_eigen(&self, ws: &mut FemWorkspace, b: &[f64], out: &mut [f64]) {
        match (&self.uniform, ws.dst.as_mut()) {
            (Some(u), Some(dst)) => {
                dst.transform(b, out);
                out.iter_mut().zip(&u.load_scale).for_each(|(o, s)| *o *= s);
            }
            _ => self.dense_transpose_mul(b, out),
        }
    }

    /// `W^T b` for `b = DST(bins)` on uniform meshes, using that the sine
    /// transform is its own inverse up to `(N + 1) / 2`. Returns `false` on
    /// other meshes.
    pub fn folded_load_to_eigen(&self, bins: &[f64], out: &mut [f64]) -> bool {
        match &self.uniform {
            Some(u) => {
                let half = 0.5 * (self.dim() + 1) as f64;
                for ((o, b), s) in out.iter_mut().zip(bins).zip(&u.load_scale) {
                    *o = half * s * b;
                }
                true
            }
            None => false,
        }
    }

    /// `to_eigen(c)` and `load_to_eigen(b)` in one pass.
    pub fn to_eigen_pair(&self, ws: &mut FemWorkspace, c: &[f64], b: &[f64], out_c: &mut [f64], out_b: &mut [f64]) {
        match (&self.uniform, ws.dst.as_mut()) {
            (Some(u), Some(dst)) => {
                dst.transform_pair(c, b, out_c, out_b);
                out_c.iter_mut().zip(&u.mass_scale).for_each(|(o, s)| *o *= s);
                out_b.iter_mut().zip(&u.load_scale).for_each(|(o, s)| *o *= s);
            }
            _ => {
                self.mass_mul(c, &mut ws.tmp);
                self.dense_transpose_mul(&ws.tmp, out_c);
                self.dense_transpose_mul(b, out_b);
            }
        }
    }

    /// `out = W y`: nodal coefficients from eigen-coordinates.
    pub fn from_eigen(&self, ws: &mut FemWorkspace, y: &[f64], out: &mut [f64]) {
        match (&self.uniform, ws.dst.as_mut()) {
            (Some(u), Some(dst)) => {
                for ((t, yk), s) in ws.tmp.iter_mut().zip(y).zip(&u.load_scale) {
                    *t = yk * s;
                }
                dst.transform(&ws.tmp, out);
            }
            _ => {
                let n = self.dim();
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, &yk) in y.iter().enumerate() {
                    let col = &self.eigenvectors.as_slice()[k * n..(k + 1) * n];
                    for (o, w) in out.iter_mut().zip(col) {
                        *o += yk * w;
                    }
                }
            }
        }
    }

    /// `out = g(A_h) c` for a scalar function `g` of the discrete eigenvalues.
    pub fn apply_function<G: Fn(f64) -> f64>(&self, ws: &mut FemWorkspace, g: G, c: &[f64], out: &mut [f64]) {
        let mut y = std::mem::take(&mut ws.coords);
        self.to_eigen(ws, c, &mut y);
        for (yk, &l) in y.iter_mut().zip(&self.eigenvalues) {
            *yk *= g(l);
        }
        self.from_eigen(ws, &y, out);
        ws.coords = y;
    }

    fn dense_transpose_mul(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let data = self.eigenvectors.as_slice();
        for (k, o) in out.iter_mut().enumerate() {
            let col = &data[k * n..(k + 1) * n];
            *o = col.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Closed-form discrete eigenvalues of a uniform mesh:
    /// `(6 / h^2) (1 - cos(k pi h)) / (2 + cos(k pi h))`.
    pub fn uniform_eigenvalue_formula(&self) -> Option<Vec<f64>> {
        self.uniform.as_ref().map(|u| {
            let h = u.h;
            (1..=self.dim())
                .map(|k| {
                    let t = k as f64 * std::f64::consts::PI * h;
                    let half = (0.5 * t).sin();
                    6.0 / (h * h) * (2.0 * half * half) / (2.0 + t.cos())
                })
                .collect()
        })
    }
}

/// Per-thread scratch for [`FemSpace`] operations.
#[derive(Debug, Clone)]
pub struct FemWorkspace {
    dst: Option<Dst>,
    tmp: Vec<f64>,
    coords: Vec<f64>,
}

impl FemWorkspace {
    fn new(n: usize, fast: bool) -> Self {
        FemWorkspace {
            dst: fast.then(|| Dst::new(n)),
            tmp: vec![0.0; n],
            coords: vec![0.0; n],
        }
    }

    pub fn uses_transform(&self) -> bool {
        self.dst.is_some()
    }
}

fn tridiagonal_dense(diag: &[f64], off: &[f64]) -> DMatrix<f64> {
    let n = diag.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    })
}

fn generalized_eigen(
    mass_diag: &[f64],
    mass_off: &[f64],
    stiff_diag: &[f64],
    stiff_off: &[f64],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = tridiagonal_dense(mass_diag, mass_off);
    let k = tridiagonal_dense(stiff_diag, stiff_off);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let lk = l
        .solve_lower_triangular(&k)
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let mut c = l
        .solve_lower_triangular(&lk.transpose())
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Eigen(format!("non-positive discrete eigenvalue {v}")));
    }
    let y = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let w = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or_else(|| Error::Eigen("back substitution failed".into()))?;
    Ok((values, w))
}
