//! Time stepping for the finite-element system and the spectral-Galerkin
//! reference, driven by the same Wiener increments.
//!
//! All schemes share the form
//!
//! ```text
//! y_k <- alpha_k * coords(X + dt f(X))_k + kappa_k * coords(g(X) dW)_k
//! ```
//!
//! in the eigenbasis of `A_h` (finite elements) or `A` (spectral), with
//!
//! | scheme               | `alpha`              | `kappa`                                   |
//! |----------------------|----------------------|-------------------------------------------|
//! | exponential Euler    | `exp(-lambda dt)`    | `exp(-lambda dt)`                         |
//! | exponential OU       | `exp(-lambda dt)`    | `sqrt((1 - exp(-2 lambda dt)) / (2 lambda dt))` |
//! | semi-implicit Euler  | `1 / (1 + lambda dt)`| `1 / (1 + lambda dt)`                     |
//!
//! The OU variant gives each frozen-coefficient mode the exact stationary
//! variance of `int S(t - s) dW`, so the time step no longer has to resolve
//! `1 / lambda_max`. The finite-element semi-implicit step is carried out as
//! the tridiagonal solve `(M + dt K) c' = M (c + dt f) + load`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{l2_project, FemFunction, FemSpace, FemWorkspace, LoadScratch, SineLoads, Source};
use crate::noise::WienerIncrement;
use crate::spectral::{eigenvalue, CovarianceSpec, NemytskiiGrid, SpectralVector};

/// Drift nonlinearity `F` of the Nemytskii map `f(u)(x) = F(u(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Sin,
    /// `v / (1 + v^2)`.
    Rational,
    Linear { a: f64 },
}

impl Drift {
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Sin => v.sin(),
            Drift::Rational => v / (1.0 + v * v),
            Drift::Linear { a } => a * v,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Drift::Zero => "zero".into(),
            Drift::Sin => "sin".into(),
            Drift::Rational => "rational".into(),
            Drift::Linear { a } => format!("linear({a})"),
        }
    }
}

/// Diffusion `g`: additive (`g = I`) or the Nemytskii multiplier `g(u)v = G(u) v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusion {
    Zero,
    Additive,
    Sin,
    /// `(1 + v^2)^{-1/2}`.
    InvSqrt,
}

impl Diffusion {
    /// `G(v)`; `1` for additive noise.
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Diffusion::Zero => 0.0,
            Diffusion::Additive => 1.0,
            Diffusion::Sin => v.sin(),
            Diffusion::InvSqrt => 1.0 / (1.0 + v * v).sqrt(),
        }
    }

    pub fn is_multiplicative(&self) -> bool {
        matches!(self, Diffusion::Sin | Diffusion::InvSqrt)
    }

    /// `sup |G|`.
    pub fn bound(&self) -> f64 {
        match self {
            Diffusion::Zero => 0.0,
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Diffusion::Zero => "zero",
            Diffusion::Additive => "additive",
            Diffusion::Sin => "sin",
            Diffusion::InvSqrt => "inv_sqrt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    drift: Drift,
    diffusion: Diffusion,
    covariance: CovarianceSpec,
    x0: SpectralVector,
    final_time: f64,
}

impl ModelSpec {
    /// Additive noise needs a trace-class `Q`, multiplicative noise is
    /// paired with white noise.
    pub fn new(
        drift: Drift,
        diffusion: Diffusion,
        covariance: CovarianceSpec,
        x0: SpectralVector,
        final_time: f64,
    ) -> Result<Self> {
        covariance.validate()?;
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidModel(format!("final time must be positive, got {final_time}")));
        }
        if x0.coeffs().iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("initial value has non-finite coefficients".into()));
        }
        if let Drift::Linear { a } = drift {
            if !a.is_finite() {
                return Err(Error::InvalidModel("linear drift coefficient must be finite".into()));
            }
        }
        match diffusion {
            Diffusion::Additive if !covariance.is_trace_class() => {
                return Err(Error::InvalidModel(
                    "additive noise requires a trace-class covariance (fractional s > 1/2 or diagonal)".into(),
                ))
            }
            Diffusion::Sin | Diffusion::InvSqrt if covariance != CovarianceSpec::White => {
                return Err(Error::InvalidModel("multiplicative noise requires white covariance".into()))
            }
            _ => {}
        }
        Ok(ModelSpec {
            drift,
            diffusion,
            covariance,
            x0,
            final_time,
        })
    }

    pub fn drift(&self) -> Drift {
        self.drift
    }

    pub fn diffusion(&self) -> Diffusion {
        self.diffusion
    }

    pub fn covariance(&self) -> &CovarianceSpec {
        &self.covariance
    }

    pub fn x0(&self) -> &SpectralVector {
        &self.x0
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    /// Linear drift (or none) and additive or no noise: the solution is Gaussian.
    pub fn is_linear_additive(&self) -> bool {
        matches!(self.drift, Drift::Zero | Drift::Linear { .. })
            && matches!(self.diffusion, Diffusion::Zero | Diffusion::Additive)
    }

    pub fn linear_coefficient(&self) -> Option<f64> {
        match self.drift {
            Drift::Zero => Some(0.0),
            Drift::Linear { a } => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    SemiImplicitEuler,
    ExponentialEuler,
    ExponentialOu,
}

impl SchemeKind {
    /// `(alpha, kappa)` for eigenvalue `lambda`.
    pub fn factors(&self, lambda: f64, dt: f64) -> (f64, f64) {
        let x = lambda * dt;
        match self {
            SchemeKind::SemiImplicitEuler => {
                let r = 1.0 / (1.0 + x);
                (r, r)
            }
            SchemeKind::ExponentialEuler => {
                let e = (-x).exp();
                (e, e)
            }
            SchemeKind::ExponentialOu => {
                let e = (-x).exp();
                let k = if x < 1e-8 { 1.0 - 0.5 * x } else { (-(-2.0 * x).exp_m1() / (2.0 * x)).sqrt() };
                (e, k)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::SemiImplicitEuler => "semi-implicit-euler",
            SchemeKind::ExponentialEuler => "exponential-euler",
            SchemeKind::ExponentialOu => "exponential-ou",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScheme {
    kind: SchemeKind,
    dt: f64,
    steps: usize,
}

impl StepScheme {
    /// `dt` must divide `final_time` to `1e-9` relative.
    pub fn new(kind: SchemeKind, dt: f64, final_time: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        let steps = (final_time / dt).round();
        if steps < 1.0 || (steps * dt - final_time).abs() > 1e-9 * final_time {
            return Err(Error::InvalidTimeStep(dt));
        }
        Ok(StepScheme {
            kind,
            dt,
            steps: steps as usize,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Same scheme with `factor` times the step.
    pub fn coarsened(&self, factor: usize, final_time: f64) -> Result<Self> {
        Self::new(self.kind, self.dt * factor as f64, final_time)
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    Fem(FemFunction),
    Spectral(SpectralVector),
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub repr: Representation,
    pub time: f64,
}

impl TrajectoryState {
    /// `P_h X_0` at time zero.
    pub fn fem_initial(model: &ModelSpec, space: &Arc<FemSpace>) -> Result<Self> {
        Ok(TrajectoryState {
            repr: Representation::Fem(l2_project(space, Source::Spectral(model.x0()))?),
            time: 0.0,
        })
    }

    /// `P_m X_0` at time zero.
    pub fn spectral_initial(model: &ModelSpec, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        Ok(TrajectoryState {
            repr: Representation::Spectral(model.x0().resized(modes)),
            time: 0.0,
        })
    }
}

/// Where a trajectory lives.
#[derive(Debug, Clone)]
pub enum Target {
    Fem(Arc<FemSpace>),
    Spectral(usize),
}

/// `f(X)` in the representation of `state`: nodal values of `F(u)` for
/// finite elements, `F(u)` re-expanded from the oversampled grid for spectral states.
pub fn eval_nemytskii_f(model: &ModelSpec, state: &TrajectoryState) -> Result<Representation> {
    Ok(match &state.repr {
        Representation::Fem(v) => {
            let c = v.coeffs().iter().map(|&x| model.drift.eval(x)).collect();
            Representation::Fem(FemFunction::new(v.space().clone(), c)?)
        }
        Representation::Spectral(v) => {
            let m = v.len();
            let mut out = vec![0.0; m];
            match model.drift {
                Drift::Zero => {}
                Drift::Linear { a } => out.iter_mut().zip(v.coeffs()).for_each(|(o, x)| *o = a * x),
                d => NemytskiiGrid::new(m)?.apply(|u| d.eval(u), v.coeffs(), &mut out),
            }
            Representation::Spectral(SpectralVector::new(out))
        }
    })
}

/// Reusable finite-element stepper.
#[derive(Debug, Clone)]
pub struct FemStepper {
    space: Arc<FemSpace>,
    loads: Option<SineLoads>,
    load_scratch: Option<LoadScratch>,
    ws: FemWorkspace,
    drift: Drift,
    diffusion: Diffusion,
    kind: SchemeKind,
    dt: f64,
    alpha: Vec<f64>,
    kappa: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    work: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl FemStepper {
    /// `truncation` is the number of noise modes the stepper will be fed.
    pub fn new(model: &ModelSpec, scheme: &StepScheme, space: Arc<FemSpace>, truncation: usize) -> Result<Self> {
        Self::build(model, scheme, space, truncation, false)
    }

    /// Forces dense eigenvector and load routes even on uniform meshes.
    pub fn new_dense(model: &ModelSpec, scheme: &StepScheme, space: Arc<FemSpace>, truncation: usize) -> Result<Self> {
        Self::build(model, scheme, space, truncation, true)
    }

    fn build(model: &ModelSpec, scheme: &StepScheme, space: Arc<FemSpace>, truncation: usize, dense: bool) -> Result<Self> {
        let n = space.dim();
        let noisy = model.diffusion != Diffusion::Zero;
        if noisy && truncation < n {
            return Err(Error::InvalidPlan(format!(
                "noise truncation {truncation} is below the space dimension {n}"
            )));
        }
        let loads = if noisy {
            Some(if dense {
                SineLoads::dense(&space, truncation)?
            } else {
                SineLoads::new(&space, truncation)?
            })
        } else {
            None
        };
        let load_scratch = loads.as_ref().map(|l| l.scratch());
        let (alpha, kappa) = space.eigenvalues().iter().map(|&l| scheme.kind.factors(l, scheme.dt)).unzip();
        let ws = if dense { space.dense_workspace() } else { space.workspace() };
        Ok(FemStepper {
            ws,
            loads,
            load_scratch,
            drift: model.drift,
            diffusion: model.diffusion,
            kind: scheme.kind,
            dt: scheme.dt,
            alpha,
            kappa,
            u: vec![0.0; n],
            b: vec![0.0; n],
            y: vec![0.0; n],
            z: vec![0.0; n],
            work: vec![0.0; n],
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
            space,
        })
    }

    pub fn space(&self) -> &Arc<FemSpace> {
        &self.space
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step of size `dt` with increment coordinates `xi`.
    pub fn step(&mut self, c: &mut [f64], xi: &[f64]) {
        let dt = self.dt;
        let drift = self.drift;
        for (u, &x) in self.u.iter_mut().zip(c.iter()) {
            *u = x + dt * drift.eval(x);
        }
        let noisy = self.diffusion != Diffusion::Zero;

        if self.kind == SchemeKind::SemiImplicitEuler {
            self.space.mass_mul(&self.u, &mut self.y);
            if noisy {
                self.nodal_noise_load(c, xi);
                self.y.iter_mut().zip(&self.b).for_each(|(y, b)| *y += b);
            }
            self.space
                .shifted_solve_in_place(dt, &mut self.y, &mut self.diag, &mut self.off, &mut self.work);
            c.copy_from_slice(&self.y);
            return;
        }

        if !noisy {
            self.space.to_eigen(&mut self.ws, &self.u, &mut self.y);
            self.y.iter_mut().zip(&self.alpha).for_each(|(y, a)| *y *= a);
        } else if self.diffusion == Diffusion::Additive && self.additive_fast_path(xi) {
            self.space.to_eigen(&mut self.ws, &self.u, &mut self.y);
            for ((y, z), (a, k)) in self.y.iter_mut().zip(&self.z).zip(self.alpha.iter().zip(&self.kappa)) {
                *y = a * *y + k * z;
            }
        } else {
            self.nodal_noise_load(c, xi);
            self.space
                .to_eigen_pair(&mut self.ws, &self.u, &self.b, &mut self.y, &mut self.z);
            for ((y, z), (a, k)) in self.y.iter_mut().zip(&self.z).zip(self.alpha.iter().zip(&self.kappa)) {
                *y = a * *y + k * z;
            }
        }
        self.space.from_eigen(&mut self.ws, &self.y, c);
    }

    /// `z = W^T b` straight from folded bins when the mesh is uniform.
    fn additive_fast_path(&mut self, xi: &[f64]) -> bool {
        let loads = self.loads.as_ref().expect("noisy stepper has loads");
        if !self.ws.uses_transform() || !loads.fold_into(xi, &mut self.work) {
            return false;
        }
        self.space.folded_load_to_eigen(&self.work, &mut self.z)
    }

    /// `b = G(c) .* (sum_i xi_i <phi_i, chi_j>)_j`.
    fn nodal_noise_load(&mut self, c: &[f64], xi: &[f64]) {
        let loads = self.loads.as_ref().expect("noisy stepper has loads");
        let scratch = self.load_scratch.as_mut().expect("noisy stepper has scratch");
        loads.apply(scratch, xi, &mut self.b);
        if self.diffusion.is_multiplicative() {
            let g = self.diffusion;
            self.b.iter_mut().zip(c).for_each(|(b, &x)| *b *= g.eval(x));
        }
    }
}

/// Reusable spectral-Galerkin stepper on `m` modes.
#[derive(Debug, Clone)]
pub struct SpectralStepper {
    modes: usize,
    grid: Option<NemytskiiGrid>,
    drift: Drift,
    diffusion: Diffusion,
    dt: f64,
    alpha: Vec<f64>,
    kappa: Vec<f64>,
    f: Vec<f64>,
    gw: Vec<f64>,
}

impl SpectralStepper {
    pub fn new(model: &ModelSpec, scheme: &StepScheme, modes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::ZeroModes);
        }
        let needs_grid = !matches!(model.drift, Drift::Zero | Drift::Linear { .. }) || model.diffusion.is_multiplicative();
        let (alpha, kappa) = (1..=modes).map(|i| scheme.kind.factors(eigenvalue(i), scheme.dt)).unzip();
        Ok(SpectralStepper {
            modes,
            grid: if needs_grid { Some(NemytskiiGrid::new(modes)?) } else { None },
            drift: model.drift,
            diffusion: model.diffusion,
            dt: scheme.dt,
            alpha,
            kappa,
            f: vec![0.0; modes],
            gw: vec![0.0; modes],
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// One step; noise modes beyond `m` are not seen by the reference.
    pub fn step(&mut self, x: &mut [f64], xi: &[f64]) {
        let m = self.modes;
        let xi = &xi[..xi.len().min(m)];
        self.gw.iter_mut().for_each(|v| *v = 0.0);
        match (self.grid.as_mut(), self.diffusion.is_multiplicative()) {
            (Some(grid), true) => {
                let (mut u, mut w) = grid.scratch();
                grid.synthesize_pair(x, xi, &mut u, &mut w);
                let (drift, g) = (self.drift, self.diffusion);
                for (a, b) in u.iter_mut().zip(w.iter_mut()) {
                    *b *= g.eval(*a);
                    *a = drift.eval(*a);
                }
                grid.analyze_pair(&u, &w, &mut self.f, &mut self.gw);
                grid.restore_scratch(u, w);
            }
            (Some(grid), false) => {
                let drift = self.drift;
                grid.apply(|v| drift.eval(v), x, &mut self.f);
                if self.diffusion == Diffusion::Additive {
                    self.gw[..xi.len()].copy_from_slice(xi);
                }
            }
            (None, _) => {
                let a = match self.drift {
                    Drift::Linear { a } => a,
                    _ => 0.0,
                };
                self.f.iter_mut().zip(x.iter()).for_each(|(f, v)| *f = a * v);
                if self.diffusion == Diffusion::Additive {
                    self.gw[..xi.len()].copy_from_slice(xi);
                }
            }
        }
        let dt = self.dt;
        for i in 0..m {
            x[i] = self.alpha[i] * (x[i] + dt * self.f[i]) + self.kappa[i] * self.gw[i];
        }
    }
}

fn check_increment(scheme: &StepScheme, inc: &WienerIncrement) -> Result<()> {
    if (inc.dt - scheme.dt).abs() > 1e-12 * scheme.dt {
        return Err(Error::SchemeMismatch(format!(
            "increment over {} does not match the step {}",
            inc.dt, scheme.dt
        )));
    }
    Ok(())
}

pub fn step_fem(
    state: &TrajectoryState,
    model: &ModelSpec,
    scheme: &StepScheme,
    inc: &WienerIncrement,
    space: &Arc<FemSpace>,
) -> Result<TrajectoryState> {
    let Representation::Fem(v) = &state.repr else {
        return Err(Error::SchemeMismatch("step_fem needs a finite-element state".into()));
    };
    if v.coeffs().len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: v.coeffs().len(),
        });
    }
    check_increment(scheme, inc)?;
    let mut stepper = FemStepper::new(model, scheme, space.clone(), inc.truncation().max(space.dim()))?;
    let mut c = v.coeffs().to_vec();
    stepper.step(&mut c, &inc.coords);
    Ok(TrajectoryState {
        repr: Representation::Fem(FemFunction::new(space.clone(), c)?),
        time: state.time + scheme.dt,
    })
}

pub fn step_spectral(
    state: &TrajectoryState,
    model: &ModelSpec,
    scheme: &StepScheme,
    inc: &WienerIncrement,
) -> Result<TrajectoryState> {
    let Representation::Spectral(v) = &state.repr else {
        return Err(Error::SchemeMismatch("step_spectral needs a spectral state".into()));
    };
    check_increment(scheme, inc)?;
    if model.diffusion != Diffusion::Zero && inc.truncation() < v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: inc.truncation(),
        });
    }
    let mut stepper = SpectralStepper::new(model, scheme, v.len())?;
    let mut x = v.coeffs().to_vec();
    stepper.step(&mut x, &inc.coords);
    Ok(TrajectoryState {
        repr: Representation::Spectral(SpectralVector::new(x)),
        time: state.time + scheme.dt,
    })
}

/// Folds the step over `path` from the projected initial value.
pub fn evolve(model: &ModelSpec, scheme: &StepScheme, target: &Target, path: &[WienerIncrement]) -> Result<TrajectoryState> {
    if path.len() != scheme.steps() {
        return Err(Error::PathLength {
            expected: scheme.steps(),
            got: path.len(),
        });
    }
    for inc in path {
        check_increment(scheme, inc)?;
    }
    let truncation = path.iter().map(|p| p.truncation()).max().unwrap_or(0);
    let final_time = scheme.dt * scheme.steps() as f64;
    match target {
        Target::Fem(space) => {
            let state = TrajectoryState::fem_initial(model, space)?;
            let Representation::Fem(v) = state.repr else { unreachable!() };
            let mut c = v.into_coeffs();
            let mut stepper = FemStepper::new(model, scheme, space.clone(), truncation.max(space.dim()))?;
            for inc in path {
                stepper.step(&mut c, &inc.coords);
            }
            Ok(TrajectoryState {
                repr: Representation::Fem(FemFunction::new(space.clone(), c)?),
                time: final_time,
            })
        }
        Target::Spectral(m) => {
            if model.diffusion != Diffusion::Zero && truncation < *m {
                return Err(Error::DimensionMismatch {
                    expected: *m,
                    got: truncation,
                });
            }
            let mut x = model.x0().resized(*m).into_coeffs();
            let mut stepper = SpectralStepper::new(model, scheme, *m)?;
            for inc in path {
                stepper.step(&mut x, &inc.coords);
            }
            Ok(TrajectoryState {
                repr: Representation::Spectral(SpectralVector::new(x)),
                time: final_time,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Mesh1D;
    use crate::lab::rate::fit_rate;
    use crate::noise::WienerConfig;

    fn phi1() -> SpectralVector {
        SpectralVector::unit(1, 1)
    }

    fn deterministic(drift: Drift) -> ModelSpec {
        ModelSpec::new(drift, Diffusion::Zero, CovarianceSpec::White, phi1(), 0.1).unwrap()
    }

    fn path(cfg: &WienerConfig, sample: u64, scheme: &StepScheme) -> Vec<WienerIncrement> {
        let mut s = cfg.stream(sample);
        (0..scheme.steps()).map(|_| s.sample_increment(scheme.dt()).unwrap()).collect()
    }

    fn fem_coeffs(s: &TrajectoryState) -> &[f64] {
        match &s.repr {
            Representation::Fem(v) => v.coeffs(),
            _ => panic!("expected fem state"),
        }
    }

    fn spectral_coeffs(s: &TrajectoryState) -> &[f64] {
        match &s.repr {
            Representation::Spectral(v) => v.coeffs(),
            _ => panic!("expected spectral state"),
        }
    }

    #[test]
    fn pairing_is_enforced() {
        let x0 = phi1();
        assert!(ModelSpec::new(Drift::Sin, Diffusion::Additive, CovarianceSpec::White, x0.clone(), 1.0).is_err());
        assert!(ModelSpec::new(Drift::Sin, Diffusion::Additive, CovarianceSpec::Fractional { s: 0.5 }, x0.clone(), 1.0).is_err());
        assert!(ModelSpec::new(Drift::Sin, Diffusion::Additive, CovarianceSpec::Fractional { s: 0.75 }, x0.clone(), 1.0).is_ok());
        assert!(ModelSpec::new(Drift::Sin, Diffusion::Sin, CovarianceSpec::Fractional { s: 0.75 }, x0.clone(), 1.0).is_err());
        assert!(ModelSpec::new(Drift::Sin, Diffusion::InvSqrt, CovarianceSpec::White, x0.clone(), 1.0).is_ok());
        assert!(ModelSpec::new(Drift::Sin, Diffusion::Zero, CovarianceSpec::White, x0, -1.0).is_err());
    }

    #[test]
    fn scheme_validates_step() {
        assert!(StepScheme::new(SchemeKind::ExponentialEuler, 0.0, 1.0).is_err());
        assert!(StepScheme::new(SchemeKind::ExponentialEuler, 0.3, 1.0).is_err());
        assert_eq!(StepScheme::new(SchemeKind::ExponentialEuler, 0.1, 0.5).unwrap().steps(), 5);
    }

    #[test]
    fn nemytskii_zero_and_linear() {
        let st = TrajectoryState::spectral_initial(&deterministic(Drift::Zero), 8).unwrap();
        match eval_nemytskii_f(&deterministic(Drift::Zero), &st).unwrap() {
            Representation::Spectral(v) => assert!(v.coeffs().iter().all(|c| *c == 0.0)),
            _ => unreachable!(),
        }
        let m = deterministic(Drift::Linear { a: 2.5 });
        let st = TrajectoryState::spectral_initial(&m, 8).unwrap();
        match eval_nemytskii_f(&m, &st).unwrap() {
            Representation::Spectral(v) => {
                assert!((v.coeffs()[0] - 2.5).abs() < 1e-15);
                assert!(v.coeffs()[1..].iter().all(|c| *c == 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_nemytskii_matches_quadrature() {
        // F = sin on a spectral state versus the L2 coefficients of sin(u) by quadrature
        let m = ModelSpec::new(Drift::Sin, Diffusion::Zero, CovarianceSpec::White, SpectralVector::new(vec![0.8, -0.3, 0.2]), 1.0).unwrap();
        let st = TrajectoryState::spectral_initial(&m, 16).unwrap();
        let Representation::Spectral(f) = eval_nemytskii_f(&m, &st).unwrap() else { unreachable!() };
        let want = SpectralVector::from_function(
            |x| {
                let u = 0.8 * crate::spectral::eigenfunction(1, x) - 0.3 * crate::spectral::eigenfunction(2, x)
                    + 0.2 * crate::spectral::eigenfunction(3, x);
                u.sin()
            },
            16,
        );
        for (a, b) in f.coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn nodal_nemytskii_is_second_order_close_to_projection() {
        // nodal sin(c) against P_h sin(u_h) with sin(u_h) integrated by order-8 quadrature
        let u = |x: f64| 2.0 * (std::f64::consts::PI * x).sin() + x * (1.0 - x);
        let pts: Vec<(f64, f64)> = (3..=7)
            .map(|l| {
                let space = Arc::new(FemSpace::dyadic(l).unwrap());
                let uh = FemFunction::interpolate(space.clone(), u);
                let model = deterministic(Drift::Sin);
                let st = TrajectoryState {
                    repr: Representation::Fem(uh.clone()),
                    time: 0.0,
                };
                let Representation::Fem(nodal) = eval_nemytskii_f(&model, &st).unwrap() else { unreachable!() };
                let proj = l2_project(&space, Source::Function(&|x| uh.value_at(x).sin())).unwrap();
                (space.h(), nodal.sub(&proj).unwrap().l2_norm())
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.2, "slope {}", fit.slope);
    }

    #[test]
    fn exponential_euler_single_step_is_semigroup() {
        let model = deterministic(Drift::Zero);
        let space = Arc::new(FemSpace::uniform(32).unwrap());
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 0.1, 0.1).unwrap();
        let inc = WienerIncrement::new(0.1, vec![0.0; 32]).unwrap();
        let st = TrajectoryState::fem_initial(&model, &space).unwrap();
        let next = step_fem(&st, &model, &scheme, &inc, &space).unwrap();
        let Representation::Fem(v0) = &st.repr else { unreachable!() };
        let exact = v0.semigroup_h(0.1).unwrap();
        for (a, b) in fem_coeffs(&next).iter().zip(exact.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!((next.time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_state_stays_zero() {
        let model = ModelSpec::new(Drift::Zero, Diffusion::Zero, CovarianceSpec::White, SpectralVector::zeros(1), 0.1).unwrap();
        let space = Arc::new(FemSpace::uniform(16).unwrap());
        for kind in [SchemeKind::SemiImplicitEuler, SchemeKind::ExponentialEuler, SchemeKind::ExponentialOu] {
            let scheme = StepScheme::new(kind, 0.01, 0.1).unwrap();
            let path = vec![WienerIncrement::new(0.01, vec![]).unwrap(); 10];
            let end = evolve(&model, &scheme, &Target::Fem(space.clone()), &path).unwrap();
            assert!(fem_coeffs(&end).iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn semi_implicit_euler_is_first_order_in_time() {
        let model = deterministic(Drift::Zero);
        let space = Arc::new(FemSpace::uniform(16).unwrap());
        let Representation::Fem(v0) = TrajectoryState::fem_initial(&model, &space).unwrap().repr else { unreachable!() };
        let exact = v0.semigroup_h(0.1).unwrap();
        let pts: Vec<(f64, f64)> = [0.01, 0.005, 0.0025, 0.00125, 0.000625]
            .iter()
            .map(|&dt| {
                let scheme = StepScheme::new(SchemeKind::SemiImplicitEuler, dt, 0.1).unwrap();
                let path = vec![WienerIncrement::new(dt, vec![]).unwrap(); scheme.steps()];
                let end = evolve(&model, &scheme, &Target::Fem(space.clone()), &path).unwrap();
                let Representation::Fem(v) = end.repr else { unreachable!() };
                (dt, v.sub(&exact).unwrap().l2_norm())
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.1, "slope {}", fit.slope);
    }

    #[test]
    fn semi_implicit_solve_matches_spectral_form() {
        // (M + dt K)^{-1} against W diag(1 / (1 + lambda dt)) W^T
        let model = ModelSpec::new(Drift::Sin, Diffusion::Sin, CovarianceSpec::White, phi1(), 0.05).unwrap();
        let nodes = vec![0.0, 0.1, 0.2, 0.32, 0.41, 0.5, 0.6, 0.71, 0.8, 0.9, 1.0];
        let space = Arc::new(FemSpace::assemble(Mesh1D::from_nodes(nodes).unwrap()).unwrap());
        let scheme = StepScheme::new(SchemeKind::SemiImplicitEuler, 0.01, 0.05).unwrap();
        let cfg = WienerConfig::new(32, CovarianceSpec::White, 8).unwrap();
        let inc = cfg.stream(0).sample_increment(0.01).unwrap();
        let Representation::Fem(v0) = TrajectoryState::fem_initial(&model, &space).unwrap().repr else { unreachable!() };
        let mut c = v0.coeffs().to_vec();
        FemStepper::new(&model, &scheme, space.clone(), 32).unwrap().step(&mut c, &inc.coords);

        let loads = SineLoads::dense(&space, 32).unwrap();
        let mut b = vec![0.0; space.dim()];
        loads.apply(&mut loads.scratch(), &inc.coords, &mut b);
        let mut rhs = vec![0.0; space.dim()];
        let u: Vec<f64> = v0.coeffs().iter().map(|x| x + 0.01 * x.sin()).collect();
        space.mass_mul(&u, &mut rhs);
        rhs.iter_mut().zip(&b).zip(v0.coeffs()).for_each(|((r, b), x)| *r += x.sin() * b);
        let rhs = space.mass_solve(&rhs);
        let v = FemFunction::new(space.clone(), rhs).unwrap().apply_function(|l| 1.0 / (1.0 + 0.01 * l));
        for (a, b) in c.iter().zip(v.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_and_dense_fem_routes_agree() {
        let cfg = WienerConfig::new(96, CovarianceSpec::White, 21).unwrap();
        let space = Arc::new(FemSpace::uniform(32).unwrap());
        for (diff, cov) in [
            (Diffusion::Sin, CovarianceSpec::White),
            (Diffusion::Additive, CovarianceSpec::Fractional { s: 0.75 }),
        ] {
            let model = ModelSpec::new(Drift::Sin, diff, cov.clone(), phi1(), 0.02).unwrap();
            for kind in [SchemeKind::ExponentialEuler, SchemeKind::ExponentialOu, SchemeKind::SemiImplicitEuler] {
                let scheme = StepScheme::new(kind, 0.002, 0.02).unwrap();
                let cfg = WienerConfig::new(96, cov.clone(), cfg.seed()).unwrap();
                let p = path(&cfg, 3, &scheme);
                let Representation::Fem(v0) = TrajectoryState::fem_initial(&model, &space).unwrap().repr else { unreachable!() };
                let mut a = v0.coeffs().to_vec();
                let mut b = a.clone();
                let mut fast = FemStepper::new(&model, &scheme, space.clone(), 96).unwrap();
                let mut dense = FemStepper::new_dense(&model, &scheme, space.clone(), 96).unwrap();
                for inc in &p {
                    fast.step(&mut a, &inc.coords);
                    dense.step(&mut b, &inc.coords);
                }
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-11, "{kind:?} {diff:?}");
                }
            }
        }
    }

    #[test]
    fn linear_drift_recursion() {
        let a = 1.3;
        let model = ModelSpec::new(Drift::Linear { a }, Diffusion::Zero, CovarianceSpec::White, SpectralVector::new(vec![1.0, 0.5]), 0.1).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 0.01, 0.1).unwrap();
        let path = vec![WienerIncrement::new(0.01, vec![]).unwrap(); 10];
        let end = evolve(&model, &scheme, &Target::Spectral(4), &path).unwrap();
        let x = spectral_coeffs(&end);
        for (i, x0) in [(1usize, 1.0), (2, 0.5)] {
            let want = x0 * ((-eigenvalue(i) * 0.01).exp() * (1.0 + a * 0.01)).powi(10);
            assert!((x[i - 1] - want).abs() < 1e-14 * want.abs().max(1e-300));
        }
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn one_step_consistency() {
        let model = ModelSpec::new(Drift::Sin, Diffusion::Zero, CovarianceSpec::White, SpectralVector::new(vec![0.9, 0.2]), 1.0).unwrap();
        let st = TrajectoryState::spectral_initial(&model, 8).unwrap();
        let Representation::Spectral(f) = eval_nemytskii_f(&model, &st).unwrap() else { unreachable!() };
        let x0 = model.x0().resized(8);
        let mut prev = f64::INFINITY;
        for dt in [1e-3, 1e-4, 1e-5] {
            let scheme = StepScheme::new(SchemeKind::ExponentialEuler, dt, dt).unwrap();
            let inc = WienerIncrement::new(dt, vec![]).unwrap();
            let next = step_spectral(&st, &model, &scheme, &inc).unwrap();
            let err: f64 = (0..8)
                .map(|i| {
                    let d = (spectral_coeffs(&next)[i] - x0.coeffs()[i]) / dt;
                    (d - (-eigenvalue(i + 1) * x0.coeffs()[i] + f.coeffs()[i])).abs()
                })
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn spectral_ou_variance() {
        // X_N^i = sum_n alpha^{N-n} dW_n^i, variance q_i dt sum_{k=1..N} exp(-2 lambda_i k dt)
        let cov = CovarianceSpec::Fractional { s: 0.75 };
        let model = ModelSpec::new(Drift::Zero, Diffusion::Additive, cov.clone(), SpectralVector::zeros(1), 0.1).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 0.01, 0.1).unwrap();
        let cfg = WienerConfig::new(4, cov.clone(), 77).unwrap();
        let samples = 10_000;
        let ends: Vec<Vec<f64>> = (0..samples)
            .map(|s| {
                let mut st = cfg.stream(s);
                let mut x = vec![0.0; 4];
                let mut stepper = SpectralStepper::new(&model, &scheme, 4).unwrap();
                let mut xi = vec![0.0; 4];
                for _ in 0..scheme.steps() {
                    st.fill_increment(0.01, &mut xi).unwrap();
                    stepper.step(&mut x, &xi);
                }
                x
            })
            .collect();
        for i in 0..4 {
            let l = eigenvalue(i + 1);
            let var: f64 = cov.variance(i + 1) * 0.01 * (1..=10).map(|k| (-2.0 * l * k as f64 * 0.01).exp()).sum::<f64>();
            let xs: Vec<f64> = ends.iter().map(|x| x[i]).collect();
            let n = samples as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let svar = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 4.0 * (var / n).sqrt(), "mode {i} mean");
            assert!((svar - var).abs() < 4.0 * var * (2.0 / (n - 1.0)).sqrt(), "mode {i} var");
        }
    }

    #[test]
    fn evolve_is_deterministic_and_checks_length() {
        let model = ModelSpec::new(Drift::Sin, Diffusion::Sin, CovarianceSpec::White, phi1(), 0.05).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialOu, 0.005, 0.05).unwrap();
        let cfg = WienerConfig::new(64, CovarianceSpec::White, 5).unwrap();
        let p = path(&cfg, 0, &scheme);
        let space = Arc::new(FemSpace::uniform(16).unwrap());
        for target in [Target::Fem(space.clone()), Target::Spectral(64)] {
            let a = evolve(&model, &scheme, &target, &p).unwrap();
            let b = evolve(&model, &scheme, &target, &p).unwrap();
            let (ca, cb) = match (&a.repr, &b.repr) {
                (Representation::Fem(x), Representation::Fem(y)) => (x.coeffs().to_vec(), y.coeffs().to_vec()),
                (Representation::Spectral(x), Representation::Spectral(y)) => (x.coeffs().to_vec(), y.coeffs().to_vec()),
                _ => unreachable!(),
            };
            assert_eq!(ca.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), cb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert!(matches!(evolve(&model, &scheme, &target, &p[1..]), Err(Error::PathLength { .. })));
        }
        // a spectral reference needs noise on all of its modes
        assert!(evolve(&model, &scheme, &Target::Spectral(128), &p).is_err());
    }

    #[test]
    fn representation_mismatch_is_rejected() {
        let model = deterministic(Drift::Zero);
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 0.1, 0.1).unwrap();
        let inc = WienerIncrement::new(0.1, vec![]).unwrap();
        let space = Arc::new(FemSpace::uniform(4).unwrap());
        let spectral = TrajectoryState::spectral_initial(&model, 4).unwrap();
        let fem = TrajectoryState::fem_initial(&model, &space).unwrap();
        assert!(matches!(step_fem(&spectral, &model, &scheme, &inc, &space), Err(Error::SchemeMismatch(_))));
        assert!(matches!(step_spectral(&fem, &model, &scheme, &inc), Err(Error::SchemeMismatch(_))));
        let wrong = WienerIncrement::new(0.05, vec![]).unwrap();
        assert!(matches!(step_spectral(&spectral, &model, &scheme, &wrong), Err(Error::SchemeMismatch(_))));
    }

    #[test]
    fn noiseless_pipeline_ignores_seed() {
        let model = deterministic(Drift::Sin);
        let scheme = StepScheme::new(SchemeKind::ExponentialOu, 0.01, 0.1).unwrap();
        let space = Arc::new(FemSpace::uniform(16).unwrap());
        let ends: Vec<Vec<f64>> = [1u64, 2]
            .iter()
            .map(|&seed| {
                let cfg = WienerConfig::new(16, CovarianceSpec::White, seed).unwrap();
                let p = path(&cfg, 0, &scheme);
                fem_coeffs(&evolve(&model, &scheme, &Target::Fem(space.clone()), &p).unwrap()).to_vec()
            })
            .collect();
        assert_eq!(ends[0], ends[1]);
    }

    #[test]
    fn moment_bound() {
        // E||X_h(T)||^2 <= C (1 + ||X_0||^2); report C
        let model = ModelSpec::new(Drift::Sin, Diffusion::Sin, CovarianceSpec::White, SpectralVector::new(vec![1.0]), 0.1).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialOu, 0.002, 0.1).unwrap();
        let space = Arc::new(FemSpace::uniform(32).unwrap());
        let cfg = WienerConfig::new(128, CovarianceSpec::White, 13).unwrap();
        let mut stepper = FemStepper::new(&model, &scheme, space.clone(), 128).unwrap();
        let Representation::Fem(v0) = TrajectoryState::fem_initial(&model, &space).unwrap().repr else { unreachable!() };
        let mut xi = vec![0.0; 128];
        let norms: Vec<f64> = (0..1000)
            .map(|s| {
                let mut st = cfg.stream(s);
                let mut c = v0.coeffs().to_vec();
                for _ in 0..scheme.steps() {
                    st.fill_increment(scheme.dt(), &mut xi).unwrap();
                    stepper.step(&mut c, &xi);
                }
                space.mass_inner(&c, &c)
            })
            .collect();
        let sup = norms.iter().cloned().fold(0.0, f64::max);
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        let c = mean / (1.0 + model.x0().norm().powi(2));
        eprintln!("moment bound: sup {sup:.4}, mean {mean:.4}, C = {c:.4}");
        assert!(sup.is_finite());
        assert!(c < 1.0);
    }

    #[test]
    fn refinement_consistency_smoke() {
        // linear additive: fem at h = 1/256, dt = 1e-4 against the spectral reference
        let cov = CovarianceSpec::Fractional { s: 0.75 };
        let model = ModelSpec::new(Drift::Zero, Diffusion::Additive, cov.clone(), phi1(), 0.05).unwrap();
        let scheme = StepScheme::new(SchemeKind::ExponentialEuler, 1e-4, 0.05).unwrap();
        let cfg = WienerConfig::new(1024, cov, 3).unwrap();
        let space = Arc::new(FemSpace::dyadic(8).unwrap());
        let m = 1024;
        let mut fem = FemStepper::new(&model, &scheme, space.clone(), 1024).unwrap();
        let mut spec = SpectralStepper::new(&model, &scheme, m).unwrap();
        let Representation::Fem(v0) = TrajectoryState::fem_initial(&model, &space).unwrap().repr else { unreachable!() };
        let mut xi = vec![0.0; 1024];
        let mut e2 = 0.0;
        let samples = 8;
        for s in 0..samples {
            let mut st = cfg.stream(s);
            let mut c = v0.coeffs().to_vec();
            let mut x = model.x0().resized(m).into_coeffs();
            for _ in 0..scheme.steps() {
                st.fill_increment(scheme.dt(), &mut xi).unwrap();
                fem.step(&mut c, &xi);
                spec.step(&mut x, &xi);
            }
            let v = FemFunction::new(space.clone(), c).unwrap();
            e2 += v.l2_distance_to(&SpectralVector::new(x)).powi(2);
        }
        let err = (e2 / samples as f64).sqrt();
        assert!(err < 1e-2, "error {err}");
    }
}
