//! Coupled Monte Carlo convergence experiments.
//!
//! Every sample drives the reference and all ladder levels with the same
//! noise stream, so per-sample differences are pathwise. With saturation
//! enabled the same stream, summed pairwise, also drives a second run at `2 dt`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{l2_project, FemSpace, LoadScratch, SineLoads, Source};
use crate::integrator::{FemStepper, ModelSpec, SchemeKind, SpectralStepper, StepScheme};
use crate::lab::rate::{fit_rate, RateFit};
use crate::lab::testfn::TestFunction;
use crate::noise::WienerConfig;
use crate::spectral::SpectralVector;
use crate::util::NeumaierSum;

/// Minimum Monte Carlo sample count.
pub const MIN_SAMPLES: usize = 100;
/// Reference must be at least this much finer than the finest level.
pub const REFERENCE_FACTOR: usize = 4;
/// Errors changing by less than this between `dt` and `2 dt` count as saturated.
pub const SATURATION_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    Spectral { modes: usize },
    Fem { intervals: usize },
}

impl Reference {
    pub fn describe(&self) -> String {
        match self {
            Reference::Spectral { modes } => format!("spectral({modes})"),
            Reference::Fem { intervals } => format!("fem(1/{intervals})"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model: ModelSpec,
    pub scheme: SchemeKind,
    pub dt: f64,
    /// Interval counts of the uniform ladder meshes, coarse to fine.
    pub ladder: Vec<usize>,
    pub reference: Reference,
    pub samples: usize,
    pub truncation: usize,
    pub seed: u64,
    pub test_functions: Vec<TestFunction>,
    /// Rerun at `2 dt` to flag time-step saturation.
    pub saturation: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.len() < 3 {
            return Err(Error::InvalidPlan(format!(
                "ladder needs at least 3 levels, got {}",
                self.ladder.len()
            )));
        }
        if self.ladder.iter().any(|&n| n < 2) || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPlan("ladder must be strictly refining with at least 2 intervals".into()));
        }
        if self.samples < MIN_SAMPLES {
            return Err(Error::InvalidPlan(format!(
                "{} samples is below the minimum {MIN_SAMPLES}",
                self.samples
            )));
        }
        let finest = *self.ladder.last().unwrap();
        match self.reference {
            Reference::Spectral { modes } => {
                if modes < REFERENCE_FACTOR * finest {
                    return Err(Error::InvalidPlan(format!(
                        "spectral reference with {modes} modes is not {REFERENCE_FACTOR}x finer than 1/{finest}"
                    )));
                }
                if self.truncation < modes {
                    return Err(Error::InvalidPlan(format!(
                        "noise truncation {} is below the reference modes {modes}",
                        self.truncation
                    )));
                }
            }
            Reference::Fem { intervals } => {
                if intervals < REFERENCE_FACTOR * finest {
                    return Err(Error::InvalidPlan(format!(
                        "reference mesh 1/{intervals} is not {REFERENCE_FACTOR}x finer than 1/{finest}"
                    )));
                }
                if let Some(n) = self.ladder.iter().find(|&&n| intervals % n != 0) {
                    return Err(Error::InvalidPlan(format!(
                        "reference mesh 1/{intervals} is not nested with 1/{n}"
                    )));
                }
                if self.truncation < intervals - 1 {
                    return Err(Error::InvalidPlan(format!(
                        "noise truncation {} is below the reference dimension {}",
                        self.truncation,
                        intervals - 1
                    )));
                }
            }
        }
        if self.truncation < finest - 1 {
            return Err(Error::InvalidPlan(format!(
                "noise truncation {} is below the finest dimension {}",
                self.truncation,
                finest - 1
            )));
        }
        let t = self.model.final_time();
        StepScheme::new(self.scheme, self.dt, t)?;
        if self.saturation {
            StepScheme::new(self.scheme, 2.0 * self.dt, t)?;
        }
        WienerConfig::new(self.truncation, self.model.covariance().clone(), self.seed)?;
        Ok(())
    }

    pub fn mesh_sizes(&self) -> Vec<f64> {
        self.ladder.iter().map(|&n| 1.0 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub coarse_dt: f64,
    pub coarse_error: Vec<f64>,
    /// `|e(dt) - e(2 dt)| / e(dt)` per level.
    pub relative_change: Vec<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `strong` or `weak:<test function>`.
    pub quantity: String,
    pub h: Vec<f64>,
    pub error: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Signed `E[phi(X_ref)] - E[phi(X_h)]` estimates, weak reports only.
    pub mean_difference: Option<Vec<f64>>,
    /// `None` when an error is exactly zero.
    pub rate: Option<RateFit>,
    pub saturation: Option<Saturation>,
    pub reference: Reference,
    /// Estimated error of the reference itself.
    pub reference_floor: Option<f64>,
    /// `sup|G| sqrt(sum_{i>K} q_i / (2 lambda_i))`.
    pub truncation_tail: f64,
    pub scheme: SchemeKind,
    pub seed: u64,
    pub dt: f64,
    pub truncation: usize,
    pub samples: usize,
}

impl ConvergenceReport {
    /// Errors decrease under refinement, allowing at most one inversion that
    /// stays within two combined standard errors.
    pub fn is_monotone(&self) -> bool {
        let mut inversions = 0;
        for i in 1..self.error.len() {
            let rise = self.error[i] - self.error[i - 1];
            if rise > 0.0 {
                let se = self.stderr[i].hypot(self.stderr[i - 1]);
                if rise > 2.0 * se {
                    return false;
                }
                inversions += 1;
            }
        }
        inversions <= 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub strong: ConvergenceReport,
    pub weak: Vec<ConvergenceReport>,
}

/// Strong errors only.
pub fn strong_error(plan: &ExperimentPlan) -> Result<ConvergenceReport> {
    let plan = ExperimentPlan {
        test_functions: Vec::new(),
        ..plan.clone()
    };
    Ok(run_experiment(&plan)?.strong)
}

/// Weak errors for each test function of the plan.
pub fn weak_error(plan: &ExperimentPlan) -> Result<Vec<ConvergenceReport>> {
    if plan.test_functions.is_empty() {
        return Err(Error::InvalidPlan("weak errors need at least one test function".into()));
    }
    Ok(run_experiment(plan)?.weak)
}

/// Runs the coupled experiment on the current rayon pool. Results do not
/// depend on the number of threads.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let setup = Setup::new(plan)?;
    let fine = Track::new(plan, &setup, plan.dt)?;
    let coarse = if plan.saturation {
        Some(Track::new(plan, &setup, 2.0 * plan.dt)?)
    } else {
        None
    };
    let proto = Engine {
        fine,
        coarse,
        xi: vec![0.0; plan.truncation],
        acc: vec![0.0; plan.truncation],
    };
    let config = WienerConfig::new(plan.truncation, plan.model.covariance().clone(), plan.seed)?;
    let rows: Vec<Vec<f64>> = (0..plan.samples)
        .into_par_iter()
        .with_min_len(4)
        .map_init(|| proto.clone(), |eng, s| eng.sample(&setup, &config, s as u64))
        .collect::<Result<_>>()?;
    Ok(reduce(plan, &rows))
}

/// Immutable per-experiment data shared by all samples.
struct Setup {
    levels: Vec<Arc<FemSpace>>,
    level_x0: Vec<Vec<f64>>,
    reference_space: Option<Arc<FemSpace>>,
    reference_x0: Vec<f64>,
    /// Test directions, padded to the probe length.
    test_functions: Vec<TestFunction>,
    directions: Vec<Option<Vec<f64>>>,
    steps: usize,
}

impl Setup {
    fn new(plan: &ExperimentPlan) -> Result<Self> {
        let levels = plan
            .ladder
            .iter()
            .map(|&n| FemSpace::uniform(n).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let level_x0 = levels
            .iter()
            .map(|s| l2_project(s, Source::Spectral(plan.model.x0())).map(|f| f.into_coeffs()))
            .collect::<Result<Vec<_>>>()?;
        let (reference_space, reference_x0) = match plan.reference {
            Reference::Spectral { modes } => (None, plan.model.x0().resized(modes).into_coeffs()),
            Reference::Fem { intervals } => {
                let s = Arc::new(FemSpace::uniform(intervals)?);
                let c = l2_project(&s, Source::Spectral(plan.model.x0()))?.into_coeffs();
                (Some(s), c)
            }
        };
        let probe = probe_modes(plan);
        let directions = plan
            .test_functions
            .iter()
            .map(|t| t.direction().map(|w| w.resized(probe).into_coeffs()))
            .collect();
        let steps = StepScheme::new(plan.scheme, plan.dt, plan.model.final_time())?.steps();
        Ok(Setup {
            levels,
            level_x0,
            reference_space,
            reference_x0,
            test_functions: plan.test_functions.clone(),
            directions,
            steps,
        })
    }
}

/// Modes of `L^T c` needed per level: the spectral reference length, or the
/// longest test direction against a finite element reference.
fn probe_modes(plan: &ExperimentPlan) -> usize {
    let dir = plan
        .test_functions
        .iter()
        .filter_map(|t| t.direction().map(SpectralVector::len))
        .max()
        .unwrap_or(0);
    match plan.reference {
        Reference::Spectral { modes } => modes.max(dir),
        Reference::Fem { .. } => dir.max(1),
    }
}

#[derive(Clone)]
struct Probe {
    loads: SineLoads,
    scratch: LoadScratch,
    out: Vec<f64>,
}

impl Probe {
    fn new(space: &FemSpace, modes: usize) -> Result<Self> {
        let loads = SineLoads::new(space, modes)?;
        let scratch = loads.scratch();
        Ok(Probe {
            loads,
            scratch,
            out: vec![0.0; modes],
        })
    }

    fn apply(&mut self, c: &[f64]) -> &[f64] {
        self.loads.apply_transpose(&mut self.scratch, c, &mut self.out);
        &self.out
    }
}

#[derive(Clone)]
enum RefStepper {
    Spectral(SpectralStepper),
    Fem(FemStepper, Probe),
}

/// Reference plus ladder steppers at one step size.
#[derive(Clone)]
struct Track {
    reference: RefStepper,
    ref_state: Vec<f64>,
    levels: Vec<(FemStepper, Probe)>,
    states: Vec<Vec<f64>>,
}

impl Track {
    fn new(plan: &ExperimentPlan, setup: &Setup, dt: f64) -> Result<Self> {
        let scheme = StepScheme::new(plan.scheme, dt, plan.model.final_time())?;
        let probe = probe_modes(plan);
        let reference = match (&plan.reference, &setup.reference_space) {
            (Reference::Spectral { modes }, _) => RefStepper::Spectral(SpectralStepper::new(&plan.model, &scheme, *modes)?),
            (Reference::Fem { .. }, Some(space)) => RefStepper::Fem(
                FemStepper::new(&plan.model, &scheme, space.clone(), plan.truncation)?,
                Probe::new(space, probe)?,
            ),
            (Reference::Fem { .. }, None) => unreachable!("finite element reference has a space"),
        };
        let levels = setup
            .levels
            .iter()
            .map(|s| Ok((FemStepper::new(&plan.model, &scheme, s.clone(), plan.truncation)?, Probe::new(s, probe)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Track {
            reference,
            ref_state: setup.reference_x0.clone(),
            states: setup.level_x0.clone(),
            levels,
        })
    }

    fn reset(&mut self, setup: &Setup) {
        self.ref_state.copy_from_slice(&setup.reference_x0);
        for (s, x0) in self.states.iter_mut().zip(&setup.level_x0) {
            s.copy_from_slice(x0);
        }
    }

    fn step(&mut self, xi: &[f64]) {
        match &mut self.reference {
            RefStepper::Spectral(st) => st.step(&mut self.ref_state, xi),
            RefStepper::Fem(st, _) => st.step(&mut self.ref_state, xi),
        }
        for ((st, _), c) in self.levels.iter_mut().zip(&mut self.states) {
            st.step(c, xi);
        }
    }

    /// Appends `err^2` per level, then `phi(X_ref) - phi(X_h)` per test function and level.
    fn measure(&mut self, setup: &Setup, row: &mut Vec<f64>) {
        let tfs = &setup.test_functions;
        let nl = self.levels.len();
        let mut phi_ref = vec![0.0; tfs.len()];
        let mut phi_lvl = vec![0.0; tfs.len() * nl];
        match &mut self.reference {
            RefStepper::Spectral(_) => {
                let r = &self.ref_state;
                let r2: f64 = r.iter().map(|v| v * v).sum();
                for (t, phi) in tfs.iter().enumerate() {
                    phi_ref[t] = phi.eval_parts(r2, inner(setup.directions[t].as_deref(), r));
                }
                for (l, ((_, probe), c)) in self.levels.iter_mut().zip(&self.states).enumerate() {
                    let space = &setup.levels[l];
                    let c2 = space.mass_inner(c, c);
                    let p = probe.apply(c);
                    let cross: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum();
                    row.push((r2 - 2.0 * cross + c2).max(0.0));
                    for (t, phi) in tfs.iter().enumerate() {
                        phi_lvl[t * nl + l] = phi.eval_parts(c2, inner(setup.directions[t].as_deref(), p));
                    }
                }
            }
            RefStepper::Fem(_, ref_probe) => {
                let space_ref = setup.reference_space.as_ref().expect("finite element reference");
                let r = &self.ref_state;
                let r2 = space_ref.mass_inner(r, r);
                let pr = ref_probe.apply(r);
                for (t, phi) in tfs.iter().enumerate() {
                    phi_ref[t] = phi.eval_parts(r2, inner(setup.directions[t].as_deref(), pr));
                }
                let nref = space_ref.dim() + 1;
                let mut diff = vec![0.0; r.len()];
                for (l, ((_, probe), c)) in self.levels.iter_mut().zip(&self.states).enumerate() {
                    prolong(c, nref / (c.len() + 1), &mut diff);
                    diff.iter_mut().zip(r).for_each(|(d, v)| *d = v - *d);
                    row.push(space_ref.mass_inner(&diff, &diff).max(0.0));
                    let c2 = setup.levels[l].mass_inner(c, c);
                    let p = probe.apply(c);
                    for (t, phi) in tfs.iter().enumerate() {
                        phi_lvl[t * nl + l] = phi.eval_parts(c2, inner(setup.directions[t].as_deref(), p));
                    }
                }
            }
        }
        for t in 0..tfs.len() {
            for l in 0..nl {
                row.push(phi_ref[t] - phi_lvl[t * nl + l]);
            }
        }
    }
}

fn inner(w: Option<&[f64]>, p: &[f64]) -> f64 {
    w.map_or(0.0, |w| w.iter().zip(p).map(|(a, b)| a * b).sum())
}

/// Nodal values on the mesh refined `factor` times; exact for nested meshes.
fn prolong(c: &[f64], factor: usize, out: &mut [f64]) {
    let at = |k: usize| if k == 0 || k > c.len() { 0.0 } else { c[k - 1] };
    for (j, o) in out.iter_mut().enumerate() {
        let node = j + 1;
        let (k, r) = (node / factor, node % factor);
        let t = r as f64 / factor as f64;
        *o = (1.0 - t) * at(k) + t * at(k + 1);
    }
}

#[derive(Clone)]
struct Engine {
    fine: Track,
    coarse: Option<Track>,
    xi: Vec<f64>,
    acc: Vec<f64>,
}

impl Engine {
    fn sample(&mut self, setup: &Setup, config: &WienerConfig, sample: u64) -> Result<Vec<f64>> {
        let plan_dt = self.fine.levels[0].0.dt();
        let mut stream = config.stream(sample);
        self.fine.reset(setup);
        if let Some(c) = self.coarse.as_mut() {
            c.reset(setup);
        }
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        for n in 0..setup.steps {
            stream.fill_increment(plan_dt, &mut self.xi)?;
            self.fine.step(&self.xi);
            if let Some(c) = self.coarse.as_mut() {
                self.acc.iter_mut().zip(&self.xi).for_each(|(a, x)| *a += x);
                if n % 2 == 1 {
                    c.step(&self.acc);
                    self.acc.iter_mut().for_each(|a| *a = 0.0);
                }
            }
        }
        Ok(self.finish(setup))
    }

    fn finish(&mut self, setup: &Setup) -> Vec<f64> {
        let mut row = Vec::new();
        self.fine.measure(setup, &mut row);
        if let Some(c) = self.coarse.as_mut() {
            c.measure(setup, &mut row);
        }
        row
    }
}

/// Column-wise compensated mean and standard error over sample rows.
fn column_stats(rows: &[Vec<f64>], col: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[col]).collect::<NeumaierSum>().value() / n;
    let var = rows.iter().map(|r| (r[col] - mean).powi(2)).collect::<NeumaierSum>().value() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Strong errors `sqrt(E err^2)` with delta-method standard errors, then
/// weak errors `|E d|` per test function, for the block starting at `offset`.
fn block_errors(rows: &[Vec<f64>], offset: usize, nl: usize, ntf: usize) -> (Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>) {
    let strong = (0..nl)
        .map(|l| {
            let (m, se) = column_stats(rows, offset + l);
            let e = m.max(0.0).sqrt();
            (e, if e > 0.0 { se / (2.0 * e) } else { 0.0 })
        })
        .collect();
    let weak = (0..ntf)
        .map(|t| (0..nl).map(|l| column_stats(rows, offset + nl + t * nl + l)).collect())
        .collect();
    (strong, weak)
}

fn saturation(coarse_dt: f64, fine: &[f64], coarse: &[f64]) -> Saturation {
    let relative_change: Vec<f64> = fine
        .iter()
        .zip(coarse)
        .map(|(f, c)| if *f > 0.0 { (f - c).abs() / f } else if *c == 0.0 { 0.0 } else { f64::INFINITY })
        .collect();
    let saturated = relative_change.iter().all(|r| *r < SATURATION_TOLERANCE);
    Saturation {
        coarse_dt,
        coarse_error: coarse.to_vec(),
        relative_change,
        saturated,
    }
}

fn reduce(plan: &ExperimentPlan, rows: &[Vec<f64>]) -> ExperimentOutcome {
    let nl = plan.ladder.len();
    let ntf = plan.test_functions.len();
    let h = plan.mesh_sizes();
    let (strong, weak) = block_errors(rows, 0, nl, ntf);
    let coarse = plan.saturation.then(|| block_errors(rows, nl * (1 + ntf), nl, ntf));

    let g = plan.model.diffusion().bound();
    let cov = plan.model.covariance();
    let truncation_tail = g * (0.5 * cov.tail_bound(plan.truncation, 1.0)).sqrt();
    let spectral_floor = match plan.reference {
        Reference::Spectral { modes } => Some(g * (0.5 * cov.tail_bound(modes, 1.0)).sqrt()),
        Reference::Fem { .. } => None,
    };

    let build = |quantity: String, vals: &[(f64, f64)], signed: Option<Vec<f64>>, coarse_vals: Option<Vec<f64>>| {
        let error: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let stderr: Vec<f64> = vals.iter().map(|v| v.1).collect();
        let pairs: Vec<(f64, f64)> = h.iter().copied().zip(error.iter().copied()).collect();
        let rate = fit_rate(&pairs).ok();
        let reference_floor = spectral_floor.or_else(|| match (plan.reference, rate) {
            // extrapolate the fitted law down to the reference mesh
            (Reference::Fem { intervals }, Some(r)) => Some((r.intercept + r.slope * (1.0 / intervals as f64).ln()).exp()),
            _ => None,
        });
        ConvergenceReport {
            quantity,
            h: h.clone(),
            saturation: coarse_vals.map(|c| saturation(2.0 * plan.dt, &error, &c)),
            error,
            stderr,
            mean_difference: signed,
            rate,
            reference: plan.reference,
            reference_floor,
            truncation_tail,
            scheme: plan.scheme,
            seed: plan.seed,
            dt: plan.dt,
            truncation: plan.truncation,
            samples: plan.samples,
        }
    };

    let strong_report = build(
        "strong".into(),
        &strong,
        None,
        coarse.as_ref().map(|(s, _)| s.iter().map(|v| v.0).collect()),
    );
    let weak_reports = plan
        .test_functions
        .iter()
        .enumerate()
        .map(|(t, phi)| {
            let abs: Vec<(f64, f64)> = weak[t].iter().map(|(m, se)| (m.abs(), *se)).collect();
            let signed = weak[t].iter().map(|v| v.0).collect();
            let coarse_abs = coarse.as_ref().map(|(_, w)| w[t].iter().map(|v| v.0.abs()).collect());
            build(format!("weak:{}", phi.name()), &abs, Some(signed), coarse_abs)
        })
        .collect();
    ExperimentOutcome {
        strong: strong_report,
        weak: weak_reports,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{Diffusion, Drift};
    use crate::lab::gaussian::linear_gaussian_law;
    use crate::integrator::Target;
    use crate::spectral::CovarianceSpec;

    fn anchor_plan() -> ExperimentPlan {
        ExperimentPlan {
            model: ModelSpec::new(
                Drift::Linear { a: 1.0 },
                Diffusion::Additive,
                CovarianceSpec::Fractional { s: 0.75 },
                SpectralVector::unit(1, 1),
                0.05,
            )
            .unwrap(),
            scheme: SchemeKind::ExponentialOu,
            dt: 0.005,
            ladder: vec![4, 8, 16],
            reference: Reference::Spectral { modes: 64 },
            samples: 400,
            truncation: 64,
            seed: 3,
            test_functions: vec![TestFunction::cosine_phi1(), TestFunction::Gauss],
            saturation: true,
        }
    }

    #[test]
    fn validation() {
        let ok = anchor_plan();
        ok.validate().unwrap();
        let bad = [
            ExperimentPlan { samples: 50, ..ok.clone() },
            ExperimentPlan { ladder: vec![4, 8], ..ok.clone() },
            ExperimentPlan { ladder: vec![4, 16, 8], ..ok.clone() },
            ExperimentPlan { reference: Reference::Spectral { modes: 32 }, ..ok.clone() },
            ExperimentPlan { truncation: 32, ..ok.clone() },
            ExperimentPlan { reference: Reference::Fem { intervals: 72 }, truncation: 128, ..ok.clone() },
            ExperimentPlan { dt: 0.003, ..ok.clone() },
            ExperimentPlan { dt: 0.05, ..ok.clone() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{:?} {:?} {}", p.ladder, p.reference, p.dt);
        }
        ExperimentPlan { reference: Reference::Fem { intervals: 64 }, ..ok }.validate().unwrap();
    }

    #[test]
    fn prolongation_is_exact_on_nested_meshes() {
        let coarse = vec![1.0, -2.0, 0.5];
        let mut fine = vec![0.0; 15];
        prolong(&coarse, 4, &mut fine);
        let f = |x: f64| {
            let nodes = [0.0, 1.0, -2.0, 0.5, 0.0];
            let s = x * 4.0;
            let k = (s.floor() as usize).min(3);
            let t = s - k as f64;
            (1.0 - t) * nodes[k] + t * nodes[k + 1]
        };
        for (j, v) in fine.iter().enumerate() {
            assert!((v - f((j + 1) as f64 / 16.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn noiseless_errors_are_deterministic_distances() {
        let mut plan = anchor_plan();
        plan.model = ModelSpec::new(Drift::Linear { a: 1.0 }, Diffusion::Zero, CovarianceSpec::White, SpectralVector::unit(1, 1), 0.05).unwrap();
        plan.samples = 100;
        let out = run_experiment(&plan).unwrap();
        let scheme = StepScheme::new(plan.scheme, plan.dt, 0.05).unwrap();
        let exact = linear_gaussian_law(&plan.model, &scheme, &Target::Spectral(64), 64, None).unwrap();
        let reference = SpectralVector::new(exact.mean.iter().copied().collect());
        for (l, &n) in plan.ladder.iter().enumerate() {
            let space = Arc::new(FemSpace::uniform(n).unwrap());
            let law = linear_gaussian_law(&plan.model, &scheme, &Target::Fem(space.clone()), 64, None).unwrap();
            let mut c = vec![0.0; n - 1];
            space.from_eigen(&mut space.workspace(), law.mean.as_slice(), &mut c);
            let f = crate::fem::FemFunction::new(space, c).unwrap();
            let d = f.l2_distance_to(&reference);
            assert!((out.strong.error[l] - d).abs() < 1e-9 * d.max(1e-3), "{} vs {d}", out.strong.error[l]);
            assert_eq!(out.strong.stderr[l], 0.0);
        }
        assert!(out.strong.rate.unwrap().slope > 1.8);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let plan = anchor_plan();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_experiment(&plan).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn weak_differences_match_closed_form() {
        let plan = anchor_plan();
        let out = run_experiment(&plan).unwrap();
        let scheme = StepScheme::new(plan.scheme, plan.dt, 0.05).unwrap();
        for (t, phi) in plan.test_functions.iter().enumerate() {
            let w = phi.direction();
            let e_ref = linear_gaussian_law(&plan.model, &scheme, &Target::Spectral(64), 64, w).unwrap().expectation(phi).unwrap();
            let rep = &out.weak[t];
            for (l, &n) in plan.ladder.iter().enumerate() {
                let space = Arc::new(FemSpace::uniform(n).unwrap());
                let e_h = linear_gaussian_law(&plan.model, &scheme, &Target::Fem(space), 64, w).unwrap().expectation(phi).unwrap();
                let est = rep.mean_difference.as_ref().unwrap()[l];
                assert!((est - (e_ref - e_h)).abs() < 4.0 * rep.stderr[l] + 1e-12, "{} level {n}: {est} vs {}", phi.name(), e_ref - e_h);
            }
        }
        assert!(out.strong.saturation.is_some());
        assert!(out.strong.reference_floor.unwrap() > 0.0);
    }

    #[test]
    fn finite_element_reference_runs() {
        let plan = ExperimentPlan {
            reference: Reference::Fem { intervals: 64 },
            samples: 100,
            saturation: false,
            ..anchor_plan()
        };
        let out = run_experiment(&plan).unwrap();
        assert!(out.strong.error.iter().all(|e| *e > 0.0));
        assert!(out.strong.error[2] < out.strong.error[0]);
        assert!(out.strong.reference_floor.is_some());
    }

    #[test]
    fn monotonicity_allows_one_small_inversion() {
        let mut r = strong_error(&ExperimentPlan { samples: 100, saturation: false, ..anchor_plan() }).unwrap();
        r.error = vec![1.0, 0.5, 0.51, 0.2];
        r.stderr = vec![0.01; 4];
        assert!(r.is_monotone());
        r.error = vec![1.0, 0.5, 0.7, 0.2];
        assert!(!r.is_monotone());
        r.error = vec![1.0, 1.001, 1.002, 0.2];
        assert!(!r.is_monotone());
    }
}
