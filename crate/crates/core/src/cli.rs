//! Command-line experiment runner.
//!
//! Exit codes: 0 when every check of the suite passes, 2 when a check fails,
//! 1 for configuration, usage or runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::integrator::{StepScheme, Target};
use crate::lab::certify::{assembly_checks, operator_checks, CheckResult};
use crate::lab::experiment::{run_experiment, strong_error, ConvergenceReport, ExperimentOutcome, Reference};
use crate::lab::gaussian::linear_gaussian_law;
use crate::noise::{ito_isometry_check, Integrand, ItoReport, WienerConfig};
use crate::report::{columns_csv, create_run_dir, file_stem, write_json, write_new};

/// Environment variable naming the output directory; `--out` wins over it.
pub const OUT_ENV: &str = "HEAT_SPDE_OUT";

#[derive(Debug, Parser)]
#[command(name = "heat-spde", version, about = "Convergence experiments for the stochastic heat equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file; the built-in default is used when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set scheme.dt=0.0005`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for Monte Carlo sampling (0 = one per core).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output root directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Mass/stiffness assembly and elliptic convergence rates.
    AssembleCheck,
    /// Projection, smoothing and norm-equivalence inequalities.
    OperatorCheck,
    /// Ito isometry for deterministic integrands.
    ItoCheck,
    /// Strong convergence rate on the configured ladder.
    StrongRate,
    /// Weak convergence rates for the configured test functions.
    WeakRate,
    /// Every suite, sharing one Monte Carlo run.
    All,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::AssembleCheck => "assemble-check",
            Command::OperatorCheck => "operator-check",
            Command::ItoCheck => "ito-check",
            Command::StrongRate => "strong-rate",
            Command::WeakRate => "weak-rate",
            Command::All => "all",
        }
    }
}

/// One pass/fail line of a suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default, Serialize)]
pub struct SuiteOutcome {
    pub verdicts: Vec<Verdict>,
    pub certifications: Vec<CheckResult>,
    pub ito: Vec<ItoReport>,
    pub convergence: Vec<ConvergenceReport>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    fn extend(&mut self, other: SuiteOutcome) {
        self.verdicts.extend(other.verdicts);
        self.certifications.extend(other.certifications);
        self.ito.extend(other.ito);
        self.convergence.extend(other.convergence);
    }
}

#[derive(Serialize)]
struct Header<'a> {
    suite: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: String,
    overrides: &'a [String],
}

#[derive(Serialize)]
struct Report<'a> {
    header: Header<'a>,
    passed: bool,
    config: ExperimentConfig,
    #[serde(flatten)]
    outcome: &'a SuiteOutcome,
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok((outcome, dir)) => {
            for v in &outcome.verdicts {
                println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
            }
            println!("report: {}", dir.display());
            if outcome.passed() {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Resolves the configuration, runs the suite and writes its report.
pub fn execute(cli: &Cli) -> Result<(SuiteOutcome, PathBuf)> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
        config.operator.seed = seed;
        config.overrides.push(format!("--seed {seed}"));
    }
    if let Some(t) = cli.threads {
        config.run.threads = t;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| config.run.out.clone());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", config.run.threads)))?;
    let dir = create_run_dir(&out, cli.command.name())?;
    let outcome = pool.install(|| run_suite(cli.command, &config))?;
    write_report(&dir, cli.command.name(), &config, &outcome)?;
    Ok((outcome, dir))
}

pub fn run_suite(command: Command, config: &ExperimentConfig) -> Result<SuiteOutcome> {
    match command {
        Command::AssembleCheck => assemble_suite(config),
        Command::OperatorCheck => operator_suite(config),
        Command::ItoCheck => ito_suite(config),
        Command::StrongRate => {
            let report = strong_error(&config.plan())?;
            Ok(SuiteOutcome {
                verdicts: strong_verdicts(config, &report),
                convergence: vec![report],
                ..Default::default()
            })
        }
        Command::WeakRate => {
            let outcome = run_experiment(&config.plan())?;
            weak_suite(config, outcome)
        }
        Command::All => {
            let mut out = assemble_suite(config)?;
            out.extend(operator_suite(config)?);
            out.extend(ito_suite(config)?);
            let outcome = run_experiment(&config.plan())?;
            let strong = strong_verdicts(config, &outcome.strong);
            let mut weak = weak_suite(config, outcome)?;
            out.verdicts.extend(strong);
            out.verdicts.append(&mut weak.verdicts);
            out.convergence.extend(weak.convergence);
            Ok(out)
        }
    }
}

fn certification_verdicts(checks: &[CheckResult]) -> Vec<Verdict> {
    checks
        .iter()
        .map(|c| Verdict {
            name: c.name.clone(),
            passed: c.passed,
            detail: match c.slope {
                Some(s) => format!("slope {s:.4} (threshold {:.4}); {}", c.threshold, c.detail),
                None => c.detail.clone(),
            },
        })
        .collect()
}

fn assemble_suite(config: &ExperimentConfig) -> Result<SuiteOutcome> {
    let checks = assembly_checks(&config.operator.levels, config.acceptance.operator.rate_slack)?;
    Ok(SuiteOutcome {
        verdicts: certification_verdicts(&checks),
        certifications: checks,
        ..Default::default()
    })
}

fn operator_suite(config: &ExperimentConfig) -> Result<SuiteOutcome> {
    let checks = operator_checks(&config.operator)?;
    let mut verdicts = Vec::new();
    // one certification per inequality family
    for family in ["rhleq", "phleq", "aehleq", "eqnorm", "pmleq"] {
        let members: Vec<&CheckResult> = checks.iter().filter(|c| c.family == family).collect();
        let failed: Vec<&str> = members.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        verdicts.push(Verdict {
            name: family.into(),
            passed: !members.is_empty() && failed.is_empty(),
            detail: if failed.is_empty() {
                format!("{} checks passed", members.len())
            } else {
                format!("failed: {}", failed.join(", "))
            },
        });
    }
    Ok(SuiteOutcome {
        verdicts,
        certifications: checks,
        ..Default::default()
    })
}

fn ito_suite(config: &ExperimentConfig) -> Result<SuiteOutcome> {
    let ito = &config.ito;
    let wiener = WienerConfig::new(ito.modes, ito.covariance.clone(), config.run.seed)?;
    let mut out = SuiteOutcome::default();
    for integrand in [Integrand::Identity { modes: ito.modes }, Integrand::HeatKernel { modes: ito.modes }] {
        let r = ito_isometry_check(integrand, &wiener, ito.final_time, ito.dt, ito.samples)?;
        out.verdicts.push(Verdict {
            name: format!("ito({})", r.integrand),
            passed: r.z.abs() < config.acceptance.ito_z,
            detail: format!(
                "empirical {:.6e} vs discrete {:.6e}, z = {:.3}; quadrature bias {:.3e}",
                r.empirical, r.discrete, r.z, r.quadrature_bias
            ),
        });
        out.ito.push(r);
    }
    Ok(out)
}

fn strong_verdicts(config: &ExperimentConfig, r: &ConvergenceReport) -> Vec<Verdict> {
    let acc = &config.acceptance;
    let mut v = vec![
        match r.rate {
            Some(fit) => Verdict {
                name: "strong rate".into(),
                passed: (fit.slope - acc.strong_rate).abs() <= acc.strong_tolerance,
                detail: format!(
                    "slope {:.4} +- {:.4}, target {} +- {}",
                    fit.slope, fit.slope_stderr, acc.strong_rate, acc.strong_tolerance
                ),
            },
            None => Verdict {
                name: "strong rate".into(),
                passed: false,
                detail: "no rate: an error was zero".into(),
            },
        },
        Verdict {
            name: "strong monotone".into(),
            passed: r.is_monotone(),
            detail: format!(
                "errors [{}]",
                r.error.iter().map(|e| format!("{e:.4e}")).collect::<Vec<_>>().join(", ")
            ),
        },
    ];
    if let Some(s) = &r.saturation {
        v.push(Verdict {
            name: "time step saturated".into(),
            passed: s.saturated,
            detail: format!("relative change at 2 dt {:.4?}", s.relative_change),
        });
    }
    v
}

fn weak_suite(config: &ExperimentConfig, outcome: ExperimentOutcome) -> Result<SuiteOutcome> {
    let acc = &config.acceptance;
    let mut verdicts = Vec::new();
    let strong_slope = outcome.strong.rate.map(|f| f.slope);
    let anchor = config.model.is_linear_additive();
    for r in &outcome.weak {
        let slope = r.rate.map(|f| f.slope);
        verdicts.push(Verdict {
            name: format!("{} rate", r.quantity),
            passed: slope.is_some_and(|s| s >= acc.weak_min_rate),
            detail: format!("slope {}, required >= {}", fmt_slope(slope), acc.weak_min_rate),
        });
        let worst = r
            .stderr
            .iter()
            .zip(&r.error)
            .map(|(s, e)| s / e)
            .fold(0.0, f64::max);
        verdicts.push(Verdict {
            name: format!("{} stderr", r.quantity),
            passed: worst < acc.weak_stderr_fraction,
            detail: format!("largest stderr/error {worst:.4}, required < {}", acc.weak_stderr_fraction),
        });
        verdicts.push(Verdict {
            name: format!("{} vs strong", r.quantity),
            passed: matches!((slope, strong_slope), (Some(w), Some(s)) if w >= s - acc.weak_strong_gap),
            detail: format!(
                "weak {}, strong {}, allowed gap {}",
                fmt_slope(slope),
                fmt_slope(strong_slope),
                acc.weak_strong_gap
            ),
        });
    }
    if anchor {
        verdicts.extend(anchor_verdicts(config, &outcome)?);
    }
    let mut convergence = vec![outcome.strong];
    convergence.extend(outcome.weak);
    Ok(SuiteOutcome {
        verdicts,
        convergence,
        ..Default::default()
    })
}

/// Coupled weak estimates against the closed-form Gaussian differences.
pub fn anchor_verdicts(config: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<Vec<Verdict>> {
    let plan = config.plan();
    let scheme = StepScheme::new(plan.scheme, plan.dt, plan.model.final_time())?;
    let reference = match plan.reference {
        Reference::Spectral { modes } => Target::Spectral(modes),
        Reference::Fem { intervals } => Target::Fem(std::sync::Arc::new(FemSpace::uniform(intervals)?)),
    };
    let mut out = Vec::new();
    for (phi, r) in plan.test_functions.iter().zip(&outcome.weak) {
        let w = phi.direction();
        let e_ref = linear_gaussian_law(&plan.model, &scheme, &reference, plan.truncation, w)?.expectation(phi)?;
        let mut worst = 0.0f64;
        for (l, &n) in plan.ladder.iter().enumerate() {
            let space = std::sync::Arc::new(FemSpace::uniform(n)?);
            let e_h = linear_gaussian_law(&plan.model, &scheme, &Target::Fem(space), plan.truncation, w)?.expectation(phi)?;
            let est = r.mean_difference.as_ref().map_or(f64::NAN, |m| m[l]);
            worst = worst.max((est - (e_ref - e_h)).abs() / r.stderr[l]);
        }
        out.push(Verdict {
            name: format!("anchor {}", r.quantity),
            passed: worst < config.acceptance.anchor_z,
            detail: format!("largest |estimate - exact| / stderr {worst:.3}, required < {}", config.acceptance.anchor_z),
        });
    }
    Ok(out)
}

fn write_report(dir: &Path, suite: &str, config: &ExperimentConfig, outcome: &SuiteOutcome) -> Result<()> {
    let mut portable = config.clone();
    portable.run.out = PathBuf::new();
    portable.run.threads = 0;
    let report = Report {
        header: Header {
            suite,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.run.seed,
            config_hash: config.hash(),
            overrides: &config.overrides,
        },
        passed: outcome.passed(),
        config: portable,
        outcome,
    };
    write_json(dir, "report.json", &report)?;
    for r in &outcome.convergence {
        write_new(dir, &format!("{}.csv", file_stem(&r.quantity)), &columns_csv(&r.h, &r.error, &r.stderr))?;
    }
    for c in outcome.certifications.iter().filter(|c| !c.h.is_empty()) {
        let zeros = vec![0.0; c.h.len()];
        write_new(dir, &format!("{}.csv", file_stem(&c.name)), &columns_csv(&c.h, &c.measured, &zeros))?;
    }
    Ok(())
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or_else(|| "n/a".into(), |s| format!("{s:.4}"))
}
