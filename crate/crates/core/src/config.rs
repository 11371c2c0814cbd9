//! Experiment configuration: flat `key = value` sections in TOML syntax.
//!
//! Every key is optional; missing keys take the defaults of the Assumption B
//! setup. Unknown keys and invalid values are reported with the file line
//! they came from, or with the `--set` flag that supplied them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::integrator::{Diffusion, Drift, ModelSpec, SchemeKind, StepScheme};
use crate::lab::certify::{OperatorPlan, OperatorTolerances};
use crate::lab::experiment::{ExperimentPlan, Reference, MIN_SAMPLES, REFERENCE_FACTOR};
use crate::lab::testfn::TestFunction;
use crate::spectral::{CovarianceSpec, SpectralVector};

/// Built-in configuration used when no file is given.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads, 0 for one per core.
    pub threads: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoSection {
    pub samples: usize,
    pub dt: f64,
    pub final_time: f64,
    pub modes: usize,
    pub covariance: CovarianceSpec,
}

/// Acceptance thresholds of the suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub strong_rate: f64,
    pub strong_tolerance: f64,
    pub weak_min_rate: f64,
    /// Monte Carlo standard errors must stay below this fraction of each weak error.
    pub weak_stderr_fraction: f64,
    /// Weak slope may fall at most this far below the strong slope.
    pub weak_strong_gap: f64,
    pub ito_z: f64,
    pub anchor_z: f64,
    pub operator: OperatorTolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub model: ModelSpec,
    pub scheme: SchemeKind,
    pub dt: f64,
    pub saturation: bool,
    pub min_level: u32,
    pub max_level: u32,
    pub reference: Reference,
    pub truncation: usize,
    pub samples: usize,
    pub test_functions: Vec<TestFunction>,
    pub operator: OperatorPlan,
    pub ito: ItoSection,
    pub acceptance: Acceptance,
    /// `--set` overrides in the order given.
    pub overrides: Vec<String>,
}

impl ExperimentConfig {
    /// Reads `path`, or the built-in default when `None`, then applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: cannot read config: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string(), overrides)
            }
            None => Self::parse(DEFAULT_CONFIG, "<default config>", overrides),
        }
    }

    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            Error::Config(match line {
                Some(l) => format!("{origin}:{l}: {}", e.message()),
                None => format!("{origin}: {}", e.message()),
            })
        })?;
        let mut overridden = BTreeSet::new();
        for o in overrides {
            let (key, value) = apply_override(&mut table, o)?;
            overridden.insert((key, value));
        }
        let mut r = Reader {
            table,
            text,
            origin,
            overridden: overridden.into_iter().map(|(k, _)| k).collect(),
            used: BTreeSet::new(),
        };
        let cfg = r.build(overrides)?;
        r.reject_unknown()?;
        Ok(cfg)
    }

    pub fn ladder(&self) -> Vec<usize> {
        (self.min_level..=self.max_level).map(|l| 1usize << l).collect()
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            model: self.model.clone(),
            scheme: self.scheme,
            dt: self.dt,
            ladder: self.ladder(),
            reference: self.reference,
            samples: self.samples,
            truncation: self.truncation,
            seed: self.run.seed,
            test_functions: self.test_functions.clone(),
            saturation: self.saturation,
        }
    }

    /// SHA-256 of the resolved configuration, excluding the output directory
    /// and thread count, which do not influence any reported number.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = PathBuf::new();
        c.run.threads = 0;
        let json = serde_json::to_string(&c).expect("configuration serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses `section.key=value` into the table; the value uses TOML syntax,
/// falling back to a bare string.
fn apply_override(table: &mut Table, raw: &str) -> Result<(String, String)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {raw}: expected KEY=VALUE")))?;
    let key = key.trim();
    let (section, field) = key
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("--set {raw}: key must be SECTION.KEY")))?;
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(field.to_string(), parsed);
        }
        _ => return Err(Error::Config(format!("--set {raw}: {section} is not a section"))),
    }
    Ok((key.to_string(), value.to_string()))
}

struct Reader<'a> {
    table: Table,
    text: &'a str,
    origin: &'a str,
    overridden: BTreeSet<String>,
    used: BTreeSet<String>,
}

impl Reader<'_> {
    /// Line of `key` inside `[section]`.
    fn locate(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                continue;
            }
            if current == section {
                if let Some(rest) = t.strip_prefix(key) {
                    if rest.trim_start().starts_with('=') {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let full = format!("{section}.{key}");
        if self.overridden.contains(&full) {
            return Error::Config(format!("--set {full}: {msg}"));
        }
        match self.locate(section, key) {
            Some(l) => Error::Config(format!("{}:{l}: {full}: {msg}", self.origin)),
            None => Error::Config(format!("{}: {full}: {msg}", self.origin)),
        }
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<Value> {
        self.used.insert(format!("{section}.{key}"));
        match self.table.get(section) {
            Some(Value::Table(t)) => t.get(key).cloned(),
            _ => None,
        }
    }

    fn float(&mut self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(Value::Float(f)) => Ok(f),
            Some(Value::Integer(i)) => Ok(i as f64),
            Some(v) => Err(self.err(section, key, format!("expected a number, got {v}"))),
        }
    }

    fn uint(&mut self, section: &str, key: &str, default: u64) -> Result<u64> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(v) => Err(self.err(section, key, format!("expected a nonnegative integer, got {v}"))),
        }
    }

    fn boolean(&mut self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => Err(self.err(section, key, format!("expected true or false, got {v}"))),
        }
    }

    fn string(&mut self, section: &str, key: &str, default: &str) -> Result<String> {
        match self.raw(section, key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(v) => Err(self.err(section, key, format!("expected a string, got {v}"))),
        }
    }

    fn choice(&mut self, section: &str, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        let s = self.string(section, key, default)?;
        if allowed.contains(&s.as_str()) {
            Ok(s)
        } else {
            Err(self.err(section, key, format!("unknown value {s:?}, expected one of {allowed:?}")))
        }
    }

    fn positive(&mut self, section: &str, key: &str, default: f64) -> Result<f64> {
        let v = self.float(section, key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(section, key, format!("must be positive and finite, got {v}")))
        }
    }

    fn reject_unknown(&self) -> Result<()> {
        for (section, value) in &self.table {
            let Value::Table(t) = value else {
                return Err(Error::Config(format!("{}: top-level key {section:?} must sit inside a section", self.origin)));
            };
            for key in t.keys() {
                if !self.used.contains(&format!("{section}.{key}")) {
                    return Err(self.err(section, key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    fn covariance(&mut self, section: &str) -> Result<CovarianceSpec> {
        let kind = self.choice(section, "covariance", "white", &["white", "fractional"])?;
        let s = self.float(section, "covariance_exponent", 0.75)?;
        let cov = match kind.as_str() {
            "white" => CovarianceSpec::White,
            _ => CovarianceSpec::Fractional { s },
        };
        cov.validate().map_err(|e| self.err(section, "covariance_exponent", e))?;
        Ok(cov)
    }

    fn build(&mut self, overrides: &[String]) -> Result<ExperimentConfig> {
        let run = RunSection {
            seed: self.uint("run", "seed", 20240601)?,
            threads: self.uint("run", "threads", 0)? as usize,
            out: PathBuf::from(self.string("run", "out", "out")?),
        };

        // model
        let drift = match self
            .choice("model", "drift", "sin", &["zero", "sin", "rational", "linear"])?
            .as_str()
        {
            "zero" => Drift::Zero,
            "sin" => Drift::Sin,
            "rational" => Drift::Rational,
            _ => Drift::Linear {
                a: self.float("model", "drift_coefficient", 1.0)?,
            },
        };
        let diffusion = match self
            .choice("model", "diffusion", "sin", &["zero", "additive", "sin", "inv_sqrt"])?
            .as_str()
        {
            "zero" => Diffusion::Zero,
            "additive" => Diffusion::Additive,
            "sin" => Diffusion::Sin,
            _ => Diffusion::InvSqrt,
        };
        let covariance = self.covariance("model")?;
        let amplitude = self.float("model", "initial_amplitude", 2.0 * std::f64::consts::PI)?;
        let initial_modes = self.uint("model", "initial_modes", 64)? as usize;
        if initial_modes == 0 {
            return Err(self.err("model", "initial_modes", "must be positive"));
        }
        let x0 = match self
            .choice("model", "initial", "poly", &["poly", "sine", "zero"])?
            .as_str()
        {
            "poly" => SpectralVector::from_function(|x| amplitude * x * (1.0 - x), initial_modes),
            "sine" => SpectralVector::unit(1, initial_modes).scale(amplitude),
            _ => SpectralVector::zeros(initial_modes),
        };
        let final_time = self.positive("model", "final_time", 0.5)?;
        let model = ModelSpec::new(drift, diffusion, covariance, x0, final_time)
            .map_err(|e| self.err("model", "diffusion", e))?;

        // scheme
        let scheme = match self
            .choice(
                "scheme",
                "kind",
                "exponential-ou",
                &["exponential-ou", "exponential-euler", "semi-implicit-euler"],
            )?
            .as_str()
        {
            "exponential-ou" => SchemeKind::ExponentialOu,
            "exponential-euler" => SchemeKind::ExponentialEuler,
            _ => SchemeKind::SemiImplicitEuler,
        };
        let dt = self.positive("scheme", "dt", 1e-3)?;
        StepScheme::new(scheme, dt, final_time)
            .map_err(|_| self.err("scheme", "dt", format!("{dt} does not divide final_time {final_time}")))?;
        let saturation = self.boolean("scheme", "saturation", true)?;
        if saturation {
            StepScheme::new(scheme, 2.0 * dt, final_time).map_err(|_| {
                self.err("scheme", "saturation", format!("2 dt = {} does not divide final_time {final_time}", 2.0 * dt))
            })?;
        }

        // ladder
        let min_level = self.uint("ladder", "min_level", 4)? as u32;
        let max_level = self.uint("ladder", "max_level", 7)? as u32;
        if min_level < 1 {
            return Err(self.err("ladder", "min_level", "must be at least 1"));
        }
        if max_level > 11 {
            return Err(self.err("ladder", "max_level", "must be at most 11"));
        }
        if max_level < min_level + 2 {
            return Err(self.err("ladder", "max_level", "the ladder needs at least 3 levels"));
        }
        let finest = 1usize << max_level;
        let ref_kind = self.choice("ladder", "reference", "spectral", &["spectral", "fem"])?;
        let resolution = self.uint("ladder", "reference_resolution", 512)? as usize;
        if resolution < REFERENCE_FACTOR * finest {
            return Err(self.err(
                "ladder",
                "reference_resolution",
                format!("{resolution} is not {REFERENCE_FACTOR}x finer than the finest level 2^-{max_level}"),
            ));
        }
        let reference = if ref_kind == "spectral" {
            Reference::Spectral { modes: resolution }
        } else {
            if !resolution.is_multiple_of(finest) {
                return Err(self.err("ladder", "reference_resolution", "finite element reference must be nested with the ladder"));
            }
            Reference::Fem { intervals: resolution }
        };
        let truncation = self.uint("ladder", "truncation", resolution as u64)? as usize;
        let needed = match reference {
            Reference::Spectral { modes } => modes,
            Reference::Fem { intervals } => intervals - 1,
        };
        if truncation < needed {
            return Err(self.err("ladder", "truncation", format!("must be at least {needed}")));
        }

        // monte carlo
        let samples = self.uint("monte_carlo", "samples", 10_000)? as usize;
        if samples < MIN_SAMPLES {
            return Err(self.err("monte_carlo", "samples", format!("must be at least {MIN_SAMPLES}")));
        }
        let mut test_functions = Vec::new();
        let names = self.string("monte_carlo", "test_functions", "gauss,cosine")?;
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            test_functions.push(match name {
                "gauss" => TestFunction::Gauss,
                "cosine" => TestFunction::cosine_phi1(),
                other => {
                    return Err(self.err(
                        "monte_carlo",
                        "test_functions",
                        format!("unknown test function {other:?}, expected gauss or cosine"),
                    ))
                }
            });
        }

        // operator certifications
        let op_min = self.uint("operator", "min_level", 3)? as u32;
        let op_max = self.uint("operator", "max_level", 8)? as u32;
        if op_min < 1 || op_max > 11 || op_max < op_min + 2 {
            return Err(self.err("operator", "max_level", "need 1 <= min_level, max_level <= 11 and at least 3 levels"));
        }
        let test_modes = self.uint("operator", "test_modes", 512)? as usize;
        if test_modes < 2 {
            return Err(self.err("operator", "test_modes", "must be at least 2"));
        }
        let random_vectors = self.uint("operator", "random_vectors", 100)? as usize;
        let oracle_modes = self.uint("operator", "oracle_modes", 2048)? as usize;
        if oracle_modes < (1 << op_max) {
            return Err(self.err("operator", "oracle_modes", "must cover the finest operator level"));
        }

        // ito
        let ito = ItoSection {
            samples: self.uint("ito", "samples", 100_000)? as usize,
            dt: self.positive("ito", "dt", 0.001)?,
            final_time: self.positive("ito", "final_time", 0.5)?,
            modes: self.uint("ito", "modes", 32)? as usize,
            covariance: self.covariance("ito")?,
        };
        if ito.samples < 2 {
            return Err(self.err("ito", "samples", "must be at least 2"));
        }
        if ito.modes == 0 {
            return Err(self.err("ito", "modes", "must be positive"));
        }

        let operator_tol = OperatorTolerances {
            rate_slack: self.positive("acceptance", "rate_slack", 0.1)?,
            smoothing_margin: self.positive("acceptance", "smoothing_margin", 1.05)?,
            norm_variation: self.positive("acceptance", "norm_variation", 2.0)?,
        };
        let acceptance = Acceptance {
            strong_rate: self.positive("acceptance", "strong_rate", 0.5)?,
            strong_tolerance: self.positive("acceptance", "strong_tolerance", 0.1)?,
            weak_min_rate: self.positive("acceptance", "weak_min_rate", 0.8)?,
            weak_stderr_fraction: self.positive("acceptance", "weak_stderr_fraction", 0.5)?,
            weak_strong_gap: self.positive("acceptance", "weak_strong_gap", 0.15)?,
            ito_z: self.positive("acceptance", "ito_z", 4.0)?,
            anchor_z: self.positive("acceptance", "anchor_z", 4.0)?,
            operator: operator_tol,
        };

        let operator = OperatorPlan {
            levels: (op_min..=op_max).collect(),
            test_modes,
            random_vectors,
            oracle_modes,
            seed: run.seed,
            tolerances: operator_tol,
        };

        Ok(ExperimentConfig {
            run,
            model,
            scheme,
            dt,
            saturation,
            min_level,
            max_level,
            reference,
            truncation,
            samples,
            test_functions,
            operator,
            ito,
            acceptance,
            overrides: overrides.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_parses() {
        let c = ExperimentConfig::load(None, &[]).unwrap();
        assert_eq!(c.ladder(), vec![16, 32, 64, 128]);
        assert_eq!(c.reference, Reference::Spectral { modes: 512 });
        assert_eq!(c.samples, 10_000);
        c.plan().validate().unwrap();
    }

    #[test]
    fn negative_dt_names_the_line() {
        let text = "[run]\nseed = 1\n\n[scheme]\nkind = \"exponential-ou\"\ndt = -0.001\n";
        let e = ExperimentConfig::parse(text, "bad.toml", &[]).unwrap_err().to_string();
        assert!(e.contains("bad.toml:6"), "{e}");
        assert!(e.contains("scheme.dt"), "{e}");
    }

    #[test]
    fn overrides_apply_and_are_named_in_errors() {
        let c = ExperimentConfig::parse("", "x", &["monte_carlo.samples=200".into(), "scheme.kind=exponential-euler".into()]).unwrap();
        assert_eq!(c.samples, 200);
        assert_eq!(c.scheme, SchemeKind::ExponentialEuler);
        let e = ExperimentConfig::parse("", "x", &["scheme.dt=0".into()]).unwrap_err().to_string();
        assert!(e.contains("--set scheme.dt"), "{e}");
    }

    #[test]
    fn unknown_keys_and_syntax_errors_are_located() {
        let e = ExperimentConfig::parse("[model]\n\ndirft = \"sin\"\n", "c.toml", &[]).unwrap_err().to_string();
        assert!(e.contains("c.toml:3") && e.contains("unknown key"), "{e}");
        let e = ExperimentConfig::parse("[model]\nfinal_time = = 1\n", "c.toml", &[]).unwrap_err().to_string();
        assert!(e.contains("c.toml:2"), "{e}");
    }

    #[test]
    fn cross_field_constraints() {
        for (set, key) in [
            ("ladder.reference_resolution=256", "reference_resolution"),
            ("ladder.truncation=100", "truncation"),
            ("monte_carlo.samples=10", "samples"),
            ("scheme.dt=0.3", "scheme.dt"),
            ("model.diffusion=additive", "model.diffusion"),
        ] {
            let e = ExperimentConfig::parse("", "x", &[set.into()]).unwrap_err().to_string();
            assert!(e.contains(key), "{set}: {e}");
        }
    }

    #[test]
    fn hash_ignores_output_and_threads() {
        let a = ExperimentConfig::parse("", "x", &[]).unwrap();
        let b = ExperimentConfig::parse("[run]\nout = \"elsewhere\"\nthreads = 3\n", "x", &[]).unwrap();
        let c = ExperimentConfig::parse("[run]\nseed = 5\n", "x", &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
