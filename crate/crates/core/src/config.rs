//! Experiment configuration in a flat `section.key = value` format.
//!
//! ```text
//! # diagonal benchmark
//! problem.kind = power_law
//! problem.n = 10000
//! problem.eta = 2
//! problem.beta = 2
//! noise.level = 0.001
//! landweber.iters = 2000
//! ```
//!
//! Every key has a default; [`ExperimentConfig::echo`] lists the effective
//! value of all of them. Relative paths are resolved against the directory of
//! the config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::exec::Execution;
use crate::landweber::StepSize;
use crate::validation::{log_spaced_levels, DEFAULT_GROWTH_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    PowerLaw,
    ExpSolution,
    ExpOperator,
    Deriv2,
    Gravity,
    External,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 6] = [
        ProblemKind::PowerLaw,
        ProblemKind::ExpSolution,
        ProblemKind::ExpOperator,
        ProblemKind::Deriv2,
        ProblemKind::Gravity,
        ProblemKind::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::PowerLaw => "power_law",
            ProblemKind::ExpSolution => "exp_solution",
            ProblemKind::ExpOperator => "exp_operator",
            ProblemKind::Deriv2 => "deriv2",
            ProblemKind::Gravity => "gravity",
            ProblemKind::External => "external",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ProblemKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Config(format!(
                    "unknown problem kind {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    pub depth: f64,
    pub matrix: Option<PathBuf>,
    pub rhs: Option<PathBuf>,
    pub x_true: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberSettings {
    pub iters: usize,
    pub step: StepSize,
    /// Initial guess file; zero vector when absent.
    pub x0: Option<PathBuf>,
    pub record_iterates: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig {
    pub tikhonov: bool,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub svd_check: bool,
    pub growth_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub trace: PathBuf,
    pub report: PathBuf,
    /// Log-thin the trace CSV to about this many rows; 0 keeps every row.
    pub max_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    pub landweber: LandweberSettings,
    pub estimator: EstimatorConfig,
    pub validation: ValidationConfig,
    pub output: OutputConfig,
    pub parallel: bool,
    base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig {
                kind: ProblemKind::PowerLaw,
                n: 10_000,
                eta: 2.0,
                beta: 2.0,
                depth: 0.25,
                matrix: None,
                rhs: None,
                x_true: None,
            },
            noise: NoiseConfig {
                level: 0.0,
                seed: 0,
            },
            landweber: LandweberSettings {
                iters: 2000,
                step: StepSize::Auto,
                x0: None,
                record_iterates: false,
            },
            estimator: EstimatorConfig::default(),
            validation: ValidationConfig {
                tikhonov: false,
                levels: log_spaced_levels(0.1, 0.001, 10),
                seeds: (0..5).collect(),
                svd_check: false,
                growth_threshold: DEFAULT_GROWTH_THRESHOLD,
            },
            output: OutputConfig {
                trace: PathBuf::from("trace.csv"),
                report: PathBuf::from("report.json"),
                max_rows: 0,
            },
            parallel: true,
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}: invalid value {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or_else(String::new, |p| p.display().to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self {
            base_dir: base_dir.to_path_buf(),
            ..Self::default()
        };
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), i + 1) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key} (first set on line {prev})",
                    i + 1
                )));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Set one key. Unknown keys and malformed values are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| Some(PathBuf::from(v));
        match key {
            "problem.kind" => self.problem.kind = value.parse()?,
            "problem.n" => self.problem.n = parse_num(key, value)?,
            "problem.eta" => self.problem.eta = parse_num(key, value)?,
            "problem.beta" => self.problem.beta = parse_num(key, value)?,
            "problem.depth" => self.problem.depth = parse_num(key, value)?,
            "problem.matrix" => self.problem.matrix = path(value),
            "problem.rhs" => self.problem.rhs = path(value),
            "problem.x_true" => self.problem.x_true = path(value),
            "noise.level" => self.noise.level = parse_num(key, value)?,
            "noise.seed" => self.noise.seed = parse_num(key, value)?,
            "landweber.iters" => self.landweber.iters = parse_num(key, value)?,
            "landweber.step" => {
                self.landweber.step = if value == "auto" {
                    StepSize::Auto
                } else {
                    StepSize::Fixed(parse_num(key, value)?)
                }
            }
            "landweber.x0" => self.landweber.x0 = if value == "zero" { None } else { path(value) },
            "landweber.record_iterates" => self.landweber.record_iterates = parse_bool(key, value)?,
            "estimator.k_min" => self.estimator.k_min = parse_num(key, value)?,
            "estimator.w_min" => self.estimator.w_min = parse_num(key, value)?,
            "estimator.eps_mu" => self.estimator.eps_mu = parse_num(key, value)?,
            "estimator.eps_c_rel" => self.estimator.eps_c_rel = parse_num(key, value)?,
            "estimator.persistence" => self.estimator.persistence = parse_num(key, value)?,
            "estimator.saturation_window" => {
                self.estimator.saturation_window = parse_num(key, value)?
            }
            "estimator.saturation_low" => self.estimator.saturation_low = parse_num(key, value)?,
            "estimator.saturation_high" => self.estimator.saturation_high = parse_num(key, value)?,
            "estimator.oscillation_hysteresis" => {
                self.estimator.oscillation_hysteresis = parse_num(key, value)?
            }
            "estimator.oscillation_cycles" => {
                self.estimator.oscillation_cycles = parse_num(key, value)?
            }
            "validation.tikhonov" => self.validation.tikhonov = parse_bool(key, value)?,
            "validation.levels" => self.validation.levels = parse_list(key, value)?,
            "validation.seeds" => self.validation.seeds = parse_list(key, value)?,
            "validation.svd_check" => self.validation.svd_check = parse_bool(key, value)?,
            "validation.growth_threshold" => {
                self.validation.growth_threshold = parse_num(key, value)?
            }
            "output.trace" => self.output.trace = PathBuf::from(value),
            "output.report" => self.output.report = PathBuf::from(value),
            "output.max_rows" => self.output.max_rows = parse_num(key, value)?,
            "execution.parallel" => self.parallel = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let p = &self.problem;
        if p.kind == ProblemKind::External {
            if p.matrix.is_none() || p.rhs.is_none() {
                return fail("external problems need problem.matrix and problem.rhs".into());
            }
        } else if p.n < 2 {
            return fail(format!("problem.n must be >= 2, got {}", p.n));
        }
        if !(self.noise.level.is_finite() && self.noise.level >= 0.0) {
            return fail(format!(
                "noise.level must be >= 0, got {}",
                self.noise.level
            ));
        }
        if self.landweber.iters == 0 {
            return fail("landweber.iters must be >= 1".into());
        }
        if let StepSize::Fixed(b) = self.landweber.step {
            if !(b > 0.0 && b.is_finite()) {
                return fail(format!(
                    "landweber.step must be auto or a positive number, got {b}"
                ));
            }
        }
        self.estimator
            .validate()
            .map_err(|e| Error::Config(format!("estimator: {}", strip_prefix(&e))))?;
        let v = &self.validation;
        if v.tikhonov {
            if v.levels.len() < 3 {
                return fail("validation.levels needs at least 3 values".into());
            }
            if v.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                return fail("validation.levels must lie in (0, 1)".into());
            }
            if v.seeds.is_empty() {
                return fail("validation.seeds must not be empty".into());
            }
        }
        if !(v.growth_threshold > 1.0) {
            return fail("validation.growth_threshold must be > 1".into());
        }
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Effective value of every key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let p = &self.problem;
        let e = &self.estimator;
        let v = &self.validation;
        let step = match self.landweber.step {
            StepSize::Auto => "auto".to_string(),
            StepSize::Fixed(b) => b.to_string(),
        };
        let entries = [
            ("problem.kind", p.kind.to_string()),
            ("problem.n", p.n.to_string()),
            ("problem.eta", p.eta.to_string()),
            ("problem.beta", p.beta.to_string()),
            ("problem.depth", p.depth.to_string()),
            ("problem.matrix", opt_path(&p.matrix)),
            ("problem.rhs", opt_path(&p.rhs)),
            ("problem.x_true", opt_path(&p.x_true)),
            ("noise.level", self.noise.level.to_string()),
            ("noise.seed", self.noise.seed.to_string()),
            ("landweber.iters", self.landweber.iters.to_string()),
            ("landweber.step", step),
            (
                "landweber.x0",
                self.landweber
                    .x0
                    .as_ref()
                    .map_or("zero".into(), |p| p.display().to_string()),
            ),
            (
                "landweber.record_iterates",
                self.landweber.record_iterates.to_string(),
            ),
            ("estimator.k_min", e.k_min.to_string()),
            ("estimator.w_min", e.w_min.to_string()),
            ("estimator.eps_mu", e.eps_mu.to_string()),
            ("estimator.eps_c_rel", e.eps_c_rel.to_string()),
            ("estimator.persistence", e.persistence.to_string()),
            (
                "estimator.saturation_window",
                e.saturation_window.to_string(),
            ),
            ("estimator.saturation_low", e.saturation_low.to_string()),
            ("estimator.saturation_high", e.saturation_high.to_string()),
            (
                "estimator.oscillation_hysteresis",
                e.oscillation_hysteresis.to_string(),
            ),
            (
                "estimator.oscillation_cycles",
                e.oscillation_cycles.to_string(),
            ),
            ("validation.tikhonov", v.tikhonov.to_string()),
            ("validation.levels", join(&v.levels)),
            ("validation.seeds", join(&v.seeds)),
            ("validation.svd_check", v.svd_check.to_string()),
            (
                "validation.growth_threshold",
                v.growth_threshold.to_string(),
            ),
            ("output.trace", self.output.trace.display().to_string()),
            ("output.report", self.output.report.display().to_string()),
            ("output.max_rows", self.output.max_rows.to_string()),
            ("execution.parallel", self.parallel.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidParameter(m) => m.clone(),
        other => other.to_string(),
    }
}
