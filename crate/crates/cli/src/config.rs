//! Flat `key = value` experiment configs.
//!
//! One dotted key per line; `#` starts a comment; blank lines are ignored.
//! Keys may appear at most once. Unknown keys are errors. Stepsize keys
//! take either a number or the word `corollary`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use biloop_core::{
    make_hyper_cleaning, make_hyper_representation, make_lower_bound_instance, BilevelOracle,
    Coupling, HyperCleaningDims, HyperRepresentationDims, ProblemError, RandomQuadratic, SchemeId,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("problem construction failed: {0}")]
    Problem(#[from] ProblemError),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Aid,
    Itd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Aid => "aid",
            Algorithm::Itd => "itd",
        }
    }
}

/// A stepsize given explicitly or taken from the scheme's prescription.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Step {
    Value(f64),
    Corollary,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Value(v) => write!(f, "{v}"),
            Step::Corollary => f.write_str("corollary"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic {
        p: usize,
        q: usize,
        kappa: f64,
        coupling: Coupling,
        spectrum: Option<Vec<f64>>,
        seed: u64,
    },
    LowerBound {
        l: f64,
        mu: f64,
        m: f64,
    },
    HyperRepresentation {
        dims: HyperRepresentationDims,
        gamma: f64,
        seed: u64,
    },
    HyperCleaning {
        dims: HyperCleaningDims,
        noise_frac: f64,
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::LowerBound { .. } => "lower_bound",
            ProblemSpec::HyperRepresentation { .. } => "hyper_representation",
            ProblemSpec::HyperCleaning { .. } => "hyper_cleaning",
        }
    }

    pub fn build(&self) -> Result<Box<dyn BilevelOracle>> {
        Ok(match self {
            ProblemSpec::Quadratic {
                p,
                q,
                kappa,
                coupling,
                spectrum,
                seed,
            } => {
                let mut gen = RandomQuadratic::new(*p, *q, *kappa, *seed).with_coupling(*coupling);
                if let Some(s) = spectrum {
                    gen = gen.with_spectrum(s.clone());
                }
                Box::new(gen.generate()?)
            }
            ProblemSpec::LowerBound { l, mu, m } => Box::new(make_lower_bound_instance(*l, *mu, *m)?),
            ProblemSpec::HyperRepresentation { dims, gamma, seed } => {
                Box::new(make_hyper_representation(dims, *gamma, *seed)?)
            }
            ProblemSpec::HyperCleaning {
                dims,
                noise_frac,
                seed,
            } => Box::new(make_hyper_cleaning(dims, *noise_frac, *seed)?),
        })
    }
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub scheme: Option<SchemeId>,
    /// Explicit loop sizes; override the scheme's.
    pub n: Option<usize>,
    pub q: Option<usize>,
    pub alpha: Step,
    pub eta: Step,
    pub beta: Step,
    pub c_beta: f64,
    pub k: usize,
    pub epsilon: f64,
    pub warm_start_y: bool,
    pub warm_start_v: bool,
    pub x0: Option<Vec<f64>>,
    pub trace_stride: usize,
    pub reference_tol: Option<f64>,
    pub wall_time: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with harness defaults for everything but the problem and
    /// algorithm.
    pub fn new(problem: ProblemSpec, algorithm: Algorithm) -> Self {
        Self {
            problem,
            algorithm,
            scheme: None,
            n: None,
            q: None,
            alpha: Step::Corollary,
            eta: Step::Corollary,
            beta: Step::Corollary,
            c_beta: 0.5,
            k: 100,
            epsilon: 1e-6,
            warm_start_y: true,
            warm_start_v: true,
            x0: None,
            trace_stride: 1,
            reference_tol: Some(1e-10),
            wall_time: false,
            output: None,
        }
    }

    /// Short label for summary tables.
    pub fn label(&self) -> String {
        match self.scheme {
            Some(s) => s.to_string(),
            None => format!("{}:custom", self.algorithm.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.scheme {
            if s.algorithm() != self.algorithm.name() {
                return Err(invalid(
                    "scheme",
                    format!("{} is not a scheme of {}", s.name(), self.algorithm.name()),
                ));
            }
        }
        if self.scheme.is_none() {
            if self.n.is_none() {
                return Err(ConfigError::Missing("loop.N".into()));
            }
            if self.algorithm == Algorithm::Aid && self.q.is_none() {
                return Err(ConfigError::Missing("loop.Q".into()));
            }
            for (key, step) in [("step.alpha", self.alpha), ("step.eta", self.eta), ("step.beta", self.beta)] {
                let needed = key != "step.eta" || self.algorithm == Algorithm::Aid;
                if needed && step == Step::Corollary {
                    return Err(invalid(key, "`corollary` needs a `scheme`"));
                }
            }
        }
        if self.algorithm == Algorithm::Itd && self.q.is_some() {
            return Err(invalid("loop.Q", "ITD has no linear-system loop"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("run.epsilon", "must be positive"));
        }
        if self.k == 0 {
            return Err(invalid("run.K", "must be positive"));
        }
        if self.trace_stride == 0 {
            return Err(invalid("trace.stride", "must be positive"));
        }
        if !(self.c_beta > 0.0 && self.c_beta.is_finite()) {
            return Err(invalid("step.c_beta", "must be positive"));
        }
        Ok(())
    }

    /// Renders the config in the parseable format, every key explicit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("problem.name", self.problem.name().into());
        match &self.problem {
            ProblemSpec::Quadratic {
                p,
                q,
                kappa,
                coupling,
                spectrum,
                seed,
            } => {
                put("problem.p", p.to_string());
                put("problem.q", q.to_string());
                put("problem.kappa", kappa.to_string());
                put("problem.coupling", coupling_name(*coupling).into());
                if let Some(s) = spectrum {
                    put("problem.spectrum", join(s));
                }
                put("problem.seed", seed.to_string());
            }
            ProblemSpec::LowerBound { l, mu, m } => {
                put("problem.L", l.to_string());
                put("problem.mu", mu.to_string());
                put("problem.M", m.to_string());
            }
            ProblemSpec::HyperRepresentation { dims, gamma, seed } => {
                put("problem.train", dims.train.to_string());
                put("problem.val", dims.val.to_string());
                put("problem.features", dims.features.to_string());
                put("problem.rep_dim", dims.rep_dim.to_string());
                put("problem.noise", dims.noise.to_string());
                if let Some(r) = dims.radius {
                    put("problem.radius", r.to_string());
                }
                put("problem.gamma", gamma.to_string());
                put("problem.seed", seed.to_string());
            }
            ProblemSpec::HyperCleaning {
                dims,
                noise_frac,
                seed,
            } => {
                put("problem.samples", dims.samples.to_string());
                put("problem.features", dims.features.to_string());
                put("problem.train_frac", dims.train_frac.to_string());
                put("problem.val_frac", dims.val_frac.to_string());
                put("problem.lambda_init", dims.lambda_init.to_string());
                put("problem.lambda_min", dims.lambda_min.to_string());
                put("problem.lambda_max", dims.lambda_max.to_string());
                put("problem.noise_frac", noise_frac.to_string());
                put("problem.seed", seed.to_string());
            }
        }
        put("algorithm", self.algorithm.name().into());
        if let Some(s) = self.scheme {
            put("scheme", s.name().into());
        }
        if let Some(n) = self.n {
            put("loop.N", n.to_string());
        }
        if let Some(q) = self.q {
            put("loop.Q", q.to_string());
        }
        put("step.alpha", self.alpha.to_string());
        put("step.eta", self.eta.to_string());
        put("step.beta", self.beta.to_string());
        put("step.c_beta", self.c_beta.to_string());
        put("run.K", self.k.to_string());
        put("run.epsilon", self.epsilon.to_string());
        put("run.warm_start_y", self.warm_start_y.to_string());
        put("run.warm_start_v", self.warm_start_v.to_string());
        if let Some(x0) = &self.x0 {
            put("run.x0", join(x0));
        }
        put("trace.stride", self.trace_stride.to_string());
        put(
            "trace.reference_tol",
            self.reference_tol.map_or("off".into(), |t| t.to_string()),
        );
        put("trace.wall_time", self.wall_time.to_string());
        if let Some(p) = &self.output {
            put("output.path", p.display().to_string());
        }
        out
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn coupling_name(c: Coupling) -> &'static str {
    match c {
        Coupling::Dense => "dense",
        Coupling::SlowEigenspace => "slow_eigenspace",
    }
}

/// Key/value pairs with consumption tracking, so leftovers can be reported.
struct Entries(BTreeMap<String, String>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.take(key)
            .map(|v| v.parse::<T>().map_err(|e| invalid(key, format!("`{v}`: {e}"))))
            .transpose()
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.take(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| invalid(key, format!("`{s}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn step(&mut self, key: &str) -> Result<Step> {
        match self.take(key) {
            None => Ok(Step::Corollary),
            Some(v) if v == "corollary" => Ok(Step::Corollary),
            Some(v) => v
                .parse::<f64>()
                .map(Step::Value)
                .map_err(|_| invalid(key, format!("expected a number or `corollary`, got `{v}`"))),
        }
    }
}

fn parse_problem(e: &mut Entries) -> Result<ProblemSpec> {
    let name: String = e.require("problem.name")?;
    Ok(match name.as_str() {
        "quadratic" => ProblemSpec::Quadratic {
            p: e.require("problem.p")?,
            q: e.require("problem.q")?,
            kappa: e.require("problem.kappa")?,
            coupling: match e.take("problem.coupling").as_deref() {
                None | Some("dense") => Coupling::Dense,
                Some("slow_eigenspace") => Coupling::SlowEigenspace,
                Some(other) => {
                    return Err(invalid(
                        "problem.coupling",
                        format!("expected `dense` or `slow_eigenspace`, got `{other}`"),
                    ))
                }
            },
            spectrum: e.list("problem.spectrum")?,
            seed: e.or("problem.seed", 0)?,
        },
        "lower_bound" => ProblemSpec::LowerBound {
            l: e.require("problem.L")?,
            mu: e.require("problem.mu")?,
            m: e.require("problem.M")?,
        },
        "hyper_representation" => {
            let d = HyperRepresentationDims::default();
            ProblemSpec::HyperRepresentation {
                dims: HyperRepresentationDims {
                    train: e.or("problem.train", d.train)?,
                    val: e.or("problem.val", d.val)?,
                    features: e.or("problem.features", d.features)?,
                    rep_dim: e.or("problem.rep_dim", d.rep_dim)?,
                    noise: e.or("problem.noise", d.noise)?,
                    radius: e.parse("problem.radius")?,
                },
                gamma: e.or("problem.gamma", 1.0)?,
                seed: e.or("problem.seed", 0)?,
            }
        }
        "hyper_cleaning" => {
            let d = HyperCleaningDims::default();
            ProblemSpec::HyperCleaning {
                dims: HyperCleaningDims {
                    samples: e.or("problem.samples", d.samples)?,
                    features: e.or("problem.features", d.features)?,
                    train_frac: e.or("problem.train_frac", d.train_frac)?,
                    val_frac: e.or("problem.val_frac", d.val_frac)?,
                    lambda_init: e.or("problem.lambda_init", d.lambda_init)?,
                    lambda_min: e.or("problem.lambda_min", d.lambda_min)?,
                    lambda_max: e.or("problem.lambda_max", d.lambda_max)?,
                },
                noise_frac: e.or("problem.noise_frac", 0.0)?,
                seed: e.or("problem.seed", 0)?,
            }
        }
        other => return Err(invalid("problem.name", format!("unknown problem `{other}`"))),
    })
}

impl FromStr for ExperimentConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    text: raw.to_string(),
                });
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: idx + 1,
                    key: key.to_string(),
                });
            }
        }
        let mut e = Entries(map);
        let problem = parse_problem(&mut e)?;
        let algorithm = match e.take("algorithm").as_deref() {
            Some("aid") => Algorithm::Aid,
            Some("itd") => Algorithm::Itd,
            Some(other) => {
                return Err(invalid("algorithm", format!("expected `aid` or `itd`, got `{other}`")))
            }
            None => return Err(ConfigError::Missing("algorithm".into())),
        };
        let scheme = match e.take("scheme") {
            None => None,
            Some(s) => Some(SchemeId::parse(algorithm.name(), &s).ok_or_else(|| {
                invalid("scheme", format!("unknown {} scheme `{s}`", algorithm.name()))
            })?),
        };
        let reference_tol = match e.take("trace.reference_tol").as_deref() {
            None => Some(1e-10),
            Some("off") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| invalid("trace.reference_tol", format!("expected a number or `off`, got `{v}`")))?,
            ),
        };
        let config = ExperimentConfig {
            problem,
            algorithm,
            scheme,
            n: e.parse("loop.N")?,
            q: e.parse("loop.Q")?,
            alpha: e.step("step.alpha")?,
            eta: e.step("step.eta")?,
            beta: e.step("step.beta")?,
            c_beta: e.or("step.c_beta", 0.5)?,
            k: e.require("run.K")?,
            epsilon: e.or("run.epsilon", 1e-6)?,
            warm_start_y: e.or("run.warm_start_y", true)?,
            warm_start_v: e.or("run.warm_start_v", true)?,
            x0: e.list("run.x0")?,
            trace_stride: e.or("trace.stride", 1)?,
            reference_tol,
            wall_time: e.or("trace.wall_time", false)?,
            output: e.take("output.path").map(PathBuf::from),
        };
        if let Some(key) = e.0.keys().next() {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        config.validate()?;
        Ok(config)
    }
}
