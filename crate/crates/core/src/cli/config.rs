//! Run configuration: a flat TOML key/value file.
//!
//! ```toml
//! scenario = "ou"
//! h = 0.001
//! n = 400
//! a = 1.0        # scenario parameter override
//! ```
//!
//! Keys not given fall back to the scenario defaults. Any key that is neither
//! a run setting nor a parameter of the chosen scenario is rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::cloud::MomentMode;
use crate::prox::UnderflowPolicy;

use super::scenario::{self, ScenarioDef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("configuration does not name a scenario")]
    MissingScenario,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("unknown key `{key}` for scenario `{scenario}`")]
    UnknownKey { key: String, scenario: String },
    #[error("key `{key}` must be {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("time step h must be positive, got {0}")]
    Step(f64),
    #[error("beta must be positive, got {0}")]
    Beta(f64),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
    #[error("delta must be positive, got {0}")]
    Delta(f64),
    #[error("max_iters must be at least 1")]
    MaxIters,
    #[error("particle count n must be at least 1, got {0}")]
    Particles(i64),
    #[error("steps must be at least 1, got {0}")]
    Steps(i64),
    #[error("stride must be at least 1, got {0}")]
    Stride(i64),
    #[error("scenario parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: String,
        value: f64,
        reason: &'static str,
    },
    #[error("cannot read configuration: {0}")]
    Io(String),
}

impl ConfigError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Parse(_) => "E_PARSE",
            ConfigError::MissingScenario => "E_MISSING_SCENARIO",
            ConfigError::UnknownScenario(_) => "E_UNKNOWN_SCENARIO",
            ConfigError::UnknownKey { .. } => "E_UNKNOWN_KEY",
            ConfigError::WrongType { .. } => "E_TYPE",
            ConfigError::Step(_) => "E_STEP",
            ConfigError::Beta(_) => "E_BETA",
            ConfigError::Epsilon(_) => "E_EPSILON",
            ConfigError::Delta(_) => "E_DELTA",
            ConfigError::MaxIters => "E_MAX_ITERS",
            ConfigError::Particles(_) => "E_PARTICLES",
            ConfigError::Steps(_) => "E_STEPS",
            ConfigError::Stride(_) => "E_STRIDE",
            ConfigError::Parameter { .. } => "E_PARAMETER",
            ConfigError::Io(_) => "E_IO",
        }
    }
}

/// A validated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub h: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub n: usize,
    pub seed: u64,
    pub steps: usize,
    pub stride: usize,
    pub out_dir: Option<PathBuf>,
    pub moment_mode: MomentMode,
    pub underflow: UnderflowPolicy,
    /// Scenario parameters, defaults filled in.
    pub params: BTreeMap<String, f64>,
}

pub const DEFAULT_SEED: u64 = 1;

const RUN_KEYS: &[&str] = &[
    "scenario",
    "h",
    "beta",
    "epsilon",
    "delta",
    "max_iters",
    "n",
    "seed",
    "steps",
    "stride",
    "out_dir",
    "moment_mode",
    "underflow",
];

impl RunConfig {
    /// All defaults of a registered scenario.
    pub fn defaults(def: &ScenarioDef) -> Self {
        let d = &def.defaults;
        Self {
            scenario: def.name.to_string(),
            h: d.h,
            beta: d.beta,
            epsilon: d.epsilon,
            delta: d.delta,
            max_iters: d.max_iters,
            n: d.n,
            seed: DEFAULT_SEED,
            steps: d.steps,
            stride: d.stride,
            out_dir: None,
            moment_mode: MomentMode::Empirical,
            underflow: d.underflow,
            params: def.params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Defaults for a scenario by name.
    pub fn for_scenario(name: &str) -> Result<Self, ConfigError> {
        scenario::find(name)
            .map(Self::defaults)
            .ok_or_else(|| ConfigError::UnknownScenario(name.to_string()))
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    /// Serializes every field; `validate_config` of the output reproduces
    /// `self` exactly.
    pub fn to_toml_string(&self) -> String {
        let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
        let mut out = String::new();
        out.push_str(&format!("scenario = {}\n", quote(&self.scenario)));
        out.push_str(&format!("h = {:?}\n", self.h));
        out.push_str(&format!("beta = {:?}\n", self.beta));
        out.push_str(&format!("epsilon = {:?}\n", self.epsilon));
        out.push_str(&format!("delta = {:?}\n", self.delta));
        out.push_str(&format!("max_iters = {}\n", self.max_iters));
        out.push_str(&format!("n = {}\n", self.n));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("steps = {}\n", self.steps));
        out.push_str(&format!("stride = {}\n", self.stride));
        if let Some(dir) = &self.out_dir {
            out.push_str(&format!("out_dir = {}\n", quote(&dir.to_string_lossy())));
        }
        out.push_str(&format!("moment_mode = {}\n", quote(&self.moment_mode.to_string())));
        out.push_str(&format!("underflow = {}\n", quote(&self.underflow.to_string())));
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v:?}\n"));
        }
        out
    }

    fn check(&self, def: &ScenarioDef) -> Result<(), ConfigError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.h) {
            return Err(ConfigError::Step(self.h));
        }
        if !positive(self.beta) {
            return Err(ConfigError::Beta(self.beta));
        }
        if !positive(self.epsilon) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        if !positive(self.delta) {
            return Err(ConfigError::Delta(self.delta));
        }
        if self.max_iters == 0 {
            return Err(ConfigError::MaxIters);
        }
        if self.n == 0 {
            return Err(ConfigError::Particles(0));
        }
        if self.steps == 0 {
            return Err(ConfigError::Steps(0));
        }
        if self.stride == 0 {
            return Err(ConfigError::Stride(0));
        }
        (def.check)(self)
    }
}

fn float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::WrongType {
            key: key.to_string(),
            expected: "a number",
        }),
    }
}

fn integer(key: &str, v: &toml::Value) -> Result<i64, ConfigError> {
    match v {
        toml::Value::Integer(i) => Ok(*i),
        _ => Err(ConfigError::WrongType {
            key: key.to_string(),
            expected: "an integer",
        }),
    }
}

fn string<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| ConfigError::WrongType {
        key: key.to_string(),
        expected: "a string",
    })
}

/// Parses configuration text, fills defaults from the scenario registry and
/// enforces all invariants.
pub fn validate_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    let name = match table.get("scenario") {
        Some(v) => string("scenario", v)?,
        None => return Err(ConfigError::MissingScenario),
    };
    let def = scenario::find(name).ok_or_else(|| ConfigError::UnknownScenario(name.to_string()))?;
    let mut cfg = RunConfig::defaults(def);

    for (key, value) in &table {
        match key.as_str() {
            "scenario" => {}
            "h" => cfg.h = float(key, value)?,
            "beta" => cfg.beta = float(key, value)?,
            "epsilon" => cfg.epsilon = float(key, value)?,
            "delta" => cfg.delta = float(key, value)?,
            "max_iters" => {
                let v = integer(key, value)?;
                cfg.max_iters = usize::try_from(v).map_err(|_| ConfigError::MaxIters)?;
            }
            "n" => {
                let v = integer(key, value)?;
                cfg.n = usize::try_from(v).map_err(|_| ConfigError::Particles(v))?;
            }
            "steps" => {
                let v = integer(key, value)?;
                cfg.steps = usize::try_from(v).map_err(|_| ConfigError::Steps(v))?;
            }
            "stride" => {
                let v = integer(key, value)?;
                cfg.stride = usize::try_from(v).map_err(|_| ConfigError::Stride(v))?;
            }
            "seed" => {
                let v = integer(key, value)?;
                cfg.seed = u64::try_from(v).map_err(|_| ConfigError::WrongType {
                    key: key.clone(),
                    expected: "a nonnegative integer",
                })?;
            }
            "out_dir" => cfg.out_dir = Some(PathBuf::from(string(key, value)?)),
            "moment_mode" => {
                cfg.moment_mode = string(key, value)?.parse().map_err(|_| ConfigError::WrongType {
                    key: key.clone(),
                    expected: "\"empirical\" or \"mass_weighted\"",
                })?;
            }
            "underflow" => {
                cfg.underflow = string(key, value)?.parse().map_err(|_| ConfigError::WrongType {
                    key: key.clone(),
                    expected: "\"strict\" or \"sparse\"",
                })?;
            }
            other if cfg.params.contains_key(other) => {
                let v = float(key, value)?;
                cfg.params.insert(other.to_string(), v);
            }
            other => {
                debug_assert!(!RUN_KEYS.contains(&other));
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                    scenario: def.name.to_string(),
                });
            }
        }
    }
    cfg.check(def)?;
    Ok(cfg)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    validate_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_ou_config_gets_caption_defaults() {
        let cfg = validate_config("scenario = \"ou\"\n").unwrap();
        assert_eq!(cfg.h, 1e-3);
        assert_eq!(cfg.beta, 1.0);
        assert_eq!(cfg.epsilon, 5e-2);
        assert_eq!(cfg.delta, 1e-3);
        assert_eq!(cfg.max_iters, 100);
        assert_eq!(cfg.n, 400);
        assert_eq!(cfg.param("a"), 1.0);
        assert_eq!(cfg.param("mu0"), 5.0);
        assert_eq!(cfg.param("sigma0_sq"), 4e-2);
    }

    #[test]
    fn each_violation_has_its_own_code() {
        let cases = [
            ("scenario = \"ou\"\nh = [", "E_PARSE"),
            ("h = 1.0", "E_MISSING_SCENARIO"),
            ("scenario = \"foo\"", "E_UNKNOWN_SCENARIO"),
            ("scenario = \"ou\"\nbogus = 1", "E_UNKNOWN_KEY"),
            ("scenario = \"ou\"\nh = \"x\"", "E_TYPE"),
            ("scenario = \"ou\"\nh = 0", "E_STEP"),
            ("scenario = \"ou\"\nbeta = -1.0", "E_BETA"),
            ("scenario = \"ou\"\nepsilon = 0", "E_EPSILON"),
            ("scenario = \"ou\"\ndelta = 0.0", "E_DELTA"),
            ("scenario = \"ou\"\nmax_iters = 0", "E_MAX_ITERS"),
            ("scenario = \"ou\"\nn = 0", "E_PARTICLES"),
            ("scenario = \"ou\"\nsteps = 0", "E_STEPS"),
            ("scenario = \"ou\"\nstride = 0", "E_STRIDE"),
            ("scenario = \"ou\"\na = -1.0", "E_PARAMETER"),
        ];
        for (text, code) in cases {
            let err = validate_config(text).unwrap_err();
            assert_eq!(err.code(), code, "{text}: {err}");
        }
    }

    #[test]
    fn negative_counts_are_rejected() {
        assert_eq!(
            validate_config("scenario = \"ou\"\nn = -3").unwrap_err(),
            ConfigError::Particles(-3)
        );
    }

    #[test]
    fn parameters_of_other_scenarios_are_unknown() {
        let err = validate_config("scenario = \"ou\"\ntheta = 2.0").unwrap_err();
        assert_eq!(err.code(), "E_UNKNOWN_KEY");
    }

    #[test]
    fn every_scenario_round_trips_its_defaults() {
        for def in scenario::SCENARIOS {
            let cfg = RunConfig::defaults(def);
            let text = cfg.to_toml_string();
            assert_eq!(validate_config(&text).unwrap(), cfg, "{text}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            h in 1e-9f64..1.0,
            eps in 1e-6f64..10.0,
            n in 1usize..5000,
            seed in 0u64..(i64::MAX as u64),
            a in 0.01f64..100.0,
            dir in "[a-z_/]{1,12}",
        ) {
            let mut cfg = RunConfig::for_scenario("ou").unwrap();
            cfg.h = h;
            cfg.epsilon = eps;
            cfg.n = n;
            cfg.seed = seed;
            cfg.out_dir = Some(PathBuf::from(dir));
            cfg.params.insert("a".into(), a);
            cfg.moment_mode = MomentMode::MassWeighted;
            let text = cfg.to_toml_string();
            let back = validate_config(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_toml_string(), text);
        }
    }
}
