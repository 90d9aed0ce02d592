//! TOML run configurations.
//!
//! A configuration names a `command` plus flat keys for that command:
//!
//! ```toml
//! command = "simulate-los"
//! seed = 7
//! n = 8
//! sigma_deg = 2
//! trials = 1000
//! ```
//!
//! Angles are in degrees. `n`, `sigma_deg` and `alpha` accept a single value
//! or a list, giving one campaign cell per combination.

use std::collections::BTreeSet;
use std::path::PathBuf;

use toml::{Table, Value};

/// Configuration problems, each naming the offending key where there is one.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error{}: {message}", key_suffix(.key))]
    Parse { key: Option<String>, message: String },
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },
}

fn key_suffix(key: &Option<String>) -> String {
    key.as_ref().map(|k| format!(" at `{k}`")).unwrap_or_default()
}

impl ConfigError {
    pub fn kind(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "ParseError",
            ConfigError::Validation { .. } => "ValidationError",
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Parse { key, .. } => key.as_deref(),
            ConfigError::Validation { key, .. } => Some(key),
        }
    }
}

fn parse_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        key: Some(key.to_string()),
        message: message.into(),
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LosAlgorithm {
    Sequential,
    SequentialRange,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NlosAlgorithm {
    Robust,
    MlRobust,
    MlLos,
    MlKnownLos,
}

/// Outlier fraction assumed by an estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSetting {
    Fixed(f64),
    Matched,
}

/// Settings shared by the campaign commands.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: Vec<usize>,
    pub sigma_deg: Vec<f64>,
    /// Trials per cell, spread evenly over the candidate locations.
    pub trials: usize,
    pub locations: usize,
    pub field_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosParams {
    pub grid: Grid,
    pub algorithm: LosAlgorithm,
    pub bootstraps: usize,
    pub beta: f64,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlosParams {
    pub grid: Grid,
    pub alpha: Vec<f64>,
    pub bernoulli: bool,
    pub algorithm: NlosAlgorithm,
    pub alpha_max: AlphaSetting,
    pub num_seeds: Option<usize>,
    pub target_pfail: f64,
    pub ml_grid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbMapParams {
    pub n: usize,
    pub sigma_deg: f64,
    /// Ring radius of the receivers.
    pub field_radius: f64,
    /// Half-width of the square grid as a fraction of the ring radius.
    pub half_width: f64,
    /// Grid points per axis.
    pub resolution: usize,
}

/// Square field of side 500 inside a ring of radius 457.
pub const DEFAULT_HALF_WIDTH: f64 = 250.0 / 457.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneName {
    Narrowband,
    Wall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaytraceParams {
    pub scene: SceneName,
    pub wideband: bool,
    pub trials: usize,
    pub sigma_deg: f64,
    pub alpha_max: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureProbParams {
    pub n: usize,
    pub alpha: f64,
    pub m_min: usize,
    pub m_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChooseMParams {
    pub n: usize,
    pub alpha: f64,
    pub target_pfail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SimulateLos(LosParams),
    SimulateNlos(NlosParams),
    CrlbMap(CrlbMapParams),
    Raytrace(RaytraceParams),
    FailureProb(FailureProbParams),
    ChooseM(ChooseMParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimulateLos(_) => "simulate-los",
            Command::SimulateNlos(_) => "simulate-nlos",
            Command::CrlbMap(_) => "crlb-map",
            Command::Raytrace(_) => "raytrace",
            Command::FailureProb(_) => "failure-prob",
            Command::ChooseM(_) => "choose-m",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: Command,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

/// Typed access to the keys of one table, tracking which were read.
struct Keys {
    table: Table,
    seen: BTreeSet<String>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<&Value> {
        self.seen.insert(key.to_string());
        self.table.get(key)
    }

    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn f64(&mut self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        match self.take(key) {
            None => default.ok_or_else(|| parse_err(key, "missing required key")),
            Some(v) => Self::number(v).ok_or_else(|| parse_err(key, "expected a number")),
        }
    }

    fn usize(&mut self, key: &str, default: Option<usize>) -> Result<usize, ConfigError> {
        match self.take(key) {
            None => default.ok_or_else(|| parse_err(key, "missing required key")),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(Value::Integer(_)) => Err(invalid(key, "must be non-negative")),
            Some(_) => Err(parse_err(key, "expected an integer")),
        }
    }

    fn opt_usize(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        if self.table.contains_key(key) {
            self.usize(key, None).map(Some)
        } else {
            self.seen.insert(key.to_string());
            Ok(None)
        }
    }

    fn string(&mut self, key: &str, default: Option<&str>) -> Result<String, ConfigError> {
        match self.take(key) {
            None => default
                .map(str::to_string)
                .ok_or_else(|| parse_err(key, "missing required key")),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(parse_err(key, "expected a string")),
        }
    }

    fn f64_list(&mut self, key: &str, default: Option<Vec<f64>>) -> Result<Vec<f64>, ConfigError> {
        let list = match self.take(key) {
            None => return default.ok_or_else(|| parse_err(key, "missing required key")),
            Some(Value::Array(items)) => items
                .iter()
                .map(Self::number)
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| parse_err(key, "expected a list of numbers"))?,
            Some(v) => vec![Self::number(v).ok_or_else(|| parse_err(key, "expected a number or a list"))?],
        };
        if list.is_empty() {
            return Err(invalid(key, "list must not be empty"));
        }
        Ok(list)
    }

    fn usize_list(&mut self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let to_usize = |v: &Value| match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => None,
        };
        let list = match self.take(key) {
            None => return Err(parse_err(key, "missing required key")),
            Some(Value::Array(items)) => items
                .iter()
                .map(to_usize)
                .collect::<Option<Vec<usize>>>()
                .ok_or_else(|| parse_err(key, "expected a list of non-negative integers"))?,
            Some(v) => vec![to_usize(v).ok_or_else(|| parse_err(key, "expected an integer or a list"))?],
        };
        if list.is_empty() {
            return Err(invalid(key, "list must not be empty"));
        }
        Ok(list)
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.table.keys().find(|k| !self.seen.contains(*k)) {
            Some(k) => Err(parse_err(k, "unknown key for this command")),
            None => Ok(()),
        }
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(key, message))
    }
}

fn check_sigma(key: &str, sigma: f64) -> Result<(), ConfigError> {
    check(sigma > 0.0 && sigma < 90.0, key, "must lie in (0, 90) degrees")
}

fn check_n(key: &str, n: usize) -> Result<(), ConfigError> {
    check(n >= 3, key, "need at least 3 receivers")
}

fn grid(k: &mut Keys) -> Result<Grid, ConfigError> {
    let n = k.usize_list("n")?;
    let sigma_deg = k.f64_list("sigma_deg", None)?;
    let trials = k.usize("trials", None)?;
    let locations = k.usize("locations", Some(25))?;
    let field_radius = k.f64("field_radius", Some(1.0))?;
    for &v in &n {
        check_n("n", v)?;
    }
    for &s in &sigma_deg {
        check_sigma("sigma_deg", s)?;
    }
    check(trials >= 1, "trials", "must be at least 1")?;
    check(locations >= 1, "locations", "must be at least 1")?;
    check(field_radius > 0.0 && field_radius.is_finite(), "field_radius", "must be positive")?;
    Ok(Grid {
        n,
        sigma_deg,
        trials,
        locations,
        field_radius,
    })
}

fn los(k: &mut Keys) -> Result<LosParams, ConfigError> {
    let grid = grid(k)?;
    let algorithm = match k.string("algorithm", Some("sequential"))?.as_str() {
        "sequential" => LosAlgorithm::Sequential,
        "sequential-range" => LosAlgorithm::SequentialRange,
        "ml" => LosAlgorithm::Ml,
        other => return Err(invalid("algorithm", format!("unknown algorithm {other:?}"))),
    };
    let bootstraps = k.usize("bootstraps", Some(1))?;
    let beta = k.f64("beta", Some(3.0))?;
    let snr_db = k.f64("snr_db", Some(12.0))?;
    check(bootstraps >= 1, "bootstraps", "must be at least 1")?;
    check(beta > 0.0, "beta", "must be positive")?;
    check(snr_db.is_finite(), "snr_db", "must be finite")?;
    Ok(LosParams {
        grid,
        algorithm,
        bootstraps,
        beta,
        snr_db,
    })
}

fn nlos(k: &mut Keys) -> Result<NlosParams, ConfigError> {
    let grid = grid(k)?;
    let alpha = k.f64_list("alpha", None)?;
    for &a in &alpha {
        check((0.0..1.0).contains(&a), "alpha", "must lie in [0, 1)")?;
    }
    let bernoulli = match k.string("outliers", Some("exact_count"))?.as_str() {
        "exact_count" => false,
        "bernoulli" => true,
        other => return Err(invalid("outliers", format!("expected exact_count or bernoulli, got {other:?}"))),
    };
    let algorithm = match k.string("algorithm", Some("robust"))?.as_str() {
        "robust" => NlosAlgorithm::Robust,
        "ml-robust" => NlosAlgorithm::MlRobust,
        "ml-los" => NlosAlgorithm::MlLos,
        "ml-known-los" => NlosAlgorithm::MlKnownLos,
        other => return Err(invalid("algorithm", format!("unknown algorithm {other:?}"))),
    };
    let alpha_max = match k.take("alpha_max").cloned() {
        None => AlphaSetting::Fixed(0.5),
        Some(Value::String(s)) if s == "matched" => AlphaSetting::Matched,
        Some(v) => {
            let a = Keys::number(&v).ok_or_else(|| parse_err("alpha_max", "expected a number or \"matched\""))?;
            check(a > 0.0 && a < 1.0, "alpha_max", "must lie in (0, 1)")?;
            AlphaSetting::Fixed(a)
        }
    };
    let num_seeds = k.opt_usize("num_seeds")?;
    check(num_seeds != Some(0), "num_seeds", "must be at least 1")?;
    let target_pfail = k.f64("target_pfail", Some(1e-3))?;
    check(target_pfail > 0.0 && target_pfail <= 1.0, "target_pfail", "must lie in (0, 1]")?;
    let ml_grid_fraction = k.f64("ml_grid_fraction", Some(1.0 / 200.0))?;
    check(
        ml_grid_fraction > 0.0 && ml_grid_fraction <= 0.5,
        "ml_grid_fraction",
        "must lie in (0, 0.5]",
    )?;
    Ok(NlosParams {
        grid,
        alpha,
        bernoulli,
        algorithm,
        alpha_max,
        num_seeds,
        target_pfail,
        ml_grid_fraction,
    })
}

fn crlb_map(k: &mut Keys) -> Result<CrlbMapParams, ConfigError> {
    let p = CrlbMapParams {
        n: k.usize("n", None)?,
        sigma_deg: k.f64("sigma_deg", None)?,
        field_radius: k.f64("field_radius", Some(1.0))?,
        half_width: k.f64("half_width", Some(DEFAULT_HALF_WIDTH))?,
        resolution: k.usize("resolution", Some(41))?,
    };
    check_n("n", p.n)?;
    check_sigma("sigma_deg", p.sigma_deg)?;
    check(p.field_radius > 0.0, "field_radius", "must be positive")?;
    check(p.half_width > 0.0 && p.half_width <= 1.0, "half_width", "must lie in (0, 1]")?;
    check((3..=1001).contains(&p.resolution), "resolution", "must lie in [3, 1001]")?;
    Ok(p)
}

fn raytrace(k: &mut Keys) -> Result<RaytraceParams, ConfigError> {
    let scene = match k.string("scene", None)?.as_str() {
        "narrowband" => SceneName::Narrowband,
        "wall" => SceneName::Wall,
        other => return Err(invalid("scene", format!("expected narrowband or wall, got {other:?}"))),
    };
    let wideband = match k.string("mode", Some("narrowband"))?.as_str() {
        "narrowband" => false,
        "wideband" => true,
        other => return Err(invalid("mode", format!("expected narrowband or wideband, got {other:?}"))),
    };
    let p = RaytraceParams {
        scene,
        wideband,
        trials: k.usize("trials", Some(1000))?,
        sigma_deg: k.f64("sigma_deg", Some(0.5))?,
        alpha_max: k.f64("alpha_max", Some(0.5))?,
        num_seeds: k.usize("num_seeds", Some(7))?,
    };
    check(p.trials >= 1, "trials", "must be at least 1")?;
    check_sigma("sigma_deg", p.sigma_deg)?;
    check(p.alpha_max > 0.0 && p.alpha_max < 1.0, "alpha_max", "must lie in (0, 1)")?;
    check(p.num_seeds >= 1, "num_seeds", "must be at least 1")?;
    Ok(p)
}

/// Number of seed pairs containing an outlier for `n` receivers.
fn outlier_pairs(n: usize, alpha: f64) -> usize {
    let los = ((1.0 - alpha) * n as f64 + 1e-9).floor() as usize;
    n * (n - 1) / 2 - los * los.saturating_sub(1) / 2
}

fn check_alpha_open(alpha: f64) -> Result<(), ConfigError> {
    check(alpha > 0.0 && alpha < 1.0, "alpha", "must lie in (0, 1)")
}

fn failure_prob(k: &mut Keys) -> Result<FailureProbParams, ConfigError> {
    let p = FailureProbParams {
        n: k.usize("n", None)?,
        alpha: k.f64("alpha", None)?,
        m_min: k.usize("m_min", Some(1))?,
        m_max: k.usize("m_max", None)?,
    };
    check(p.n >= 2, "n", "need at least 2 receivers")?;
    check_alpha_open(p.alpha)?;
    check(p.m_min >= 1, "m_min", "must be at least 1")?;
    check(p.m_max >= p.m_min, "m_max", "must be at least m_min")?;
    let k_pairs = outlier_pairs(p.n, p.alpha);
    check(
        p.m_max <= k_pairs,
        "m_max",
        &format!("must not exceed the {k_pairs} pairs that contain an outlier"),
    )?;
    Ok(p)
}

fn choose_m(k: &mut Keys) -> Result<ChooseMParams, ConfigError> {
    let p = ChooseMParams {
        n: k.usize("n", None)?,
        alpha: k.f64("alpha", None)?,
        target_pfail: k.f64("target_pfail", Some(1e-3))?,
    };
    check(p.n >= 2, "n", "need at least 2 receivers")?;
    check_alpha_open(p.alpha)?;
    check(p.target_pfail > 0.0 && p.target_pfail < 1.0, "target_pfail", "must lie in (0, 1)")?;
    Ok(p)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<CliConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        key: None,
        message: e.message().to_string(),
    })?;
    let mut k = Keys {
        table,
        seen: BTreeSet::new(),
    };
    let command = k.string("command", None)?;
    let seed = match k.take("seed") {
        None => 0,
        Some(Value::Integer(i)) if *i >= 0 => *i as u64,
        Some(_) => return Err(parse_err("seed", "expected a non-negative integer")),
    };
    let output = match k.take("output_path") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return Err(parse_err("output_path", "expected a path string")),
    };
    let command = match command.as_str() {
        "simulate-los" => Command::SimulateLos(los(&mut k)?),
        "simulate-nlos" => Command::SimulateNlos(nlos(&mut k)?),
        "crlb-map" => Command::CrlbMap(crlb_map(&mut k)?),
        "raytrace" => Command::Raytrace(raytrace(&mut k)?),
        "failure-prob" => Command::FailureProb(failure_prob(&mut k)?),
        "choose-m" => Command::ChooseM(choose_m(&mut k)?),
        other => return Err(parse_err("command", format!("unknown command {other:?}"))),
    };
    k.finish()?;
    Ok(CliConfig { command, seed, output })
}
