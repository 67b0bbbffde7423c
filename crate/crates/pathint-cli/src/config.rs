//! Flat key=value experiment configuration.
//!
//! One `key = value` pair per line, dotted keys, `#` comments. The
//! format is deliberately parser-free so configs diff cleanly:
//!
//! ```text
//! task = cartpole
//! algorithm = mppi
//! sweep.nu = 1, 1500
//! sweep.rollouts = 10, 1000
//! sweep.seeds = 0..10
//! run.duration = 10
//! run.horizon = 1
//! run.rate = 50
//! mppi.lambda = 200
//! mppi.strict = false
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    CartPole,
    RaceCar,
    Quadrotor,
    FkVerify,
    RatioVerify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CartPole => "cartpole",
            Task::RaceCar => "racecar",
            Task::Quadrotor => "quadrotor",
            Task::FkVerify => "fk-verify",
            Task::RatioVerify => "ratio-verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Mppi,
    Ddp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mppi => "mppi",
            Algorithm::Ddp => "ddp",
        }
    }
}

/// A parsed experiment: the sweep grid is the Cartesian product of
/// `nu` x `rollouts` x `seeds`, executed in that nesting order.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub task: Task,
    pub algorithm: Algorithm,
    pub nu: Vec<f64>,
    pub rollouts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Closed-loop run length, seconds.
    pub duration: f64,
    /// Planning horizon, seconds.
    pub horizon: f64,
    /// Control rate, Hz.
    pub rate: f64,
    pub out_dir: Option<PathBuf>,
    /// Solver/plant overrides that survived validation.
    pub overrides: Overrides,
}

/// Recognized override keys; anything else in the file is a usage
/// error so typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mppi_lambda: Option<f64>,
    pub mppi_strict: Option<bool>,
    pub ddp_iterations: Option<usize>,
    pub racecar_rho: Option<f64>,
    pub forest_spacing: Option<f64>,
    pub forest_seed: Option<u64>,
    pub forest_radius: Option<f64>,
}

/// Configuration problems are usage errors (exit code 2 at the CLI).
#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "config: {}", self.message)
        } else {
            write!(f, "config line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

fn parse_list<T: std::str::FromStr>(raw: &str, line: usize, what: &str) -> Result<Vec<T>, ConfigError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| err(line, format!("bad {what} entry {s:?}")))
        })
        .collect()
}

/// Seeds accept either a comma list (`0, 1, 7`) or a half-open range
/// (`0..10`).
fn parse_seeds(raw: &str, line: usize) -> Result<Vec<u64>, ConfigError> {
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad seed range start {:?}", lo.trim())))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad seed range end {:?}", hi.trim())))?;
        if hi <= lo {
            return Err(err(line, "empty seed range"));
        }
        Ok((lo..hi).collect())
    } else {
        parse_list(raw, line, "seed")
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected key = value, got {content:?}")))?;
        let key = key.trim();
        if kv.insert(key, (line_no, value.trim())).is_some() {
            return Err(err(line_no, format!("duplicate key {key:?}")));
        }
    }

    let mut take = |k: &str| kv.remove(k);

    let (task_line, task_raw) = take("task").ok_or_else(|| err(0, "missing required key 'task'"))?;
    let task = match task_raw {
        "cartpole" => Task::CartPole,
        "racecar" => Task::RaceCar,
        "quadrotor" => Task::Quadrotor,
        "fk-verify" => Task::FkVerify,
        "ratio-verify" => Task::RatioVerify,
        other => return Err(err(task_line, format!("unknown task {other:?}"))),
    };
    let (algo_line, algo_raw) = take("algorithm").unwrap_or((0, "mppi"));
    let algorithm = match algo_raw {
        "mppi" => Algorithm::Mppi,
        "ddp" => Algorithm::Ddp,
        other => return Err(err(algo_line, format!("unknown algorithm {other:?}"))),
    };

    let nu = match take("sweep.nu") {
        Some((line, raw)) => parse_list::<f64>(raw, line, "nu")?,
        None => vec![1.0],
    };
    let rollouts = match take("sweep.rollouts") {
        Some((line, raw)) => parse_list::<usize>(raw, line, "rollout count")?,
        None => vec![1000],
    };
    let seeds = match take("sweep.seeds") {
        Some((line, raw)) => parse_seeds(raw, line)?,
        None => (0..10).collect(),
    };

    let f64_key = |kv: &mut BTreeMap<&str, (usize, &str)>, k: &str, default: f64| {
        match kv.remove(k) {
            Some((line, raw)) => raw
                .parse::<f64>()
                .map_err(|_| err(line, format!("bad number for {k}: {raw:?}"))),
            None => Ok(default),
        }
    };
    let duration = f64_key(&mut kv, "run.duration", 10.0)?;
    let horizon = f64_key(&mut kv, "run.horizon", 1.0)?;
    let rate = f64_key(&mut kv, "run.rate", 50.0)?;

    let out_dir = kv.remove("out.dir").map(|(_, raw)| PathBuf::from(raw));

    let mut overrides = Overrides::default();
    if let Some((line, raw)) = kv.remove("mppi.lambda") {
        overrides.mppi_lambda =
            Some(raw.parse().map_err(|_| err(line, format!("bad mppi.lambda {raw:?}")))?);
    }
    if let Some((line, raw)) = kv.remove("mppi.strict") {
        overrides.mppi_strict = Some(match raw {
            "true" => true,
            "false" => false,
            _ => return Err(err(line, format!("mppi.strict must be true or false, got {raw:?}"))),
        });
    }
    if let Some((line, raw)) = kv.remove("ddp.iterations") {
        overrides.ddp_iterations =
            Some(raw.parse().map_err(|_| err(line, format!("bad ddp.iterations {raw:?}")))?);
    }
    if let Some((line, raw)) = kv.remove("racecar.rho") {
        overrides.racecar_rho =
            Some(raw.parse().map_err(|_| err(line, format!("bad racecar.rho {raw:?}")))?);
    }
    if let Some((line, raw)) = kv.remove("forest.spacing") {
        overrides.forest_spacing =
            Some(raw.parse().map_err(|_| err(line, format!("bad forest.spacing {raw:?}")))?);
    }
    if let Some((line, raw)) = kv.remove("forest.seed") {
        overrides.forest_seed =
            Some(raw.parse().map_err(|_| err(line, format!("bad forest.seed {raw:?}")))?);
    }
    if let Some((line, raw)) = kv.remove("forest.radius") {
        overrides.forest_radius =
            Some(raw.parse().map_err(|_| err(line, format!("bad forest.radius {raw:?}")))?);
    }

    if let Some((line, _)) = kv.values().next() {
        let keys: Vec<&str> = kv.keys().copied().collect();
        return Err(err(*line, format!("unknown keys: {}", keys.join(", "))));
    }

    let cfg = ExperimentConfig {
        task,
        algorithm,
        nu,
        rollouts,
        seeds,
        duration,
        horizon,
        rate,
        out_dir,
        overrides,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    if cfg.nu.is_empty() || cfg.rollouts.is_empty() || cfg.seeds.is_empty() {
        return Err(err(0, "sweep lists must be non-empty"));
    }
    if cfg.nu.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
        return Err(err(0, "sweep.nu entries must be positive"));
    }
    if cfg.rollouts.iter().any(|k| *k == 0) {
        return Err(err(0, "sweep.rollouts entries must be positive"));
    }
    if !(cfg.rate > 0.0) || !cfg.rate.is_finite() {
        return Err(err(0, "run.rate must be positive"));
    }
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(err(0, "run.horizon must be positive"));
    }
    if cfg.duration < cfg.horizon {
        return Err(err(0, "run.duration must be at least run.horizon"));
    }
    Ok(())
}
