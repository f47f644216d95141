//! Run configuration: a sectioned TOML file, checked in full before any
//! simulation starts.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Score,
    Linresp,
    Ergodic,
    Oracle,
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Score => "score",
            Command::Linresp => "linresp",
            Command::Ergodic => "ergodic",
            Command::Oracle => "oracle",
            Command::Fit => "fit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 or absent uses every core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
    /// Defaults to zeros.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub dt: f64,
    /// Final time `T`.
    pub horizon: f64,
    pub paths: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub stepping: Stepping,
    /// Parameter directions; every coordinate direction when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsSection {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// State coordinate that is binned.
    #[serde(default)]
    pub coord: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    #[default]
    MeanSquare,
    Coordinate,
    CoordinateSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicSection {
    pub dt: f64,
    pub window: f64,
    pub horizon: f64,
    pub orbits: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub observable: ObservableKind,
    #[serde(default)]
    pub coord: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions: Option<Vec<Vec<f64>>>,
    /// Adds a central finite-difference check with this parameter step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_dgamma: Option<f64>,
    /// Length of the orbit trace drawn in the plot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_duration: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Binned central differences of the log-density.
    Fd,
    /// One Euler step by quadrature (1-d models).
    Quadrature,
    /// Closed-form Ornstein–Uhlenbeck marginal.
    Ou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Defaults to the first parameter coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "default_per_bin")]
    pub per_bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub gamma0: Vec<f64>,
    /// Generates the data and is used to report distances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_true: Option<Vec<f64>>,
    /// Dataset CSV (header `y0..`); generated from `gamma_true` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default = "default_n_data")]
    pub n_data: usize,
    #[serde(default = "default_neighbors")]
    pub neighbors: usize,
    #[serde(default = "one_f")]
    pub eta: f64,
    pub updates: usize,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    10.0
}
fn default_min_count() -> usize {
    divkernel::conditioning::DEFAULT_MIN_COUNT
}
fn default_eps() -> f64 {
    0.05
}
fn default_per_bin() -> usize {
    81
}
fn default_n_data() -> usize {
    200
}
fn default_neighbors() -> usize {
    5
}

/// A rejected configuration, with the line of the offending key when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parses `text`; syntax errors and unknown keys carry a line number.
pub fn parse(text: &str) -> Result<Config, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        ConfigError { message: e.message().trim().to_string(), line }
    })
}

pub fn load(path: &Path) -> Result<(Config, String), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError { message: format!("cannot read {}: {e}", path.display()), line: None })?;
    Ok((parse(&text)?, text))
}

fn line_of(text: &str, offset: usize) -> usize {
    1 + text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count()
}

/// Line of `key` inside `[section]` (or before the first table when
/// `section` is empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl Config {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Checks everything `command` will read. `text` is the source, used to
    /// point at the offending line.
    pub fn validate(&self, command: Command, text: Option<&str>) -> Result<(), ConfigError> {
        let err = |section: &str, key: &str, msg: String| ConfigError {
            message: if section.is_empty() { format!("`{key}` {msg}") } else { format!("`{section}.{key}` {msg}") },
            line: text.and_then(|t| locate(t, section, key)),
        };
        let missing = |section: &str| ConfigError { message: format!("`{}` needs a [{section}] section", command.name()), line: None };
        let positive = |section: &str, key: &str, v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(err(section, key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |section: &str, key: &str, v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(err(section, key, format!("must be non-negative, got {v}")))
            }
        };
        let count = |section: &str, key: &str, v: usize| -> Result<(), ConfigError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(err(section, key, "must be at least 1".into()))
            }
        };

        let m = &self.model;
        let n_params = divkernel::model::family_n_params(&m.name, m.dim).map_err(|e| err("model", "name", e.to_string()))?;
        divkernel::get_model(&m.name, divkernel::ModelParams::new(vec![0.0; n_params], m.dim)).map_err(|e| err("model", "dim", e.to_string()))?;
        if let Some(g) = &m.gamma {
            if g.len() != n_params {
                return Err(err("model", "gamma", format!("has {} entries, `{}` takes {n_params}", g.len(), m.name)));
            }
        }
        let check_dirs = |section: &str, key: &str, dirs: &Option<Vec<Vec<f64>>>| -> Result<(), ConfigError> {
            if let Some(d) = dirs.iter().flatten().find(|d| d.len() != n_params) {
                return Err(err(section, key, format!("has a direction of length {}, the model has {n_params} parameters", d.len())));
            }
            if dirs.as_ref().is_some_and(|d| d.is_empty()) {
                return Err(err(section, key, "is empty".into()));
            }
            Ok(())
        };

        let needs_sim = matches!(command, Command::Simulate | Command::Score | Command::Linresp | Command::Oracle | Command::Fit);
        if needs_sim {
            let s = self.simulation.as_ref().ok_or_else(|| missing("simulation"))?;
            positive("simulation", "dt", s.dt)?;
            positive("simulation", "horizon", s.horizon)?;
            if s.horizon / s.dt < 0.5 {
                return Err(err("simulation", "horizon", format!("is shorter than one step of {}", s.dt)));
            }
            count("simulation", "paths", s.paths)?;
            non_negative("simulation", "alpha", s.alpha)?;
            check_dirs("simulation", "directions", &s.directions)?;
        }
        if matches!(command, Command::Score | Command::Linresp | Command::Oracle) {
            let b = self.bins.as_ref().ok_or_else(|| missing("bins"))?;
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
                return Err(err("bins", "hi", format!("must exceed `bins.lo` ({} vs {})", b.hi, b.lo)));
            }
            count("bins", "count", b.count)?;
            if b.coord >= m.dim {
                return Err(err("bins", "coord", format!("is {} but the state has {} coordinates", b.coord, m.dim)));
            }
        } else if let Some(b) = &self.bins {
            if b.coord >= m.dim {
                return Err(err("bins", "coord", format!("is {} but the state has {} coordinates", b.coord, m.dim)));
            }
        }
        if command == Command::Ergodic {
            let e = self.ergodic.as_ref().ok_or_else(|| missing("ergodic"))?;
            positive("ergodic", "dt", e.dt)?;
            positive("ergodic", "window", e.window)?;
            positive("ergodic", "horizon", e.horizon)?;
            if e.window >= e.horizon {
                return Err(err("ergodic", "window", format!("must be shorter than the horizon ({} vs {})", e.window, e.horizon)));
            }
            count("ergodic", "orbits", e.orbits)?;
            non_negative("ergodic", "alpha", e.alpha)?;
            if let Some(b) = e.burn_in {
                non_negative("ergodic", "burn_in", b)?;
            }
            if e.observable != ObservableKind::MeanSquare && e.coord >= m.dim {
                return Err(err("ergodic", "coord", format!("is {} but the state has {} coordinates", e.coord, m.dim)));
            }
            check_dirs("ergodic", "directions", &e.directions)?;
            if let Some(d) = e.fd_dgamma {
                positive("ergodic", "fd_dgamma", d)?;
            }
            if let Some(d) = e.trace_duration {
                positive("ergodic", "trace_duration", d)?;
            }
        }
        if command == Command::Oracle {
            let o = self.oracle.as_ref().ok_or_else(|| missing("oracle"))?;
            positive("oracle", "eps", o.eps)?;
            count("oracle", "per_bin", o.per_bin)?;
            if let Some(d) = &o.direction {
                if d.len() != n_params {
                    return Err(err("oracle", "direction", format!("has length {}, the model has {n_params} parameters", d.len())));
                }
            }
            if o.kind == OracleKind::Ou && (m.name != "ou" || m.dim != 1) {
                return Err(err("oracle", "kind", "`ou` needs the one-dimensional `ou` model".into()));
            }
            if o.kind == OracleKind::Quadrature && m.dim != 1 {
                return Err(err("oracle", "kind", "`quadrature` needs a one-dimensional model".into()));
            }
        }
        if command == Command::Fit {
            let f = self.fit.as_ref().ok_or_else(|| missing("fit"))?;
            if f.gamma0.len() != n_params {
                return Err(err("fit", "gamma0", format!("has {} entries, `{}` takes {n_params}", f.gamma0.len(), m.name)));
            }
            if let Some(t) = &f.gamma_true {
                if t.len() != n_params {
                    return Err(err("fit", "gamma_true", format!("has {} entries, `{}` takes {n_params}", t.len(), m.name)));
                }
            }
            if f.data.is_none() && f.gamma_true.is_none() {
                return Err(err("fit", "gamma0", "needs either `data` or `gamma_true` to generate data from".into()));
            }
            count("fit", "n_data", f.n_data)?;
            count("fit", "neighbors", f.neighbors)?;
            non_negative("fit", "eta", f.eta)?;
            let paths = self.simulation.as_ref().map_or(0, |s| s.paths);
            if f.neighbors > paths {
                return Err(err("fit", "neighbors", format!("is {} but only {paths} paths are simulated", f.neighbors)));
            }
        }
        Ok(())
    }
}

/// Canned experiments, ready to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 1-d multiplicative noise: binned score and response at `T = 0.3`.
    Mult1d,
    /// Lorenz 96 ergodic response with a finite-difference check.
    Lorenz96,
    /// 1-d diffusion-model fit.
    Fit1d,
    /// 5-d diffusion-model fit.
    Fit5d,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Mult1d => "sec4.1",
            Preset::Lorenz96 => "sec4.2",
            Preset::Fit1d => "sec5.1",
            Preset::Fit5d => "sec5.2",
        }
    }

    /// The preset's command and configuration. `full` selects the larger
    /// Lorenz run (40 coordinates, 7 orbits of 400).
    pub fn build(self, full: bool) -> (Command, Config) {
        let base = |name: &str, dim: usize, gamma: Vec<f64>| Config {
            seed: 1,
            workers: None,
            out: None,
            model: ModelSection { name: name.into(), dim, gamma: Some(gamma) },
            simulation: None,
            bins: None,
            ergodic: None,
            oracle: None,
            fit: None,
        };
        match self {
            Preset::Mult1d => {
                let mut c = base("mult1d", 1, vec![0.0]);
                c.simulation = Some(SimulationSection {
                    dt: 0.01,
                    horizon: 0.3,
                    paths: 100_000,
                    alpha: 10.0,
                    stepping: Stepping::Continuous,
                    directions: None,
                });
                c.bins = Some(BinsSection { lo: -2.0, hi: 2.0, count: 10, min_count: 180, coord: 0 });
                (Command::Linresp, c)
            }
            Preset::Lorenz96 => {
                let (dim, orbits, horizon) = if full { (40, 7, 400.0) } else { (10, 4, 100.0) };
                let mut c = base("lorenz96", dim, vec![0.0]);
                c.ergodic = Some(ErgodicSection {
                    dt: 0.002,
                    window: 1.5,
                    horizon,
                    orbits,
                    alpha: 20.0,
                    burn_in: None,
                    observable: ObservableKind::MeanSquare,
                    coord: 0,
                    directions: None,
                    fd_dgamma: Some(0.1),
                    trace_duration: Some(20.0),
                });
                (Command::Ergodic, c)
            }
            Preset::Fit1d => {
                let mut c = base("diffproto1d", 1, vec![5.0, 1.0]);
                c.simulation = Some(SimulationSection {
                    dt: 0.01,
                    horizon: 2.0,
                    paths: 200,
                    alpha: 10.0,
                    stepping: Stepping::Continuous,
                    directions: None,
                });
                c.fit = Some(FitSection {
                    gamma0: vec![5.0, 1.0],
                    gamma_true: Some(vec![0.0, 0.0]),
                    data: None,
                    n_data: 200,
                    neighbors: 5,
                    eta: 1.0,
                    updates: 10,
                });
                (Command::Fit, c)
            }
            Preset::Fit5d => {
                let mut c = base("diffproto5d", 5, vec![0.0; 6]);
                c.simulation = Some(SimulationSection {
                    dt: 0.005,
                    horizon: 1.0,
                    paths: 200,
                    alpha: 5.0,
                    stepping: Stepping::Continuous,
                    directions: None,
                });
                c.fit = Some(FitSection {
                    gamma0: vec![0.0; 6],
                    gamma_true: Some(vec![5.0, 6.0, 7.0, 8.0, 9.0, 2.0]),
                    data: None,
                    n_data: 200,
                    neighbors: 5,
                    eta: 1.0,
                    updates: 50,
                });
                (Command::Fit, c)
            }
        }
    }
}
