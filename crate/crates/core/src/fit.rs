//! Forward-only diffusion model: gradient descent on `KL(data ∥ h^γ_T)`,
//! with `δ log h^γ_T` at each data point taken from the divergence-kernel
//! accumulators of the nearest simulated endpoints.

use std::io::{Read, Write};
use std::time::Instant;

use crate::conditioning::{knn, mean_se};
use crate::error::{Error, Result};
use crate::linresp::DivergenceKernel;
use crate::model::ModelInstance;
use crate::par::Execution;
use crate::score::AlphaSchedule;
use crate::simulate::{simulate_ensemble, NoHook, PathConfig, PathEnsemble};

/// Samples `y_k ∈ R^M`, flat row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub points: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    /// One row per point under the header `y0,…,y{M-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((0..self.dim).map(|i| format!("y{i}")))?;
        for row in self.points.chunks(self.dim) {
            wr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let dim = rd.headers()?.len();
        if dim == 0 {
            return Err(Error::Csv("dataset has no columns".into()));
        }
        let mut points = Vec::new();
        for rec in rd.records() {
            for field in rec?.iter() {
                points.push(field.trim().parse::<f64>().map_err(|e| Error::Csv(format!("{field}: {e}")))?);
            }
        }
        Ok(Self { dim, points })
    }
}

/// Terminal states of `n_data` independent paths of `model` over
/// `n_steps` steps of size `dt`. Paths that blow up (at most 1%) are dropped.
pub fn generate_dataset(model: &ModelInstance, n_data: usize, dt: f64, n_steps: usize, seed: u64, execution: Execution) -> Result<Dataset> {
    let cfg = PathConfig::new(model, dt, n_steps, n_data, seed).with_execution(execution);
    let ens = simulate_ensemble(&cfg, &NoHook)?;
    Ok(Dataset { dim: model.dim(), points: ens.final_states() })
}

/// KL-gradient estimate with per-component standard errors over data points.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGradient {
    pub grad: Vec<f64>,
    pub se: Vec<f64>,
}

/// `−(1/N_data) Σ_k (1/k) Σ_{l ∈ N(y_k)} S_l` for every accumulator of the
/// ensemble. A path may be a neighbour of several data points.
pub fn kl_gradient(data: &Dataset, ensemble: &PathEnsemble, k: usize, execution: Execution) -> Result<KlGradient> {
    if data.dim != ensemble.dim {
        return Err(Error::InvalidConfig(format!("data has dimension {}, model {}", data.dim, ensemble.dim)));
    }
    let nbrs = knn(&data.points, &ensemble.final_states(), data.dim, k, execution)?;
    let n_dirs = ensemble.directions.len();
    let mut grad = Vec::with_capacity(n_dirs);
    let mut se = Vec::with_capacity(n_dirs);
    for d in 0..n_dirs {
        let per_point: Vec<f64> = nbrs
            .iter()
            .map(|idx| -idx.iter().map(|&l| ensemble.paths[l].acc[d]).sum::<f64>() / k as f64)
            .collect();
        let (m, s) = mean_se(&per_point);
        grad.push(m);
        se.push(s);
    }
    Ok(KlGradient { grad, se })
}

/// Gradient-descent configuration.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Model at the starting parameter `γ_0`.
    pub model: ModelInstance,
    pub dt: f64,
    pub n_steps: usize,
    pub alpha: AlphaSchedule,
    pub n_paths: usize,
    pub n_neighbors: usize,
    pub eta: f64,
    pub n_updates: usize,
    pub seed: u64,
    pub gamma_true: Option<Vec<f64>>,
    pub execution: Execution,
}

impl FitConfig {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.n_neighbors == 0 || self.n_neighbors > self.n_paths {
            return Err(Error::InvalidConfig(format!("need 1 <= n_neighbors <= n_paths, got {} and {}", self.n_neighbors, self.n_paths)));
        }
        if !self.eta.is_finite() || !(self.eta >= 0.0) {
            return Err(Error::InvalidConfig(format!("step size must be a non-negative number, got {}", self.eta)));
        }
        if data.is_empty() || data.dim != self.model.dim() {
            return Err(Error::InvalidConfig("dataset is empty or has the wrong dimension".into()));
        }
        if let Some(t) = &self.gamma_true {
            if t.len() != self.model.n_params() {
                return Err(Error::InvalidConfig("true parameter has the wrong length".into()));
            }
        }
        PathConfig::new(&self.model, self.dt, self.n_steps, self.n_paths, 0).validate()
    }
}

/// One iteration of the descent.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub iteration: usize,
    pub gamma: Vec<f64>,
    /// Gradient estimated at `gamma`.
    pub gradient: Vec<f64>,
    /// `|γ − γ_true|` when the truth is known.
    pub distance: Option<f64>,
    /// Seconds since the start of the fit.
    pub wall_time: f64,
}

/// `n_updates + 1` records, starting at `γ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitHistory {
    pub records: Vec<FitRecord>,
}

impl FitHistory {
    pub fn final_gamma(&self) -> &[f64] {
        &self.records.last().expect("history is never empty").gamma
    }

    /// Record with the smallest distance to the truth.
    pub fn best(&self) -> Option<&FitRecord> {
        self.records
            .iter()
            .filter(|r| r.distance.is_some())
            .min_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap_or(std::cmp::Ordering::Equal))
    }

    /// Columns `iteration, gamma0.., grad0.., distance, wall_time`; the
    /// wall time is left out when `with_time` is false so output stays
    /// reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, w: W, with_time: bool) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.records.first().map_or(0, |r| r.gamma.len());
        let mut header = vec!["iteration".to_string()];
        header.extend((0..n).map(|i| format!("gamma{i}")));
        header.extend((0..n).map(|i| format!("grad{i}")));
        header.push("distance".into());
        if with_time {
            header.push("wall_time".into());
        }
        wr.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string()];
            row.extend(r.gamma.iter().map(|v| v.to_string()));
            row.extend(r.gradient.iter().map(|v| v.to_string()));
            row.push(r.distance.map(|d| d.to_string()).unwrap_or_default());
            if with_time {
                row.push(format!("{:.3}", r.wall_time));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent seed number `stream` derived from `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Seed stream reserved for generated datasets; iterations use `1 + n`.
pub const DATA_STREAM: u64 = 0;

/// Euclidean distance.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Gradient descent `γ ← γ − η ĝ(γ)` with a fresh ensemble per iteration.
/// All parameter coordinates are differentiated in the same pass.
pub fn fit(cfg: &FitConfig, data: &Dataset) -> Result<FitHistory> {
    cfg.validate(data)?;
    let start = Instant::now();
    let n_params = cfg.model.n_params();
    let directions: Vec<Vec<f64>> = (0..n_params).map(|j| cfg.model.coordinate_direction(j)).collect();
    let hook = DivergenceKernel::continuous(cfg.alpha);
    let mut gamma = cfg.model.gamma().to_vec();
    let mut records = Vec::with_capacity(cfg.n_updates + 1);
    for it in 0..=cfg.n_updates {
        let model = cfg.model.with_gamma(gamma.clone());
        let pc = PathConfig::new(&model, cfg.dt, cfg.n_steps, cfg.n_paths, sub_seed(cfg.seed, 1 + it as u64))
            .with_directions(directions.clone())
            .with_execution(cfg.execution);
        let ens = simulate_ensemble(&pc, &hook)?;
        let g = kl_gradient(data, &ens, cfg.n_neighbors, cfg.execution)?;
        if g.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {:?} at iteration {it}, gamma {:?}", g.grad, gamma)));
        }
        records.push(FitRecord {
            iteration: it,
            gamma: gamma.clone(),
            gradient: g.grad.clone(),
            distance: cfg.gamma_true.as_ref().map(|t| distance(&gamma, t)),
            wall_time: start.elapsed().as_secs_f64(),
        });
        if it < cfg.n_updates {
            for (p, d) in gamma.iter_mut().zip(&g.grad) {
                *p -= cfg.eta * d;
            }
        }
    }
    Ok(FitHistory { records })
}
