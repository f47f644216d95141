//! Parameterized SDE models `dx = F(t, x; γ) dt + σ(t, x; γ) dB` with a
//! scalar diffusion field, plus the derivative data the estimators consume.
//!
//! A family implements [`SdeFamily`]; [`get_model`] builds a
//! [`ModelInstance`] from the registry of built-in families.

mod families;
pub mod fd;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub use families::{DiffProto1d, LorenzFamily, LorenzForcing, Mult1d, Ou};
pub use fd::{fd_derivative_check, FdReport};

/// Registry keys understood by [`get_model`].
pub const FAMILIES: &[&str] = &["ou", "mult1d", "lorenz96", "diffproto1d", "diffproto5d"];

/// Parameter vector and state dimension of a model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: Vec<f64>,
    pub dim: usize,
}

impl ModelParams {
    pub fn new(gamma: Vec<f64>, dim: usize) -> Self {
        Self { gamma, dim }
    }
}

/// Parameter derivatives of the coefficients along one direction `δγ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTerms {
    /// δF
    pub delta_drift: Vec<f64>,
    /// div δF
    pub div_delta_drift: f64,
    /// δσ
    pub delta_sigma: f64,
    /// ∇δσ
    pub grad_delta_sigma: Vec<f64>,
}

impl DeltaTerms {
    pub fn zeros(dim: usize) -> Self {
        Self {
            delta_drift: vec![0.0; dim],
            div_delta_drift: 0.0,
            delta_sigma: 0.0,
            grad_delta_sigma: vec![0.0; dim],
        }
    }

    fn clear(&mut self) {
        self.delta_drift.iter_mut().for_each(|v| *v = 0.0);
        self.div_delta_drift = 0.0;
        self.delta_sigma = 0.0;
        self.grad_delta_sigma.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add_scaled(&mut self, w: f64, other: &DeltaTerms) {
        for (a, b) in self.delta_drift.iter_mut().zip(&other.delta_drift) {
            *a += w * b;
        }
        self.div_delta_drift += w * other.div_delta_drift;
        self.delta_sigma += w * other.delta_sigma;
        for (a, b) in self.grad_delta_sigma.iter_mut().zip(&other.grad_delta_sigma) {
            *a += w * b;
        }
    }

    /// True when every field is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.div_delta_drift == 0.0
            && self.delta_sigma == 0.0
            && self.delta_drift.iter().all(|&v| v == 0.0)
            && self.grad_delta_sigma.iter().all(|&v| v == 0.0)
    }
}

/// Every spatial and parameter derivative of `F` and `σ` needed at one
/// `(t, x)`. Matrices are row-major `M×M`; `jac_drift[i*M + j] = ∂F^i/∂x^j`.
///
/// `deltas` holds one [`DeltaTerms`] per requested perturbation direction.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub drift: Vec<f64>,
    pub jac_drift: Vec<f64>,
    pub div_drift: f64,
    pub grad_div_drift: Vec<f64>,
    pub sigma: f64,
    pub grad_sigma: Vec<f64>,
    pub hess_sigma: Vec<f64>,
    pub lap_sigma: f64,
    pub deltas: Vec<DeltaTerms>,
}

impl DerivativeBundle {
    pub fn new(dim: usize, n_dirs: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            jac_drift: vec![0.0; dim * dim],
            div_drift: 0.0,
            grad_div_drift: vec![0.0; dim],
            sigma: 0.0,
            grad_sigma: vec![0.0; dim],
            hess_sigma: vec![0.0; dim * dim],
            lap_sigma: 0.0,
            deltas: (0..n_dirs).map(|_| DeltaTerms::zeros(dim)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub(crate) fn clear_spatial(&mut self) {
        self.drift.iter_mut().for_each(|v| *v = 0.0);
        self.jac_drift.iter_mut().for_each(|v| *v = 0.0);
        self.div_drift = 0.0;
        self.grad_div_drift.iter_mut().for_each(|v| *v = 0.0);
        self.sigma = 0.0;
        self.grad_sigma.iter_mut().for_each(|v| *v = 0.0);
        self.hess_sigma.iter_mut().for_each(|v| *v = 0.0);
        self.lap_sigma = 0.0;
    }
}

/// A parameterized family of SDEs. All methods are pure functions of their
/// arguments, so one instance can be shared read-only across workers.
pub trait SdeFamily: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Number of parameter coordinates the family reads. Parameter vectors
    /// may be longer; trailing coordinates are inert.
    fn n_params(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut [f64]);

    fn sigma(&self, t: f64, x: &[f64], gamma: &[f64]) -> f64;

    /// Fills the spatial part of `out` (everything but `deltas`).
    /// The default uses central finite differences.
    fn spatial_derivatives(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
        fd::fd_spatial(self, t, x, gamma, out);
    }

    /// Fills `out` with the derivatives with respect to parameter coordinate
    /// `j`. The default uses central finite differences.
    fn param_partial(&self, t: f64, x: &[f64], gamma: &[f64], j: usize, out: &mut DeltaTerms) {
        fd::fd_param_partial(self, t, x, gamma, j, out);
    }

    /// Whether the two methods above are closed-form.
    fn is_analytic(&self) -> bool {
        false
    }

    /// Whether `F` and `σ` are independent of `t`.
    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Gaussian initial density `N(mean + γ^j 𝟙, var·I)`, where the shift by a
/// parameter coordinate `j` is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    pub mean: Vec<f64>,
    pub var: f64,
    pub mean_param: Option<usize>,
}

impl InitialDensity {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], var: 1.0, mean_param: None }
    }

    fn center(&self, gamma: &[f64], i: usize) -> f64 {
        self.mean[i] + self.mean_param.map_or(0.0, |j| gamma.get(j).copied().unwrap_or(0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, gamma: &[f64], rng: &mut R, out: &mut [f64]) {
        let sd = self.var.sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *o = self.center(gamma, i) + sd * z;
        }
    }

    /// `∇ log h_0(x)`.
    pub fn score(&self, gamma: &[f64], x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = -(x[i] - self.center(gamma, i)) / self.var;
        }
    }

    /// `δ log h_0(x)` along the parameter direction `dir`.
    pub fn delta_log_h0(&self, gamma: &[f64], x: &[f64], dir: &[f64]) -> f64 {
        match self.mean_param {
            Some(j) if dir.get(j).copied().unwrap_or(0.0) != 0.0 => {
                let s: f64 = (0..x.len()).map(|i| x[i] - self.center(gamma, i)).sum();
                dir[j] * s / self.var
            }
            _ => 0.0,
        }
    }
}

/// A concrete model: a family, a parameter value and an initial density.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    pub name: String,
    pub params: ModelParams,
    pub family: Arc<dyn SdeFamily>,
    pub init: InitialDensity,
}

impl ModelInstance {
    pub fn new(name: impl Into<String>, params: ModelParams, family: Arc<dyn SdeFamily>, init: InitialDensity) -> Result<Self> {
        let name = name.into();
        if params.dim != family.dim() || params.dim == 0 {
            return Err(Error::DimensionMismatch {
                model: name,
                reason: format!("state dimension {} does not match family dimension {}", params.dim, family.dim()),
            });
        }
        if params.gamma.len() < family.n_params() {
            return Err(Error::DimensionMismatch {
                model: name,
                reason: format!("needs {} parameters, got {}", family.n_params(), params.gamma.len()),
            });
        }
        if init.mean.len() != params.dim || !(init.var > 0.0) {
            return Err(Error::InvalidConfig(format!("{name}: initial density must have dimension {} and positive variance", params.dim)));
        }
        Ok(Self { name, params, family, init })
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn gamma(&self) -> &[f64] {
        &self.params.gamma
    }

    pub fn n_params(&self) -> usize {
        self.params.gamma.len()
    }

    /// Same family and initial density at a different parameter value.
    pub fn with_gamma(&self, gamma: Vec<f64>) -> Self {
        let mut m = self.clone();
        m.params.gamma = gamma;
        m
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.family.drift(t, x, &self.params.gamma, out);
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> f64 {
        self.family.sigma(t, x, &self.params.gamma)
    }

    pub fn is_autonomous(&self) -> bool {
        self.family.is_autonomous()
    }

    /// Unit vector along parameter coordinate `j`.
    pub fn coordinate_direction(&self, j: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.n_params()];
        d[j] = 1.0;
        d
    }

    /// Evaluates the full bundle at `(t, x)`; `out.deltas` must have one
    /// entry per element of `dirs`.
    pub fn eval_bundle_into(&self, t: f64, x: &[f64], dirs: &[Vec<f64>], out: &mut DerivativeBundle) -> Result<()> {
        debug_assert_eq!(out.deltas.len(), dirs.len());
        let gamma = &self.params.gamma;
        self.family.spatial_derivatives(t, x, gamma, out);
        if !(out.sigma > 0.0) {
            return Err(Error::NonPositiveSigma { sigma: out.sigma, t });
        }
        let n_read = self.family.n_params();
        let mut partial: Option<DeltaTerms> = None;
        for (dir, delta) in dirs.iter().zip(out.deltas.iter_mut()) {
            delta.clear();
            let active: Vec<usize> = (0..n_read.min(dir.len())).filter(|&j| dir[j] != 0.0).collect();
            if let [j] = active[..] {
                if dir[j] == 1.0 {
                    self.family.param_partial(t, x, gamma, j, delta);
                    continue;
                }
            }
            let p = partial.get_or_insert_with(|| DeltaTerms::zeros(x.len()));
            for j in active {
                p.clear();
                self.family.param_partial(t, x, gamma, j, p);
                delta.add_scaled(dir[j], p);
            }
        }
        Ok(())
    }

    pub fn eval_bundle(&self, t: f64, x: &[f64], dirs: &[Vec<f64>]) -> Result<DerivativeBundle> {
        let mut out = DerivativeBundle::new(self.dim(), dirs.len());
        self.eval_bundle_into(t, x, dirs, &mut out)?;
        Ok(out)
    }
}

/// Looks up a built-in family.
///
/// * `ou`: `dx = (γ⁰ − x) dt + (1 + γ¹) dB`, any dimension.
/// * `mult1d`: `dx = β_t(γ − x) dt + √β_t (0.5 + exp(−(γ − x)²)) dB`, `β_t = 1 + 3t`.
/// * `lorenz96`: forcing `8 + γ`, `σ = 0.5 + exp(−|x − γ𝟙|²/M)`, `M ≥ 4`.
/// * `diffproto1d`: `dx = (γ⁰ − x) dt + (0.5 + exp(−(x − γ¹)²)) dB`.
/// * `diffproto5d`: Lorenz-96 drift with forcing `γ^i` and `σ` centred at `γ^M`.
///
/// All start from `N(0, I)`.
pub fn get_model(name: &str, params: ModelParams) -> Result<ModelInstance> {
    let dim = params.dim;
    let family: Arc<dyn SdeFamily> = match name {
        "ou" => Arc::new(Ou::new(dim, 1.0)),
        "mult1d" => {
            require_dim(name, dim, |m| m == 1, "mult1d is one-dimensional")?;
            Arc::new(Mult1d)
        }
        "lorenz96" => {
            require_dim(name, dim, |m| m >= 4, "lorenz96 needs M >= 4")?;
            Arc::new(LorenzFamily::new(dim, LorenzForcing::EightPlusGamma))
        }
        "diffproto1d" => {
            require_dim(name, dim, |m| m == 1, "diffproto1d is one-dimensional")?;
            Arc::new(DiffProto1d)
        }
        "diffproto5d" => {
            require_dim(name, dim, |m| m >= 4, "diffproto5d needs M >= 4")?;
            Arc::new(LorenzFamily::new(dim, LorenzForcing::PerCoordinate))
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    ModelInstance::new(name, params, family, InitialDensity::standard(dim))
}

fn require_dim(name: &str, dim: usize, ok: impl Fn(usize) -> bool, reason: &str) -> Result<()> {
    if ok(dim) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { model: name.to_string(), reason: format!("{reason} (got M = {dim})") })
    }
}

/// Parameter count of a registry family at dimension `dim`.
pub fn family_n_params(name: &str, dim: usize) -> Result<usize> {
    match name {
        "ou" | "diffproto1d" => Ok(2),
        "mult1d" | "lorenz96" => Ok(1),
        "diffproto5d" => Ok(dim + 1),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Evaluates the bundle for a single direction.
pub fn eval_bundle(model: &ModelInstance, t: f64, x: &[f64], delta_dir: &[f64]) -> Result<DerivativeBundle> {
    model.eval_bundle(t, x, &[delta_dir.to_vec()])
}
