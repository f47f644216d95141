//! Independent reference values for the estimators: quadrature of the
//! one-step density, finite differences of histogram log-densities and of
//! orbit averages, closed-form Ornstein–Uhlenbeck marginals and the
//! likelihood-ratio (kernel-differentiation) estimator.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{mean_se, BinRow, BinSpec, ConditionalTable, Moments};
use crate::error::{Error, Result};
use crate::linresp::{orbit_averages, ErgodicConfig};
use crate::model::ModelInstance;
use crate::par::Execution;
use crate::simulate::{simulate_ensemble, NoHook, PathConfig, PathState, StepContext, StepFault, StepHook};

/// Grid size of the one-step quadrature.
pub const QUADRATURE_POINTS: usize = 10_000;
/// Half-width of the quadrature window in initial standard deviations.
pub const QUADRATURE_HALF_WIDTH: f64 = 8.0;
/// Largest tolerated initial mass outside the quadrature window.
pub const QUADRATURE_TAIL: f64 = 1e-8;
/// Step in the scalar parameter for quadrature derivatives.
pub const QUADRATURE_GAMMA_STEP: f64 = 1e-4;
/// Bootstrap resamples for finite-difference standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// A one-dimensional, one-step system `x_1 = f(x_0; g) + s(x_0; g) ξ`,
/// `ξ ~ N(0, noise_var)`, `x_0 ~ N(h0_mean, h0_var)`, with a scalar
/// parameter `g`.
#[derive(Clone)]
pub struct OneStepSystem {
    map: Coefficient,
    scale: Coefficient,
    pub noise_var: f64,
    pub h0_mean: f64,
    pub h0_var: f64,
}

impl std::fmt::Debug for OneStepSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OneStepSystem")
            .field("noise_var", &self.noise_var)
            .field("h0_mean", &self.h0_mean)
            .field("h0_var", &self.h0_var)
            .finish_non_exhaustive()
    }
}

impl OneStepSystem {
    pub fn new(
        map: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        scale: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        noise_var: f64,
        h0_mean: f64,
        h0_var: f64,
    ) -> Self {
        Self { map: Arc::new(map), scale: Arc::new(scale), noise_var, h0_mean, h0_var }
    }

    /// One Euler step of a 1-D model from `t = 0`, with `g` the offset of
    /// the parameter along `dir` from the model's current value.
    pub fn euler(model: &ModelInstance, dt: f64, dir: &[f64]) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::Unsupported("the one-step oracle is one-dimensional".into()));
        }
        if model.init.mean_param.is_some() {
            return Err(Error::Unsupported("the one-step oracle needs a parameter-free initial density".into()));
        }
        let base = model.gamma().to_vec();
        let dir = dir.to_vec();
        let at = move |m: &ModelInstance, g: f64| m.with_gamma(base.iter().zip(&dir).map(|(b, d)| b + g * d).collect());
        let (m1, m2) = (model.clone(), model.clone());
        let at2 = at.clone();
        Ok(Self::new(
            move |x, g| {
                let mut f = [0.0];
                at(&m1, g).drift(0.0, &[x], &mut f);
                x + f[0] * dt
            },
            move |x, g| at2(&m2, g).sigma(0.0, &[x]),
            dt,
            model.init.mean[0],
            model.init.var,
        ))
    }

    pub fn map(&self, x0: f64, g: f64) -> f64 {
        (self.map)(x0, g)
    }

    pub fn scale(&self, x0: f64, g: f64) -> f64 {
        (self.scale)(x0, g)
    }

    /// Initial-state nodes and trapezoid weights times `h_0`.
    fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        let sd = self.h0_var.sqrt();
        let (lo, hi) = (self.h0_mean - QUADRATURE_HALF_WIDTH * sd, self.h0_mean + QUADRATURE_HALF_WIDTH * sd);
        let n = QUADRATURE_POINTS;
        let h = (hi - lo) / (n - 1) as f64;
        let nodes: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                (x, w * normal_pdf(x, self.h0_mean, self.h0_var))
            })
            .collect();
        let mass: f64 = nodes.iter().map(|n| n.1).sum();
        if (1.0 - mass).abs() > QUADRATURE_TAIL {
            return Err(Error::Quadrature(format!("initial mass inside the window is {mass}")));
        }
        Ok(nodes)
    }

    /// `(weight·h_0, mean, variance)` of the transition density at every node.
    fn transitions(&self, nodes: &[(f64, f64)], g: f64) -> Vec<(f64, f64, f64)> {
        nodes
            .iter()
            .map(|&(x0, w)| {
                let s = self.scale(x0, g);
                (w, self.map(x0, g), s * s * self.noise_var)
            })
            .collect()
    }
}

fn mix_density(tr: &[(f64, f64, f64)], x1: f64) -> f64 {
    tr.iter().map(|&(w, m, v)| w * normal_pdf(x1, m, v)).sum()
}

/// `h_1(x_1) = ∫ h_0(x_0) p(x_0, x_1) dx_0` at each point of `x1_grid`.
pub fn quadrature_one_step(sys: &OneStepSystem, g: f64, x1_grid: &[f64]) -> Result<Vec<f64>> {
    let tr = sys.transitions(&sys.nodes()?, g);
    Ok(x1_grid.iter().map(|&x| mix_density(&tr, x)).collect())
}

/// `δ log h_1` at each grid point, by central differences in `g`.
pub fn quadrature_delta_log_h1(sys: &OneStepSystem, g: f64, x1_grid: &[f64]) -> Result<Vec<f64>> {
    let e = QUADRATURE_GAMMA_STEP;
    let p = quadrature_one_step(sys, g + e, x1_grid)?;
    let m = quadrature_one_step(sys, g - e, x1_grid)?;
    Ok(p.iter().zip(&m).map(|(a, b)| (a.ln() - b.ln()) / (2.0 * e)).collect())
}

/// Bin averages `∫_bin δh_1 / ∫_bin h_1`, the value a binned conditional
/// mean of `δ log h_1` estimates. `per_bin` points per bin.
pub fn quadrature_bin_response(sys: &OneStepSystem, g: f64, bins: &BinSpec, per_bin: usize) -> Result<Vec<f64>> {
    let nodes = sys.nodes()?;
    let e = QUADRATURE_GAMMA_STEP;
    let (t0, tp, tm) = (sys.transitions(&nodes, g), sys.transitions(&nodes, g + e), sys.transitions(&nodes, g - e));
    let per_bin = per_bin.max(2);
    (0..bins.n_bins)
        .map(|k| {
            let (l, r) = bins.edges(k);
            let h = (r - l) / (per_bin - 1) as f64;
            let (mut mass, mut dmass) = (0.0, 0.0);
            for i in 0..per_bin {
                let x = l + i as f64 * h;
                let w = if i == 0 || i == per_bin - 1 { 0.5 * h } else { h };
                mass += w * mix_density(&t0, x);
                dmass += w * (mix_density(&tp, x) - mix_density(&tm, x)) / (2.0 * e);
            }
            Ok(dmass / mass)
        })
        .collect()
}

/// One-step kernel-differentiation weight
/// `δ log p = −M δσ/σ + ΔB·δF/σ + |ΔB|² δσ/(σ Δt)` for `x_1 = x_0 + FΔt + σΔB`.
pub fn kernel_one_step_weight(delta_drift: &[f64], delta_sigma: f64, sigma: f64, db: &[f64], dt: f64) -> f64 {
    let m = db.len() as f64;
    let db_df: f64 = db.iter().zip(delta_drift).map(|(b, f)| b * f).sum();
    let db2: f64 = db.iter().map(|b| b * b).sum();
    -m * delta_sigma / sigma + db_df / sigma + db2 * delta_sigma / (sigma * dt)
}

/// Likelihood-ratio accumulator `Σ_n δF(x_n)·ΔB_n / σ(x_n)`, valid only for
/// parameter-independent noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct LikelihoodRatio;

impl StepHook for LikelihoodRatio {
    type Scratch = ();

    fn scratch(&self, _dim: usize) {}

    fn step(&self, ctx: &StepContext<'_>, state: &mut PathState, _: &mut ()) -> Result<(), StepFault> {
        let b = ctx.bundle;
        for (acc, delta) in state.acc.iter_mut().zip(&b.deltas) {
            if delta.delta_sigma != 0.0 || delta.grad_delta_sigma.iter().any(|&v| v != 0.0) {
                return Err(StepFault::Fatal(Error::Unsupported(
                    "the likelihood-ratio estimator needs a parameter-independent diffusion coefficient".into(),
                )));
            }
            let s: f64 = delta.delta_drift.iter().zip(ctx.db).map(|(f, d)| f * d).sum();
            *acc += s / b.sigma;
        }
        if state.acc.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(StepFault::Diverged)
        }
    }
}

/// Ornstein–Uhlenbeck marginal `dx = (γ⁰ − x) dt + σ dB`, `x_0 ~ N(m_0, v_0)`,
/// at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuMarginal {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
    pub gamma: f64,
    pub sigma: f64,
}

/// Closed-form OU marginal.
pub fn ou_analytic(t: f64, m0: f64, v0: f64, gamma: f64, sigma: f64) -> OuMarginal {
    let e1 = (-t).exp();
    let e2 = (-2.0 * t).exp();
    OuMarginal { t, mean: gamma + (m0 - gamma) * e1, var: v0 * e2 + sigma * sigma * (1.0 - e2) / 2.0, gamma, sigma }
}

impl OuMarginal {
    pub fn log_density(&self, x: f64) -> f64 {
        normal_pdf(x, self.mean, self.var).ln()
    }

    /// `∇ log h_t(x)`
    pub fn score(&self, x: f64) -> f64 {
        -(x - self.mean) / self.var
    }

    /// `∂_{γ⁰} log h_t(x)`
    pub fn delta_log_h_drift(&self, x: f64) -> f64 {
        (1.0 - (-self.t).exp()) * (x - self.mean) / self.var
    }

    /// `∂_σ log h_t(x)`
    pub fn delta_log_h_sigma(&self, x: f64) -> f64 {
        let u = x - self.mean;
        self.sigma * (1.0 - (-2.0 * self.t).exp()) * (u * u / self.var - 1.0) / (2.0 * self.var)
    }
}

/// Finite-difference log-density tables at step `eps` and `2·eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FdLogDensity {
    pub eps: f64,
    pub at_eps: ConditionalTable,
    pub at_2eps: ConditionalTable,
}

/// Configuration of [`fd_log_density`].
#[derive(Debug, Clone)]
pub struct FdConfig<'a> {
    pub model: &'a ModelInstance,
    pub direction: Vec<f64>,
    pub eps: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub coord: usize,
    pub execution: Execution,
}

fn final_coords(cfg: &FdConfig<'_>, shift: f64) -> Result<Vec<Option<f64>>> {
    let gamma: Vec<f64> = cfg.model.gamma().iter().zip(&cfg.direction).map(|(g, d)| g + shift * d).collect();
    let model = cfg.model.with_gamma(gamma);
    let pc = PathConfig::new(&model, cfg.dt, cfg.n_steps, cfg.n_paths, cfg.seed).with_execution(cfg.execution);
    let ens = simulate_ensemble(&pc, &NoHook)?;
    let mut out = vec![None; cfg.n_paths];
    for p in &ens.paths {
        out[p.path_index] = Some(p.x[cfg.coord]);
    }
    Ok(out)
}

fn bin_counts(xs: &[Option<f64>], idx: impl Iterator<Item = usize>, bins: &BinSpec) -> Vec<usize> {
    let mut c = vec![0; bins.n_bins];
    for i in idx {
        if let Some(k) = xs[i].and_then(|x| bins.index_of(x)) {
            c[k] += 1;
        }
    }
    c
}

fn fd_table(plus: &[Option<f64>], minus: &[Option<f64>], eps: f64, bins: &BinSpec, seed: u64) -> ConditionalTable {
    let l = plus.len();
    let width = bins.width();
    let estimate = |cp: &[usize], cm: &[usize], k: usize| -> Option<f64> {
        (cp[k] > 0 && cm[k] > 0).then(|| ((cp[k] as f64).ln() - (cm[k] as f64).ln()) / (2.0 * eps))
    };
    let cp = bin_counts(plus, 0..l, bins);
    let cm = bin_counts(minus, 0..l, bins);
    // paired bootstrap over path indices keeps the common random numbers
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007_5742_u64);
    let mut stats = vec![Moments::default(); bins.n_bins];
    let mut draw = vec![0usize; l];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        draw.iter_mut().for_each(|d| *d = rng.random_range(0..l));
        let bp = bin_counts(plus, draw.iter().copied(), bins);
        let bm = bin_counts(minus, draw.iter().copied(), bins);
        for (k, s) in stats.iter_mut().enumerate() {
            if let Some(v) = estimate(&bp, &bm, k) {
                s.push(v);
            }
        }
    }
    let rows = (0..bins.n_bins)
        .map(|k| {
            let (left, right) = bins.edges(k);
            let count = cp[k].min(cm[k]);
            let reported = count >= bins.min_count.max(1) && stats[k].n >= 2;
            let log_density = (cp[k] > 0 && cm[k] > 0).then(|| 0.5 * ((cp[k] * cm[k]) as f64).ln() - (l as f64 * width).ln());
            BinRow {
                left,
                right,
                count,
                mean: if reported { estimate(&cp, &cm, k) } else { None },
                se: reported.then(|| stats[k].variance().sqrt()),
                log_density,
            }
        })
        .collect();
    let inside = |xs: &[Option<f64>]| xs.iter().filter(|x| x.and_then(|v| bins.index_of(v)).is_some()).count();
    ConditionalTable { rows, out_of_range: l - inside(plus).min(inside(minus)), total: l }
}

/// Central finite difference of binned log-densities along `cfg.direction`,
/// simulated at `γ ± eps` and `γ ± 2 eps` with common random numbers.
/// Standard errors come from a paired bootstrap over paths.
pub fn fd_log_density(cfg: &FdConfig<'_>, bins: &BinSpec) -> Result<FdLogDensity> {
    if !(cfg.eps > 0.0) {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {}", cfg.eps)));
    }
    if cfg.direction.len() != cfg.model.n_params() || cfg.coord >= cfg.model.dim() {
        return Err(Error::InvalidConfig("direction or coordinate does not fit the model".into()));
    }
    let (p1, m1) = (final_coords(cfg, cfg.eps)?, final_coords(cfg, -cfg.eps)?);
    let (p2, m2) = (final_coords(cfg, 2.0 * cfg.eps)?, final_coords(cfg, -2.0 * cfg.eps)?);
    Ok(FdLogDensity {
        eps: cfg.eps,
        at_eps: fd_table(&p1, &m1, cfg.eps, bins, cfg.seed),
        at_2eps: fd_table(&p2, &m2, 2.0 * cfg.eps, bins, cfg.seed.wrapping_add(1)),
    })
}

/// Central-difference response of an orbit average.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicFd {
    pub dgamma: f64,
    pub estimate: f64,
    pub se: f64,
    /// Per-orbit `(Φ⁺ − Φ⁻)/(2Δγ)`.
    pub per_orbit: Vec<f64>,
}

/// `(⟨Φ⟩_{γ+Δγ d} − ⟨Φ⟩_{γ−Δγ d})/(2Δγ)` with the orbits of both sides
/// driven by the same noise.
pub fn ergodic_fd_oracle(cfg: &ErgodicConfig<'_>, direction: &[f64], dgamma: f64) -> Result<ErgodicFd> {
    if !(dgamma > 0.0) || direction.len() != cfg.model.n_params() {
        return Err(Error::InvalidConfig("need dgamma > 0 and a direction matching the parameters".into()));
    }
    let side = |s: f64| -> Result<Vec<f64>> {
        let gamma = cfg.model.gamma().iter().zip(direction).map(|(g, d)| g + s * d).collect();
        let model = cfg.model.with_gamma(gamma);
        let mut c = cfg.clone();
        c.model = &model;
        c.directions.clear();
        orbit_averages(&c)
    };
    let plus = side(dgamma)?;
    let minus = side(-dgamma)?;
    let per_orbit: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * dgamma)).collect();
    let (estimate, se) = mean_se(&per_orbit);
    Ok(ErgodicFd { dgamma, estimate, se, per_orbit })
}
