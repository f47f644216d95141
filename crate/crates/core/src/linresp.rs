//! Divergence-kernel linear response: the per-step increment of the
//! accumulator whose conditional expectation given `x_T` is `δ log h_T`,
//! in continuous and exact-discrete form, plus the ergodic (one long orbit)
//! version for stationary averages.

use crate::conditioning::{bin_1d, mean_se, BinSpec, ConditionalTable};
use crate::discrete::{self, DeltaLogGMode, DivGMode, OneStepJacobian};
use crate::error::{Error, Result};
use crate::model::{DeltaTerms, DerivativeBundle, ModelInstance};
use crate::par::{self, Execution};
use crate::score::{step_nu_continuous, step_nu_discrete, AlphaSchedule};
use crate::simulate::{advance, blown_up, initial_rng, IncrementStream, PathEnsemble, PathState, StepContext, StepFault, StepHook};

/// Which form of the per-step recursion a [`DivergenceKernel`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    /// Leading-order SDE integrand.
    #[default]
    Continuous,
    /// Exact bookkeeping of the discrete one-step maps.
    Discrete { div_g: DivGMode, delta_log_g: DeltaLogGMode },
}

/// `δx ≈ −δF Δt − δσ ΔB + δσ ∇σ Δt`.
pub fn delta_x(b: &DerivativeBundle, delta: &DeltaTerms, db: &[f64], dt: f64) -> Vec<f64> {
    (0..db.len())
        .map(|i| -delta.delta_drift[i] * dt - delta.delta_sigma * db[i] + delta.delta_sigma * b.grad_sigma[i] * dt)
        .collect()
}

/// `δx = −g_*⁻¹(δF Δt + δσ ΔB)`.
pub fn delta_x_exact(jac: &OneStepJacobian, delta: &DeltaTerms, db: &[f64], dt: f64) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = (0..db.len()).map(|i| delta.delta_drift[i] * dt + delta.delta_sigma * db[i]).collect();
    Ok(jac.solve(&rhs)?.into_iter().map(|v| -v).collect())
}

/// First-order Neumann expansion of [`delta_x_exact`] before `ΔB(∇σ·ΔB)`
/// is replaced by its mean `∇σ Δt`: `−δF Δt − δσ ΔB + δσ ΔB (∇σ·ΔB)`.
pub fn delta_x_expansion(b: &DerivativeBundle, delta: &DeltaTerms, db: &[f64], dt: f64) -> Vec<f64> {
    let gs_db: f64 = b.grad_sigma.iter().zip(db).map(|(g, d)| g * d).sum();
    (0..db.len())
        .map(|i| -delta.delta_drift[i] * dt - delta.delta_sigma * db[i] + delta.delta_sigma * db[i] * gs_db)
        .collect()
}

/// Continuous-time increment
/// `ν·(−δF Δt − δσ ΔB + δσ ∇σ Δt) + δσ Δσ Δt − div δF Δt − ∇δσ·ΔB + ∇σ·∇δσ Δt`,
/// with `ν` the value at the start of the step.
pub fn response_increment(nu: &[f64], b: &DerivativeBundle, delta: &DeltaTerms, db: &[f64], dt: f64) -> f64 {
    let ds = delta.delta_sigma;
    let mut s = 0.0;
    for i in 0..nu.len() {
        let dx = -delta.delta_drift[i] * dt - ds * db[i] + ds * b.grad_sigma[i] * dt;
        s += nu[i] * dx - delta.grad_delta_sigma[i] * db[i] + b.grad_sigma[i] * delta.grad_delta_sigma[i] * dt;
    }
    s + ds * b.lap_sigma * dt - delta.div_delta_drift * dt
}

/// `S + dS` for the continuous increment.
pub fn step_accumulator(s: f64, nu: &[f64], b: &DerivativeBundle, delta: &DeltaTerms, db: &[f64], dt: f64) -> f64 {
    s + response_increment(nu, b, delta, db, dt)
}

/// Discrete increment `(ν − ∇log|g_*|)·δx − δ log|g_*|` with the exact `δx`.
pub fn discrete_increment(
    nu: &[f64],
    jac: &OneStepJacobian,
    div_g: &[f64],
    delta: &DeltaTerms,
    delta_log_g: f64,
    db: &[f64],
    dt: f64,
) -> Result<f64> {
    let dx = delta_x_exact(jac, delta, db, dt)?;
    let s: f64 = (0..nu.len()).map(|i| (nu[i] - div_g[i]) * dx[i]).sum();
    Ok(s - delta_log_g)
}

/// `S + dS` for the discrete increment.
pub fn step_accumulator_discrete(
    s: f64,
    nu: &[f64],
    jac: &OneStepJacobian,
    div_g: &[f64],
    delta: &DeltaTerms,
    delta_log_g: f64,
    db: &[f64],
    dt: f64,
) -> Result<f64> {
    Ok(s + discrete_increment(nu, jac, div_g, delta, delta_log_g, db, dt)?)
}

/// Step hook that carries `ν` and one response accumulator per direction.
#[derive(Debug, Clone, Copy)]
pub struct DivergenceKernel {
    pub alpha: AlphaSchedule,
    pub mode: StepMode,
}

impl DivergenceKernel {
    pub fn continuous(alpha: AlphaSchedule) -> Self {
        Self { alpha, mode: StepMode::Continuous }
    }

    pub fn discrete(alpha: AlphaSchedule, div_g: DivGMode, delta_log_g: DeltaLogGMode) -> Self {
        Self { alpha, mode: StepMode::Discrete { div_g, delta_log_g } }
    }
}

#[doc(hidden)]
pub struct KernelScratch {
    work: Vec<f64>,
    div_g: Vec<f64>,
}

fn finite(state: &PathState) -> bool {
    state.nu.iter().chain(&state.acc).all(|v| v.is_finite())
}

impl StepHook for DivergenceKernel {
    type Scratch = KernelScratch;

    fn scratch(&self, dim: usize) -> KernelScratch {
        KernelScratch { work: vec![0.0; dim], div_g: vec![0.0; dim] }
    }

    fn step(&self, ctx: &StepContext<'_>, state: &mut PathState, sc: &mut KernelScratch) -> Result<(), StepFault> {
        let b = ctx.bundle;
        match self.mode {
            StepMode::Continuous => {
                for (acc, delta) in state.acc.iter_mut().zip(&b.deltas) {
                    *acc += response_increment(&state.nu, b, delta, ctx.db, ctx.dt);
                }
                step_nu_continuous(&mut state.nu, b, ctx.db, ctx.dt, self.alpha.rate(), &mut sc.work);
            }
            StepMode::Discrete { div_g, delta_log_g } => {
                let fault = |e: Error| match e {
                    Error::SingularJacobian | Error::NonPositiveSigma { .. } => StepFault::Diverged,
                    e => StepFault::Fatal(e),
                };
                let jac = OneStepJacobian::from_bundle(b, ctx.db, ctx.dt).map_err(fault)?;
                match div_g {
                    DivGMode::Approximate => discrete::div_g_approx(b, ctx.db, ctx.dt, &mut sc.div_g),
                    DivGMode::Exact => {
                        sc.div_g = discrete::div_g_exact(ctx.model, ctx.t, &state.x, ctx.db, ctx.dt).map_err(fault)?;
                    }
                }
                for ((acc, delta), dir) in state.acc.iter_mut().zip(&b.deltas).zip(ctx.directions) {
                    let dlg = match delta_log_g {
                        DeltaLogGMode::Approximate => discrete::delta_log_g_approx(b, delta, ctx.db, ctx.dt),
                        DeltaLogGMode::Exact => {
                            discrete::delta_log_g_exact(ctx.model, ctx.t, &state.x, dir, ctx.db, ctx.dt).map_err(fault)?
                        }
                    };
                    *acc += discrete_increment(&state.nu, &jac, &sc.div_g, delta, dlg, ctx.db, ctx.dt).map_err(fault)?;
                }
                let w = self.alpha.discrete_weight(ctx.dt);
                step_nu_discrete(&mut state.nu, &jac, &sc.div_g, ctx.db, ctx.dt, b.sigma, w).map_err(fault)?;
            }
        }
        if finite(state) {
            Ok(())
        } else {
            Err(StepFault::Diverged)
        }
    }
}

/// Binned `E[δ log h_0(x_0) + S_T | x_T^coord]` for accumulator `dir`.
pub fn estimate_linear_response(ensemble: &PathEnsemble, bins: &BinSpec, dir: usize, coord: usize) -> ConditionalTable {
    bin_1d(&ensemble.final_coord(coord), &ensemble.acc(dir), bins)
}

/// Scalar observables for ergodic averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// `x^i`
    Coordinate(usize),
    /// `(x^i)²`
    CoordinateSquared(usize),
    /// `|x|²/M`
    MeanSquare,
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Observable::Coordinate(i) => x[i],
            Observable::CoordinateSquared(i) => x[i] * x[i],
            Observable::MeanSquare => x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match *self {
            Observable::Coordinate(i) | Observable::CoordinateSquared(i) if i >= dim => {
                Err(Error::InvalidConfig(format!("observable reads coordinate {i} of a {dim}-dimensional state")))
            }
            _ => Ok(()),
        }
    }
}

/// Default burn-in discarded at the start of each orbit, in time units.
pub const DEFAULT_BURN_IN: f64 = 10.0;

/// Long-orbit configuration. `window`, `horizon` and `burn_in` are in time
/// units; `horizon` counts after burn-in.
#[derive(Debug, Clone)]
pub struct ErgodicConfig<'a> {
    pub model: &'a ModelInstance,
    pub dt: f64,
    pub window: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub n_orbits: usize,
    pub alpha: AlphaSchedule,
    pub observable: Observable,
    pub directions: Vec<Vec<f64>>,
    pub seed: u64,
    pub execution: Execution,
}

impl<'a> ErgodicConfig<'a> {
    pub fn new(model: &'a ModelInstance, dt: f64, window: f64, horizon: f64, n_orbits: usize, alpha: AlphaSchedule, observable: Observable) -> Self {
        Self {
            model,
            dt,
            window,
            horizon,
            burn_in: DEFAULT_BURN_IN,
            n_orbits,
            alpha,
            observable,
            directions: Vec::new(),
            seed: 0,
            execution: Execution::Parallel,
        }
    }

    pub fn with_directions(mut self, directions: Vec<Vec<f64>>) -> Self {
        self.directions = directions;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_burn_in(mut self, burn_in: f64) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn steps(&self, time: f64) -> usize {
        (time / self.dt).round() as usize
    }

    pub fn window_steps(&self) -> usize {
        self.steps(self.window)
    }

    pub fn horizon_steps(&self) -> usize {
        self.steps(self.horizon)
    }

    pub fn burn_in_steps(&self) -> usize {
        self.steps(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.window > 0.0 && self.window < self.horizon) {
            return Err(Error::InvalidConfig(format!("need 0 < W < T, got W = {}, T = {}", self.window, self.horizon)));
        }
        if !(self.burn_in >= 0.0) || self.n_orbits == 0 {
            return Err(Error::InvalidConfig("burn-in must be non-negative and n_orbits at least 1".into()));
        }
        if self.window_steps() == 0 || self.horizon_steps() <= self.window_steps() {
            return Err(Error::InvalidConfig(format!(
                "orbit of {} steps after burn-in is too short for a window of {} steps",
                self.horizon_steps(),
                self.window_steps()
            )));
        }
        if !self.model.is_autonomous() {
            return Err(Error::Unsupported(format!("ergodic response needs an autonomous model, `{}` depends on t", self.model.name)));
        }
        if let Some(d) = self.directions.iter().find(|d| d.len() != self.model.n_params()) {
            return Err(Error::InvalidConfig(format!("direction has length {}, model has {} parameters", d.len(), self.model.n_params())));
        }
        self.observable.check(self.model.dim())
    }
}

/// Result of one orbit.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitResponse {
    pub phi_avg: f64,
    /// One entry per direction.
    pub responses: Vec<f64>,
}

/// Orbit-averaged ergodic response with standard errors over orbits.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicResult {
    pub phi_avg: f64,
    pub phi_avg_se: f64,
    pub responses: Vec<f64>,
    pub ses: Vec<f64>,
    pub per_orbit: Vec<OrbitResponse>,
}

struct Orbit<'c, 'a> {
    cfg: &'c ErgodicConfig<'a>,
    x: Vec<f64>,
    nu: Vec<f64>,
    db: Vec<f64>,
    work: Vec<f64>,
    bundle: DerivativeBundle,
    stream: IncrementStream,
    n: usize,
}

impl<'c, 'a> Orbit<'c, 'a> {
    fn start(cfg: &'c ErgodicConfig<'a>, index: usize, n_dirs: usize) -> Self {
        let m = cfg.model.dim();
        let mut x = vec![0.0; m];
        cfg.model.init.sample(cfg.model.gamma(), &mut initial_rng(cfg.seed, index as u64), &mut x);
        Orbit {
            cfg,
            x,
            nu: vec![0.0; m],
            db: vec![0.0; m],
            work: vec![0.0; m],
            bundle: DerivativeBundle::new(m, n_dirs),
            stream: IncrementStream::new(cfg.seed, index as u64, cfg.dt),
            n: 0,
        }
    }

    fn t(&self) -> f64 {
        self.n as f64 * self.cfg.dt
    }

    /// Advances `x` only.
    fn step_plain(&mut self) -> Result<()> {
        let model = self.cfg.model;
        self.stream.fill(&mut self.db);
        let t = self.t();
        model.drift(t, &self.x, &mut self.bundle.drift);
        let sigma = model.sigma(t, &self.x);
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma { sigma, t });
        }
        advance(&mut self.x, &self.bundle.drift, sigma, &self.db, self.cfg.dt);
        self.finish_step()
    }

    /// Advances `x` and `ν`; writes the response increments of the step into
    /// `ds` when given.
    fn step_with_nu(&mut self, ds: Option<&mut [f64]>) -> Result<()> {
        let cfg = self.cfg;
        self.stream.fill(&mut self.db);
        let t = self.t();
        let dirs: &[Vec<f64>] = if self.bundle.deltas.is_empty() { &[] } else { &cfg.directions };
        cfg.model.eval_bundle_into(t, &self.x, dirs, &mut self.bundle)?;
        if let Some(ds) = ds {
            for (d, delta) in ds.iter_mut().zip(&self.bundle.deltas) {
                *d = response_increment(&self.nu, &self.bundle, delta, &self.db, cfg.dt);
            }
        }
        step_nu_continuous(&mut self.nu, &self.bundle, &self.db, cfg.dt, cfg.alpha.rate(), &mut self.work);
        advance(&mut self.x, &self.bundle.drift, self.bundle.sigma, &self.db, cfg.dt);
        if self.nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("covector diverged at t = {}", self.t())));
        }
        self.finish_step()
    }

    fn finish_step(&mut self) -> Result<()> {
        self.n += 1;
        if blown_up(&self.x) {
            return Err(Error::NonFinite(format!("orbit left the state box at t = {}", self.t())));
        }
        Ok(())
    }
}

fn run_orbit(cfg: &ErgodicConfig<'_>, index: usize) -> Result<OrbitResponse> {
    let n_dirs = cfg.directions.len();
    let mut orbit = Orbit::start(cfg, index, 0);
    for _ in 0..cfg.burn_in_steps() {
        orbit.step_with_nu(None)?;
    }
    orbit.bundle = DerivativeBundle::new(cfg.model.dim(), n_dirs);
    let big_n = cfg.horizon_steps();
    let w = cfg.window_steps();
    // ring of the last w increments and their running sum R_k
    let mut ring = vec![0.0; w * n_dirs];
    let mut window_sum = vec![0.0; n_dirs];
    let mut ds = vec![0.0; n_dirs];
    let mut p = vec![0.0; n_dirs];
    let mut q = vec![0.0; n_dirs];
    let mut phi_sum = 0.0;
    for n in 0..big_n {
        orbit.step_with_nu(Some(&mut ds))?;
        if n + w > big_n {
            // increments past N − W have no full window
            ds.iter_mut().for_each(|v| *v = 0.0);
        }
        let slot = &mut ring[(n % w) * n_dirs..(n % w + 1) * n_dirs];
        for d in 0..n_dirs {
            window_sum[d] += ds[d] - slot[d];
            slot[d] = ds[d];
        }
        let phi = cfg.observable.eval(&orbit.x);
        phi_sum += phi;
        for d in 0..n_dirs {
            p[d] += phi * window_sum[d];
            q[d] += window_sum[d];
        }
    }
    let phi_avg = phi_sum / big_n as f64;
    let denom = (big_n - w + 1) as f64;
    let responses = (0..n_dirs).map(|d| (p[d] - phi_avg * q[d]) / denom).collect();
    Ok(OrbitResponse { phi_avg, responses })
}

/// Ergodic linear response `δ∫Φ h^γ` along each direction of `cfg`,
/// one estimate per orbit, averaged over orbits.
///
/// `ν` starts at zero on every orbit and runs through the burn-in. The
/// windowed correlation is accumulated in a single pass with a ring buffer
/// of the last `W/Δt` increments.
pub fn ergodic_linear_response(cfg: &ErgodicConfig<'_>) -> Result<ErgodicResult> {
    cfg.validate()?;
    let per_orbit = par::map_indexed(cfg.execution, cfg.n_orbits, || (), |_, i| run_orbit(cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let phis: Vec<f64> = per_orbit.iter().map(|o| o.phi_avg).collect();
    let (phi_avg, phi_avg_se) = mean_se(&phis);
    let (responses, ses) = (0..cfg.directions.len())
        .map(|d| mean_se(&per_orbit.iter().map(|o| o.responses[d]).collect::<Vec<_>>()))
        .unzip();
    Ok(ErgodicResult { phi_avg, phi_avg_se, responses, ses, per_orbit })
}

/// Time average of the observable on each orbit of `cfg`, ignoring
/// directions. Uses the same random streams as [`ergodic_linear_response`].
pub fn orbit_averages(cfg: &ErgodicConfig<'_>) -> Result<Vec<f64>> {
    cfg.validate()?;
    par::map_indexed(cfg.execution, cfg.n_orbits, || (), |_, i| {
        let mut orbit = Orbit::start(cfg, i, 0);
        for _ in 0..cfg.burn_in_steps() {
            orbit.step_plain()?;
        }
        let mut sum = 0.0;
        let big_n = cfg.horizon_steps();
        for _ in 0..big_n {
            orbit.step_plain()?;
            sum += cfg.observable.eval(&orbit.x);
        }
        Ok(sum / big_n as f64)
    })
    .into_iter()
    .collect()
}

/// States of orbit `index` after the burn-in, every `stride` steps over
/// `duration` time units, flat `[n_records × M]`.
pub fn orbit_trace(cfg: &ErgodicConfig<'_>, index: usize, duration: f64, stride: usize) -> Result<Vec<f64>> {
    let stride = stride.max(1);
    let mut orbit = Orbit::start(cfg, index, 0);
    for _ in 0..cfg.burn_in_steps() {
        orbit.step_plain()?;
    }
    let mut out = orbit.x.clone();
    for n in 0..cfg.steps(duration) {
        orbit.step_plain()?;
        if (n + 1) % stride == 0 {
            out.extend_from_slice(&orbit.x);
        }
    }
    Ok(out)
}
