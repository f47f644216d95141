//! Euler–Maruyama ensembles with per-path random streams.
//!
//! Path `l` draws its initial state and its Brownian increments from two
//! ChaCha8 streams keyed by `(seed, l)`, so an ensemble is a pure function
//! of its configuration no matter how paths are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{DerivativeBundle, ModelInstance};
use crate::par::{self, Execution};

/// States with `|x|_∞` above this are treated as blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e8;
/// Largest tolerated fraction of excluded paths.
pub const BLOW_UP_BUDGET: f64 = 0.01;

const STREAM_INCREMENTS: u64 = 0;
const STREAM_INITIAL: u64 = 1;

fn path_rng(seed: u64, path_index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path_index + purpose);
    rng
}

/// Generator of `ΔB_n ~ N(0, Δt I)` for one path.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
}

impl IncrementStream {
    pub fn new(seed: u64, path_index: u64, dt: f64) -> Self {
        Self { rng: path_rng(seed, path_index, STREAM_INCREMENTS), sqrt_dt: dt.sqrt() }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = self.sqrt_dt * z;
        }
    }
}

/// RNG used for the initial draw `x_0` of a path.
pub fn initial_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    path_rng(seed, path_index, STREAM_INITIAL)
}

/// The `N × M` Brownian increments of one path, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    pub n_steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl BrownianIncrements {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }
}

/// The increments path `path_index` consumes in [`simulate_ensemble`].
pub fn generate_increments(seed: u64, path_index: u64, n_steps: usize, dim: usize, dt: f64) -> BrownianIncrements {
    let mut data = vec![0.0; n_steps * dim];
    let mut stream = IncrementStream::new(seed, path_index, dt);
    for row in data.chunks_mut(dim.max(1)) {
        stream.fill(row);
    }
    BrownianIncrements { n_steps, dim, data }
}

/// One Ito–Euler step `x' = x + F(t, x) Δt + σ(t, x) ΔB`.
pub fn em_step(model: &ModelInstance, t: f64, x: &[f64], db: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut f = vec![0.0; x.len()];
    model.drift(t, x, &mut f);
    let sigma = model.sigma(t, x);
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma { sigma, t });
    }
    Ok(x.iter().zip(&f).zip(db).map(|((xi, fi), bi)| xi + fi * dt + sigma * bi).collect())
}

#[inline]
pub(crate) fn advance(x: &mut [f64], drift: &[f64], sigma: f64, db: &[f64], dt: f64) {
    for ((xi, fi), bi) in x.iter_mut().zip(drift).zip(db) {
        *xi += fi * dt + sigma * bi;
    }
}

#[inline]
pub(crate) fn blown_up(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_THRESHOLD)
}

/// State carried along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub path_index: usize,
    pub t: f64,
    pub x0: Vec<f64>,
    pub x: Vec<f64>,
    /// Covector `ν`, started at `∇ log h_0(x_0)`.
    pub nu: Vec<f64>,
    /// One linear-response accumulator per direction, started at `δ log h_0(x_0)`.
    pub acc: Vec<f64>,
}

/// Everything a hook sees at step `n`, evaluated at `(t_n, x_n)`.
#[derive(Debug)]
pub struct StepContext<'a> {
    pub model: &'a ModelInstance,
    pub t: f64,
    pub dt: f64,
    pub db: &'a [f64],
    pub bundle: &'a DerivativeBundle,
    pub directions: &'a [Vec<f64>],
}

/// Why a hook stopped a path.
#[derive(Debug, Clone, PartialEq)]
pub enum StepFault {
    /// The path is excluded and counted against the blow-up budget.
    Diverged,
    /// The whole run fails.
    Fatal(Error),
}

/// Per-step update of the auxiliary processes (`ν`, accumulators).
/// Called before `x` is advanced.
pub trait StepHook: Sync {
    type Scratch: Send;

    fn scratch(&self, dim: usize) -> Self::Scratch;

    fn needs_bundle(&self) -> bool {
        true
    }

    fn step(&self, ctx: &StepContext<'_>, state: &mut PathState, scratch: &mut Self::Scratch) -> Result<(), StepFault>;
}

/// Plain simulation, no auxiliary processes.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl StepHook for NoHook {
    type Scratch = ();

    fn scratch(&self, _dim: usize) {}

    fn needs_bundle(&self) -> bool {
        false
    }

    fn step(&self, _: &StepContext<'_>, _: &mut PathState, _: &mut ()) -> Result<(), StepFault> {
        Ok(())
    }
}

/// Ensemble configuration.
#[derive(Debug, Clone)]
pub struct PathConfig<'a> {
    pub model: &'a ModelInstance,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Perturbation directions in parameter space, one accumulator each.
    pub directions: Vec<Vec<f64>>,
    /// Store `x` every `stride` steps (plus `x_0`).
    pub record_stride: Option<usize>,
    pub execution: Execution,
}

impl<'a> PathConfig<'a> {
    pub fn new(model: &'a ModelInstance, dt: f64, n_steps: usize, n_paths: usize, seed: u64) -> Self {
        Self { model, dt, n_steps, n_paths, seed, directions: Vec::new(), record_stride: None, execution: Execution::Parallel }
    }

    pub fn with_directions(mut self, directions: Vec<Vec<f64>>) -> Self {
        self.directions = directions;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_recording(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride.max(1));
        self
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 || self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_steps and n_paths must be at least 1".into()));
        }
        if let Some(d) = self.directions.iter().find(|d| d.len() != self.model.n_params()) {
            return Err(Error::InvalidConfig(format!(
                "direction has length {}, model has {} parameters",
                d.len(),
                self.model.n_params()
            )));
        }
        Ok(())
    }
}

/// Surviving paths of an ensemble, in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub paths: Vec<PathState>,
    /// Recorded states, flat `[n_records × M]` per surviving path.
    pub trajectories: Option<Vec<Vec<f64>>>,
    pub n_requested: usize,
    pub n_excluded: usize,
    pub dim: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub directions: Vec<Vec<f64>>,
}

impl PathEnsemble {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Coordinate `i` of every final state.
    pub fn final_coord(&self, i: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.x[i]).collect()
    }

    /// Final states, flat `[L × M]`.
    pub fn final_states(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.x.iter().copied()).collect()
    }

    /// Component `i` of every final `ν`.
    pub fn nu_coord(&self, i: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.nu[i]).collect()
    }

    /// Accumulator `d` of every path.
    pub fn acc(&self, d: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p.acc[d]).collect()
    }
}

struct Worker<S> {
    bundle: DerivativeBundle,
    db: Vec<f64>,
    hook: S,
}

enum PathOutcome {
    Kept(PathState, Option<Vec<f64>>),
    Excluded,
}

fn run_path<H: StepHook>(cfg: &PathConfig<'_>, hook: &H, w: &mut Worker<H::Scratch>, index: usize) -> Result<PathOutcome> {
    let model = cfg.model;
    let m = model.dim();
    let gamma = model.gamma();
    let mut x0 = vec![0.0; m];
    model.init.sample(gamma, &mut initial_rng(cfg.seed, index as u64), &mut x0);
    let mut nu = vec![0.0; m];
    model.init.score(gamma, &x0, &mut nu);
    let acc = cfg.directions.iter().map(|d| model.init.delta_log_h0(gamma, &x0, d)).collect();
    let mut state = PathState { path_index: index, t: 0.0, x: x0.clone(), x0, nu, acc };

    let mut traj = cfg.record_stride.map(|s| {
        let mut v = Vec::with_capacity((cfg.n_steps / s + 1) * m);
        v.extend_from_slice(&state.x);
        v
    });
    let mut stream = IncrementStream::new(cfg.seed, index as u64, cfg.dt);
    let needs_bundle = hook.needs_bundle();
    for n in 0..cfg.n_steps {
        let t = n as f64 * cfg.dt;
        stream.fill(&mut w.db);
        if needs_bundle {
            model.eval_bundle_into(t, &state.x, &cfg.directions, &mut w.bundle)?;
            let ctx = StepContext { model, t, dt: cfg.dt, db: &w.db, bundle: &w.bundle, directions: &cfg.directions };
            match hook.step(&ctx, &mut state, &mut w.hook) {
                Ok(()) => {}
                Err(StepFault::Diverged) => return Ok(PathOutcome::Excluded),
                Err(StepFault::Fatal(e)) => return Err(e),
            }
        } else {
            model.drift(t, &state.x, &mut w.bundle.drift);
            w.bundle.sigma = model.sigma(t, &state.x);
            if !(w.bundle.sigma > 0.0) {
                return Err(Error::NonPositiveSigma { sigma: w.bundle.sigma, t });
            }
        }
        advance(&mut state.x, &w.bundle.drift, w.bundle.sigma, &w.db, cfg.dt);
        state.t = (n + 1) as f64 * cfg.dt;
        if blown_up(&state.x) {
            return Ok(PathOutcome::Excluded);
        }
        if let (Some(tr), Some(s)) = (traj.as_mut(), cfg.record_stride) {
            if (n + 1) % s == 0 {
                tr.extend_from_slice(&state.x);
            }
        }
    }
    Ok(PathOutcome::Kept(state, traj))
}

/// Simulates `n_paths` independent paths, calling `hook` at every step.
///
/// Fails when more than 1% of the paths blow up or a hook reports a fatal
/// error. The result does not depend on the worker count.
pub fn simulate_ensemble<H: StepHook>(cfg: &PathConfig<'_>, hook: &H) -> Result<PathEnsemble> {
    cfg.validate()?;
    let m = cfg.model.dim();
    let n_dirs = cfg.directions.len();
    let outcomes = par::map_indexed(
        cfg.execution,
        cfg.n_paths,
        || Worker { bundle: DerivativeBundle::new(m, n_dirs), db: vec![0.0; m], hook: hook.scratch(m) },
        |w, i| run_path(cfg, hook, w, i),
    );
    let mut paths = Vec::with_capacity(cfg.n_paths);
    let mut trajectories = cfg.record_stride.map(|_| Vec::with_capacity(cfg.n_paths));
    let mut n_excluded = 0;
    for outcome in outcomes {
        match outcome? {
            PathOutcome::Kept(state, traj) => {
                paths.push(state);
                if let (Some(all), Some(tr)) = (trajectories.as_mut(), traj) {
                    all.push(tr);
                }
            }
            PathOutcome::Excluded => n_excluded += 1,
        }
    }
    if n_excluded as f64 > BLOW_UP_BUDGET * cfg.n_paths as f64 {
        return Err(Error::BlowUpBudget { excluded: n_excluded, total: cfg.n_paths });
    }
    Ok(PathEnsemble {
        paths,
        trajectories,
        n_requested: cfg.n_paths,
        n_excluded,
        dim: m,
        dt: cfg.dt,
        n_steps: cfg.n_steps,
        directions: cfg.directions.clone(),
    })
}
