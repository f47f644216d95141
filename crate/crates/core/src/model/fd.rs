//! Central finite-difference derivative bundles. Used as the fallback for
//! families without closed forms and as the oracle that checks the ones with.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DeltaTerms, DerivativeBundle, ModelInstance, SdeFamily};

/// Relative step for first derivatives in `x`.
pub const STEP_X: f64 = 1e-5;
/// Step for first derivatives in `γ`.
pub const STEP_GAMMA: f64 = 1e-6;
/// Relative step for second and mixed derivatives.
pub const STEP_SECOND: f64 = 1e-4;

/// Largest allowed error in [`fd_derivative_check`].
pub const CHECK_TOLERANCE: f64 = 1e-3;

fn step(base: f64, v: f64) -> f64 {
    base * (1.0 + v.abs())
}

fn drift_at<F: SdeFamily + ?Sized>(fam: &F, t: f64, x: &[f64], gamma: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    fam.drift(t, x, gamma, &mut out);
    out
}

/// Mixed/second derivative of a scalar function of `x` along coordinates `i, k`.
fn second<G: Fn(&[f64]) -> f64>(g: &G, x: &[f64], i: usize, k: usize) -> f64 {
    let hi = step(STEP_SECOND, x[i]);
    let mut y = x.to_vec();
    if i == k {
        y[i] = x[i] + hi;
        let p = g(&y);
        y[i] = x[i] - hi;
        let m = g(&y);
        (p - 2.0 * g(x) + m) / (hi * hi)
    } else {
        let hk = step(STEP_SECOND, x[k]);
        let mut eval = |di: f64, dk: f64| {
            y[i] = x[i] + di;
            y[k] = x[k] + dk;
            g(&y)
        };
        (eval(hi, hk) - eval(hi, -hk) - eval(-hi, hk) + eval(-hi, -hk)) / (4.0 * hi * hk)
    }
}

/// Fills the spatial fields of `out` by central differences.
pub fn fd_spatial<F: SdeFamily + ?Sized>(fam: &F, t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
    let m = x.len();
    fam.drift(t, x, gamma, &mut out.drift);
    out.sigma = fam.sigma(t, x, gamma);

    let mut y = x.to_vec();
    for j in 0..m {
        let h = step(STEP_X, x[j]);
        y[j] = x[j] + h;
        let fp = drift_at(fam, t, &y, gamma);
        let sp = fam.sigma(t, &y, gamma);
        y[j] = x[j] - h;
        let fm = drift_at(fam, t, &y, gamma);
        let sm = fam.sigma(t, &y, gamma);
        y[j] = x[j];
        for i in 0..m {
            out.jac_drift[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
        out.grad_sigma[j] = (sp - sm) / (2.0 * h);
    }
    out.div_drift = (0..m).map(|i| out.jac_drift[i * m + i]).sum();

    let sigma = |z: &[f64]| fam.sigma(t, z, gamma);
    for k in 0..m {
        let mut acc = 0.0;
        for i in 0..m {
            let fi = |z: &[f64]| drift_at(fam, t, z, gamma)[i];
            acc += second(&fi, x, i, k);
        }
        out.grad_div_drift[k] = acc;
        for i in 0..m {
            out.hess_sigma[i * m + k] = if i <= k { second(&sigma, x, i, k) } else { out.hess_sigma[k * m + i] };
        }
    }
    for k in 0..m {
        for i in (k + 1)..m {
            out.hess_sigma[i * m + k] = out.hess_sigma[k * m + i];
        }
    }
    out.lap_sigma = (0..m).map(|i| out.hess_sigma[i * m + i]).sum();
}

fn shifted(gamma: &[f64], j: usize, by: f64) -> Vec<f64> {
    let mut g = gamma.to_vec();
    g[j] += by;
    g
}

/// Fills `out` with derivatives along parameter coordinate `j` by central
/// differences.
pub fn fd_param_partial<F: SdeFamily + ?Sized>(fam: &F, t: f64, x: &[f64], gamma: &[f64], j: usize, out: &mut DeltaTerms) {
    let m = x.len();
    let eps = STEP_GAMMA;
    let (gp, gm) = (shifted(gamma, j, eps), shifted(gamma, j, -eps));
    let fp = drift_at(fam, t, x, &gp);
    let fm = drift_at(fam, t, x, &gm);
    for i in 0..m {
        out.delta_drift[i] = (fp[i] - fm[i]) / (2.0 * eps);
    }
    out.delta_sigma = (fam.sigma(t, x, &gp) - fam.sigma(t, x, &gm)) / (2.0 * eps);

    // mixed x/γ derivatives
    let e2 = STEP_SECOND;
    let (gp2, gm2) = (shifted(gamma, j, e2), shifted(gamma, j, -e2));
    let mut y = x.to_vec();
    let mut div = 0.0;
    for k in 0..m {
        let h = step(STEP_SECOND, x[k]);
        y[k] = x[k] + h;
        let fpp = drift_at(fam, t, &y, &gp2)[k];
        let fpm = drift_at(fam, t, &y, &gm2)[k];
        let spp = fam.sigma(t, &y, &gp2);
        let spm = fam.sigma(t, &y, &gm2);
        y[k] = x[k] - h;
        let fmp = drift_at(fam, t, &y, &gp2)[k];
        let fmm = drift_at(fam, t, &y, &gm2)[k];
        let smp = fam.sigma(t, &y, &gp2);
        let smm = fam.sigma(t, &y, &gm2);
        y[k] = x[k];
        div += (fpp - fpm - fmp + fmm) / (4.0 * h * e2);
        out.grad_delta_sigma[k] = (spp - spm - smp + smm) / (4.0 * h * e2);
    }
    out.div_delta_drift = div;
}

/// Full finite-difference bundle, bypassing any closed forms the family has.
pub fn fd_bundle(model: &ModelInstance, t: f64, x: &[f64], dirs: &[Vec<f64>]) -> DerivativeBundle {
    let fam = model.family.as_ref();
    let gamma = model.gamma();
    let m = model.dim();
    let mut out = DerivativeBundle::new(m, dirs.len());
    fd_spatial(fam, t, x, gamma, &mut out);
    let mut p = DeltaTerms::zeros(m);
    for (dir, delta) in dirs.iter().zip(out.deltas.iter_mut()) {
        for (j, &w) in dir.iter().enumerate().take(fam.n_params()) {
            if w != 0.0 {
                p.clear();
                fd_param_partial(fam, t, x, gamma, j, &mut p);
                delta.add_scaled(w, &p);
            }
        }
    }
    out
}

/// Largest error of each bundle field over the sampled points.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub fields: Vec<(&'static str, f64)>,
    /// `|Δσ − tr ∇²σ|` relative to `max(1, |Δσ|)`.
    pub laplacian_trace: f64,
    /// Largest asymmetry of `∇²σ`.
    pub hessian_asymmetry: f64,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.fields.iter().map(|f| f.1).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() <= CHECK_TOLERANCE
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Compares the model's bundle against [`fd_bundle`] at `n_samples` random
/// points `t ∈ [0, 1)`, `x ~ N(γ_c, 4I)`, for every coordinate direction.
///
/// Errors are `|a − b| / max(1, |b|)` with `b` the finite-difference value.
pub fn fd_derivative_check(model: &ModelInstance, n_samples: usize, seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.dim();
    let dirs: Vec<Vec<f64>> = (0..model.family.n_params()).map(|j| model.coordinate_direction(j)).collect();
    let names = [
        "drift", "jac_drift", "div_drift", "grad_div_drift", "sigma", "grad_sigma", "hess_sigma", "lap_sigma",
        "delta_drift", "div_delta_drift", "delta_sigma", "grad_delta_sigma",
    ];
    let mut worst = [0.0f64; 12];
    let (mut lap_trace, mut asym) = (0.0f64, 0.0f64);
    for _ in 0..n_samples {
        let t: f64 = rng.random::<f64>();
        let x: Vec<f64> = (0..m).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let Ok(a) = model.eval_bundle(t, &x, &dirs) else { continue };
        let b = fd_bundle(model, t, &x, &dirs);
        let errs = [
            max_rel(&a.drift, &b.drift),
            max_rel(&a.jac_drift, &b.jac_drift),
            rel_err(a.div_drift, b.div_drift),
            max_rel(&a.grad_div_drift, &b.grad_div_drift),
            rel_err(a.sigma, b.sigma),
            max_rel(&a.grad_sigma, &b.grad_sigma),
            max_rel(&a.hess_sigma, &b.hess_sigma),
            rel_err(a.lap_sigma, b.lap_sigma),
            a.deltas.iter().zip(&b.deltas).map(|(p, q)| max_rel(&p.delta_drift, &q.delta_drift)).fold(0.0, f64::max),
            a.deltas.iter().zip(&b.deltas).map(|(p, q)| rel_err(p.div_delta_drift, q.div_delta_drift)).fold(0.0, f64::max),
            a.deltas.iter().zip(&b.deltas).map(|(p, q)| rel_err(p.delta_sigma, q.delta_sigma)).fold(0.0, f64::max),
            a.deltas.iter().zip(&b.deltas).map(|(p, q)| max_rel(&p.grad_delta_sigma, &q.grad_delta_sigma)).fold(0.0, f64::max),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        let trace: f64 = (0..m).map(|i| a.hess_sigma[i * m + i]).sum();
        lap_trace = lap_trace.max(rel_err(trace, a.lap_sigma));
        for i in 0..m {
            for j in 0..i {
                asym = asym.max((a.hess_sigma[i * m + j] - a.hess_sigma[j * m + i]).abs());
            }
        }
    }
    FdReport { fields: names.iter().copied().zip(worst).collect(), laplacian_trace: lap_trace, hessian_asymmetry: asym }
}
