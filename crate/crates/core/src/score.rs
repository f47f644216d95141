//! The forward covector process `ν` whose conditional expectation given the
//! current state is the score `∇ log h_t`.

use crate::conditioning::{bin_1d, BinSpec, ConditionalTable};
use crate::discrete::OneStepJacobian;
use crate::error::{Error, Result};
use crate::model::{DerivativeBundle, InitialDensity};
use crate::simulate::PathEnsemble;

/// Constant damping rate `α ≥ 0`. In continuous time it has units of 1/time;
/// the matching weight of the discrete recursion is `αΔt`.
///
/// Larger `α` forgets the initial score faster; it should exceed the
/// fastest contraction rate of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    alpha: f64,
}

impl AlphaSchedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be a non-negative number, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn rate(&self) -> f64 {
        self.alpha
    }

    pub fn discrete_weight(&self, dt: f64) -> f64 {
        self.alpha * dt
    }
}

/// `ν_0 = ∇ log h_0(x_0)`.
pub fn init_nu(x0: &[f64], init: &InitialDensity, gamma: &[f64]) -> Vec<f64> {
    let mut nu = vec![0.0; x0.len()];
    init.score(gamma, x0, &mut nu);
    nu
}

/// Euler step of
/// `dν = ((∇σ∇σᵀ − ∇Fᵀ − α)ν − ∇div F + ∇²σ∇σ + ∇σΔσ) dt − (∇σνᵀ + ∇²σ + α/σ) dB`.
///
/// `work` must have length `M`.
pub fn step_nu_continuous(nu: &mut [f64], b: &DerivativeBundle, db: &[f64], dt: f64, alpha: f64, work: &mut [f64]) {
    let m = nu.len();
    let gs_nu: f64 = b.grad_sigma.iter().zip(nu.iter()).map(|(g, v)| g * v).sum();
    let nu_db: f64 = nu.iter().zip(db).map(|(v, d)| v * d).sum();
    let inv_sigma = 1.0 / b.sigma;
    for i in 0..m {
        let mut jt_nu = 0.0;
        for j in 0..m {
            jt_nu += b.jac_drift[j * m + i] * nu[j];
        }
        let row = &b.hess_sigma[i * m..(i + 1) * m];
        let (mut h_gs, mut h_db) = (0.0, 0.0);
        for j in 0..m {
            h_gs += row[j] * b.grad_sigma[j];
            h_db += row[j] * db[j];
        }
        let gi = b.grad_sigma[i];
        let drift = gi * gs_nu - jt_nu - alpha * nu[i] - b.grad_div_drift[i] + h_gs + gi * b.lap_sigma;
        let noise = gi * nu_db + h_db + alpha * inv_sigma * db[i];
        work[i] = drift * dt - noise;
    }
    for (v, w) in nu.iter_mut().zip(work.iter()) {
        *v += w;
    }
}

/// Exact discrete recursion
/// `ν' = (1 − w) g_*⁻ᵀ(ν − div g_*) + w ∇log k(ΔB)/σ`, `∇log k(ΔB) = −ΔB/Δt`.
pub fn step_nu_discrete(
    nu: &mut [f64],
    jac: &OneStepJacobian,
    div_g: &[f64],
    db: &[f64],
    dt: f64,
    sigma: f64,
    weight: f64,
) -> Result<()> {
    let rhs: Vec<f64> = nu.iter().zip(div_g).map(|(v, d)| v - d).collect();
    let pulled = jac.solve_transpose(&rhs)?;
    for i in 0..nu.len() {
        nu[i] = (1.0 - weight) * pulled[i] - weight * db[i] / (dt * sigma);
    }
    Ok(())
}

/// Binned `E[ν_T^i | x_T^i]` over the ensemble.
pub fn estimate_score(ensemble: &PathEnsemble, bins: &BinSpec, coord: usize) -> ConditionalTable {
    bin_1d(&ensemble.final_coord(coord), &ensemble.nu_coord(coord), bins)
}
