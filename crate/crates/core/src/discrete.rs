//! Quantities of the one-step map `g_b(x) = x + F(x)Δt + σ(x)ΔB` of a
//! discretized SDE: its Jacobian `g_* = I + ∇F Δt + ΔB ∇σᵀ`, the covector
//! `div g_* = ∇ log|g_*|` and the parameter derivative `δ log|g_*|`.
//!
//! Each of the last two comes in an exact flavour (finite differences of the
//! log-determinant) and the leading-order expansion used in continuous time.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};
use crate::model::{DeltaTerms, DerivativeBundle, ModelInstance};

/// Step in `γ` for the exact `δ log|g_*|`.
pub const DELTA_LOG_G_STEP: f64 = 1e-6;
/// Relative step in `x` for the exact `∇ log|g_*|`.
pub const DIV_G_STEP: f64 = 1e-5;

/// How `∇ log|g_*|` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DivGMode {
    /// `∇div F Δt + ∇²σ ΔB − ∇²σ ∇σ Δt`
    #[default]
    Approximate,
    /// Central differences of `log|g_*(x)|` in `x`.
    Exact,
}

/// How `δ log|g_*|` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaLogGMode {
    /// `div δF Δt + ∇δσ·ΔB − ∇σ·∇δσ Δt`
    Approximate,
    /// Central differences of `log|g^γ_*|` in `γ`.
    #[default]
    Exact,
}

/// LU factorizations of `g_*` and `g_*ᵀ`.
pub struct OneStepJacobian {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lu_t: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    log_abs_det: f64,
}

impl std::fmt::Debug for OneStepJacobian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OneStepJacobian").field("log_abs_det", &self.log_abs_det).finish()
    }
}

/// `I + ∇F Δt + ΔB ∇σᵀ`, row-major.
pub fn jacobian_matrix(jac_drift: &[f64], grad_sigma: &[f64], db: &[f64], dt: f64) -> DMatrix<f64> {
    let m = db.len();
    DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id + jac_drift[i * m + j] * dt + db[i] * grad_sigma[j]
    })
}

fn log_abs_det(g: &DMatrix<f64>) -> Result<f64> {
    let det = g.clone().lu().determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::SingularJacobian);
    }
    Ok(det.abs().ln())
}

impl OneStepJacobian {
    pub fn new(jac_drift: &[f64], grad_sigma: &[f64], db: &[f64], dt: f64) -> Result<Self> {
        let g = jacobian_matrix(jac_drift, grad_sigma, db, dt);
        let gt = g.transpose();
        let lu = g.lu();
        let det = lu.determinant();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::SingularJacobian);
        }
        Ok(Self { lu, lu_t: gt.lu(), log_abs_det: det.abs().ln() })
    }

    pub fn from_bundle(b: &DerivativeBundle, db: &[f64], dt: f64) -> Result<Self> {
        Self::new(&b.jac_drift, &b.grad_sigma, db, dt)
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// `g_*⁻¹ v`
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let r = self.lu.solve(&DVector::from_column_slice(v)).ok_or(Error::SingularJacobian)?;
        Ok(r.as_slice().to_vec())
    }

    /// `g_*⁻ᵀ v`, the pullback of a covector.
    pub fn solve_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        let r = self.lu_t.solve(&DVector::from_column_slice(v)).ok_or(Error::SingularJacobian)?;
        Ok(r.as_slice().to_vec())
    }
}

/// Leading-order `∇ log|g_*| ≈ ∇div F Δt + ∇²σ ΔB − ∇²σ ∇σ Δt`.
pub fn div_g_approx(b: &DerivativeBundle, db: &[f64], dt: f64, out: &mut [f64]) {
    let m = db.len();
    for i in 0..m {
        let row = &b.hess_sigma[i * m..(i + 1) * m];
        let h_db: f64 = row.iter().zip(db).map(|(h, d)| h * d).sum();
        let h_gs: f64 = row.iter().zip(&b.grad_sigma).map(|(h, g)| h * g).sum();
        out[i] = b.grad_div_drift[i] * dt + h_db - h_gs * dt;
    }
}

/// `∇ log|g_*(x)|` by central differences, with `ΔB` held fixed.
pub fn div_g_exact(model: &ModelInstance, t: f64, x: &[f64], db: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = x.len();
    let mut y = x.to_vec();
    let mut out = vec![0.0; m];
    let mut b = DerivativeBundle::new(m, 0);
    for k in 0..m {
        let h = DIV_G_STEP * (1.0 + x[k].abs());
        y[k] = x[k] + h;
        model.eval_bundle_into(t, &y, &[], &mut b)?;
        let lp = log_abs_det(&jacobian_matrix(&b.jac_drift, &b.grad_sigma, db, dt))?;
        y[k] = x[k] - h;
        model.eval_bundle_into(t, &y, &[], &mut b)?;
        let lm = log_abs_det(&jacobian_matrix(&b.jac_drift, &b.grad_sigma, db, dt))?;
        y[k] = x[k];
        out[k] = (lp - lm) / (2.0 * h);
    }
    Ok(out)
}

/// Leading-order `δ log|g_*| ≈ div δF Δt + ∇δσ·ΔB − ∇σ·∇δσ Δt`.
pub fn delta_log_g_approx(b: &DerivativeBundle, delta: &DeltaTerms, db: &[f64], dt: f64) -> f64 {
    let gd_db: f64 = delta.grad_delta_sigma.iter().zip(db).map(|(a, c)| a * c).sum();
    let gs_gd: f64 = b.grad_sigma.iter().zip(&delta.grad_delta_sigma).map(|(a, c)| a * c).sum();
    delta.div_delta_drift * dt + gd_db - gs_gd * dt
}

/// `δ log|g^γ_*(x)|` along `dir` by central differences in `γ`.
pub fn delta_log_g_exact(model: &ModelInstance, t: f64, x: &[f64], dir: &[f64], db: &[f64], dt: f64) -> Result<f64> {
    let eps = DELTA_LOG_G_STEP;
    let m = x.len();
    let mut b = DerivativeBundle::new(m, 0);
    let mut side = |s: f64| -> Result<f64> {
        let gamma: Vec<f64> = model.gamma().iter().zip(dir).map(|(g, d)| g + s * d).collect();
        let shifted = model.with_gamma(gamma);
        shifted.eval_bundle_into(t, x, &[], &mut b)?;
        log_abs_det(&jacobian_matrix(&b.jac_drift, &b.grad_sigma, db, dt))
    };
    let lp = side(eps)?;
    let lm = side(-eps)?;
    Ok((lp - lm) / (2.0 * eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{get_model, ModelParams};

    #[test]
    fn solves_and_transpose_solves() {
        let jac = [0.0, 1.0, -2.0, 0.5];
        let gs = [0.3, -0.1];
        let db = [0.2, 0.1];
        let dt = 0.1;
        let g = OneStepJacobian::new(&jac, &gs, &db, dt).unwrap();
        let mat = jacobian_matrix(&jac, &gs, &db, dt);
        let v = [1.0, -1.0];
        let x = g.solve(&v).unwrap();
        let back = &mat * DVector::from_column_slice(&x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] + 1.0).abs() < 1e-14);
        let y = g.solve_transpose(&v).unwrap();
        let back = mat.transpose() * DVector::from_column_slice(&y);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        // 1 + (-10)(0.1) = 0
        assert!(matches!(OneStepJacobian::new(&[-10.0], &[0.0], &[0.0], 0.1), Err(Error::SingularJacobian)));
    }

    #[test]
    fn exact_and_approximate_agree_to_leading_order() {
        let m = get_model("mult1d", ModelParams::new(vec![0.0], 1)).unwrap();
        let x = [0.4];
        let dt: f64 = 1e-4;
        let db = [0.5 * dt.sqrt()];
        let b = m.eval_bundle(0.0, &x, &[vec![1.0]]).unwrap();
        let mut approx = [0.0];
        div_g_approx(&b, &db, dt, &mut approx);
        let exact = div_g_exact(&m, 0.0, &x, &db, dt).unwrap();
        // the neglected terms are relatively O(|∇σ ΔB|)
        let rel = 3.0 * b.grad_sigma[0].abs() * db[0].abs();
        assert!((approx[0] - exact[0]).abs() < rel * approx[0].abs(), "{approx:?} {exact:?}");
        let da = delta_log_g_approx(&b, &b.deltas[0], &db, dt);
        let de = delta_log_g_exact(&m, 0.0, &x, &[1.0], &db, dt).unwrap();
        assert!((da - de).abs() < rel * da.abs(), "{da} {de}");
    }
}
