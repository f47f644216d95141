//! Built-in model families with closed-form derivative bundles.

use super::{DeltaTerms, DerivativeBundle, SdeFamily};

/// Ornstein–Uhlenbeck process `dx = (γ⁰ − x) dt + (σ₀ + γ¹) dB`.
#[derive(Debug, Clone)]
pub struct Ou {
    dim: usize,
    sigma0: f64,
}

impl Ou {
    pub fn new(dim: usize, sigma0: f64) -> Self {
        Self { dim, sigma0 }
    }
}

impl SdeFamily for Ou {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        2
    }

    fn drift(&self, _t: f64, x: &[f64], gamma: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = gamma[0] - xi;
        }
    }

    fn sigma(&self, _t: f64, _x: &[f64], gamma: &[f64]) -> f64 {
        self.sigma0 + gamma[1]
    }

    fn spatial_derivatives(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
        let m = self.dim;
        out.clear_spatial();
        self.drift(t, x, gamma, &mut out.drift);
        for i in 0..m {
            out.jac_drift[i * m + i] = -1.0;
        }
        out.div_drift = -(m as f64);
        out.sigma = self.sigma(t, x, gamma);
    }

    fn param_partial(&self, _t: f64, _x: &[f64], _gamma: &[f64], j: usize, out: &mut DeltaTerms) {
        match j {
            0 => out.delta_drift.iter_mut().for_each(|v| *v = 1.0),
            1 => out.delta_sigma = 1.0,
            _ => {}
        }
    }

    fn is_analytic(&self) -> bool {
        true
    }
}

/// One-dimensional multiplicative-noise process with a time-dependent rate:
/// `dx = β_t(γ − x) dt + √β_t (0.5 + exp(−(γ − x)²)) dB`, `β_t = 1 + 3t`.
#[derive(Debug, Clone, Copy)]
pub struct Mult1d;

impl Mult1d {
    fn beta(t: f64) -> f64 {
        1.0 + 3.0 * t
    }
}

impl SdeFamily for Mult1d {
    fn dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut [f64]) {
        out[0] = Self::beta(t) * (gamma[0] - x[0]);
    }

    fn sigma(&self, t: f64, x: &[f64], gamma: &[f64]) -> f64 {
        let u = x[0] - gamma[0];
        Self::beta(t).sqrt() * (0.5 + (-u * u).exp())
    }

    fn spatial_derivatives(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
        let beta = Self::beta(t);
        let s = beta.sqrt();
        let u = x[0] - gamma[0];
        let e = (-u * u).exp();
        out.drift[0] = -beta * u;
        out.jac_drift[0] = -beta;
        out.div_drift = -beta;
        out.grad_div_drift[0] = 0.0;
        out.sigma = s * (0.5 + e);
        out.grad_sigma[0] = -2.0 * s * u * e;
        out.hess_sigma[0] = s * (4.0 * u * u - 2.0) * e;
        out.lap_sigma = out.hess_sigma[0];
    }

    fn param_partial(&self, t: f64, x: &[f64], gamma: &[f64], j: usize, out: &mut DeltaTerms) {
        if j != 0 {
            return;
        }
        let beta = Self::beta(t);
        let s = beta.sqrt();
        let u = x[0] - gamma[0];
        let e = (-u * u).exp();
        out.delta_drift[0] = beta;
        out.div_delta_drift = 0.0;
        out.delta_sigma = 2.0 * s * u * e;
        out.grad_delta_sigma[0] = 2.0 * s * (1.0 - 2.0 * u * u) * e;
    }

    fn is_analytic(&self) -> bool {
        true
    }

    fn is_autonomous(&self) -> bool {
        false
    }
}

/// One-dimensional two-parameter prototype for the diffusion-model fit:
/// `dx = (γ⁰ − x) dt + (0.5 + exp(−(x − γ¹)²)) dB`.
#[derive(Debug, Clone, Copy)]
pub struct DiffProto1d;

impl SdeFamily for DiffProto1d {
    fn dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        2
    }

    fn drift(&self, _t: f64, x: &[f64], gamma: &[f64], out: &mut [f64]) {
        out[0] = gamma[0] - x[0];
    }

    fn sigma(&self, _t: f64, x: &[f64], gamma: &[f64]) -> f64 {
        let u = x[0] - gamma[1];
        0.5 + (-u * u).exp()
    }

    fn spatial_derivatives(&self, _t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
        let u = x[0] - gamma[1];
        let e = (-u * u).exp();
        out.drift[0] = gamma[0] - x[0];
        out.jac_drift[0] = -1.0;
        out.div_drift = -1.0;
        out.grad_div_drift[0] = 0.0;
        out.sigma = 0.5 + e;
        out.grad_sigma[0] = -2.0 * u * e;
        out.hess_sigma[0] = (4.0 * u * u - 2.0) * e;
        out.lap_sigma = out.hess_sigma[0];
    }

    fn param_partial(&self, _t: f64, x: &[f64], gamma: &[f64], j: usize, out: &mut DeltaTerms) {
        match j {
            0 => out.delta_drift[0] = 1.0,
            1 => {
                let u = x[0] - gamma[1];
                let e = (-u * u).exp();
                out.delta_sigma = 2.0 * u * e;
                out.grad_delta_sigma[0] = 2.0 * (1.0 - 2.0 * u * u) * e;
            }
            _ => {}
        }
    }

    fn is_analytic(&self) -> bool {
        true
    }
}

/// Where the Lorenz-96 forcing comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LorenzForcing {
    /// Forcing `8 + γ⁰` in every coordinate; `σ` centred at `γ⁰`.
    EightPlusGamma,
    /// Forcing `γ^i` in coordinate `i`; `σ` centred at `γ^M`.
    PerCoordinate,
}

/// Lorenz-96 with a quadratic confinement term and multiplicative noise:
/// `dx^i = ((x^{i+1} − x^{i−2}) x^{i−1} − x^i + f_i − 0.01 (x^i)²) dt + σ dB^i`,
/// `σ = 0.5 + exp(−|x − c𝟙|²/M)`. Indices are cyclic.
#[derive(Debug, Clone)]
pub struct LorenzFamily {
    dim: usize,
    forcing: LorenzForcing,
}

impl LorenzFamily {
    pub fn new(dim: usize, forcing: LorenzForcing) -> Self {
        assert!(dim >= 4, "Lorenz-96 needs at least four coordinates");
        Self { dim, forcing }
    }

    fn center_index(&self) -> usize {
        match self.forcing {
            LorenzForcing::EightPlusGamma => 0,
            LorenzForcing::PerCoordinate => self.dim,
        }
    }

    fn forcing(&self, i: usize, gamma: &[f64]) -> f64 {
        match self.forcing {
            LorenzForcing::EightPlusGamma => 8.0 + gamma[0],
            LorenzForcing::PerCoordinate => gamma[i],
        }
    }

    #[inline]
    fn neighbours(&self, i: usize) -> (usize, usize, usize) {
        let m = self.dim;
        ((i + 1) % m, (i + m - 1) % m, (i + m - 2) % m)
    }

    /// Returns `(exp(−|u|²/M), Σu, |u|²)` with `u = x − c𝟙`.
    fn sigma_parts(&self, x: &[f64], gamma: &[f64]) -> (f64, f64, f64) {
        let c = gamma[self.center_index()];
        let (mut s, mut q) = (0.0, 0.0);
        for xi in x {
            let u = xi - c;
            s += u;
            q += u * u;
        }
        ((-q / self.dim as f64).exp(), s, q)
    }
}

impl SdeFamily for LorenzFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.center_index() + 1
    }

    fn drift(&self, _t: f64, x: &[f64], gamma: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let (ip, im, imm) = self.neighbours(i);
            out[i] = (x[ip] - x[imm]) * x[im] - x[i] + self.forcing(i, gamma) - 0.01 * x[i] * x[i];
        }
    }

    fn sigma(&self, _t: f64, x: &[f64], gamma: &[f64]) -> f64 {
        0.5 + self.sigma_parts(x, gamma).0
    }

    fn spatial_derivatives(&self, t: f64, x: &[f64], gamma: &[f64], out: &mut DerivativeBundle) {
        let m = self.dim;
        let mf = m as f64;
        out.clear_spatial();
        self.drift(t, x, gamma, &mut out.drift);
        let mut div = 0.0;
        for i in 0..m {
            let (ip, im, imm) = self.neighbours(i);
            let row = &mut out.jac_drift[i * m..(i + 1) * m];
            row[ip] += x[im];
            row[imm] -= x[im];
            row[im] += x[ip] - x[imm];
            row[i] += -1.0 - 0.02 * x[i];
            div += -1.0 - 0.02 * x[i];
            out.grad_div_drift[i] = -0.02;
        }
        out.div_drift = div;

        let c = gamma[self.center_index()];
        let (e, _, q) = self.sigma_parts(x, gamma);
        out.sigma = 0.5 + e;
        for i in 0..m {
            let ui = x[i] - c;
            out.grad_sigma[i] = -2.0 / mf * e * ui;
            for j in 0..m {
                let uj = x[j] - c;
                let mut h = 4.0 / (mf * mf) * ui * uj;
                if i == j {
                    h -= 2.0 / mf;
                }
                out.hess_sigma[i * m + j] = e * h;
            }
        }
        out.lap_sigma = e * (4.0 * q / (mf * mf) - 2.0);
    }

    fn param_partial(&self, _t: f64, x: &[f64], gamma: &[f64], j: usize, out: &mut DeltaTerms) {
        let m = self.dim;
        let mf = m as f64;
        match self.forcing {
            LorenzForcing::EightPlusGamma if j == 0 => out.delta_drift.iter_mut().for_each(|v| *v = 1.0),
            LorenzForcing::PerCoordinate if j < m => out.delta_drift[j] = 1.0,
            _ => {}
        }
        if j == self.center_index() {
            let c = gamma[j];
            let (e, s, _) = self.sigma_parts(x, gamma);
            out.delta_sigma = 2.0 / mf * e * s;
            for (k, g) in out.grad_delta_sigma.iter_mut().enumerate() {
                *g = 2.0 / mf * e * (1.0 - 2.0 / mf * (x[k] - c) * s);
            }
        }
    }

    fn is_analytic(&self) -> bool {
        true
    }
}
