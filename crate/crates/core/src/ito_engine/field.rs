use rayon::prelude::*;

use super::{ItoError, PathBundle};

/// `1/γ_t` and `A_t` of an exponential forward performance on every
/// simulated path, sampled on the bundle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPaths {
    pub gamma0: f64,
    pub a0: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    inv_gamma: Vec<f64>,
    a: Vec<f64>,
}

impl FieldPaths {
    pub fn inv_gamma(&self, path: usize) -> &[f64] {
        let n = self.n_steps + 1;
        &self.inv_gamma[path * n..(path + 1) * n]
    }

    pub fn a(&self, path: usize) -> &[f64] {
        let n = self.n_steps + 1;
        &self.a[path * n..(path + 1) * n]
    }

    pub fn gamma(&self, path: usize, k: usize) -> f64 {
        1.0 / self.inv_gamma(path)[k]
    }

    /// Smallest `1/γ` over all paths and times.
    pub fn min_inv_gamma(&self) -> f64 {
        self.inv_gamma.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Builds `(1/γ, A)` from the bundle's coefficients:
///
/// * `1/γ_t = (1/γ_0) exp(Σ δ ΔS - ½ Σ δ² Δt)`, the exact solution of
///   `d(1/γ) = (1/γ) δ dS` for unit-volatility `S`;
/// * `A_t = A_0 + ½∫(θ - δ)² du + γ_t ∫ρ dS - ½∫φ² du - ∫φ dW`.
///
/// With piecewise-constant coefficients aligned to the grid every sum is
/// exact, including `γ_t ∫ρ dS`, since `γ_t` multiplies the whole integral.
pub fn build_forward_exponential(bundle: &PathBundle, gamma0: f64, a0: f64) -> Result<FieldPaths, ItoError> {
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(ItoError::Domain(format!("gamma0 = {gamma0} is not positive")));
    }
    if !a0.is_finite() {
        return Err(ItoError::Domain(format!("a0 = {a0} is not finite")));
    }
    let spec = &bundle.spec;
    let grid = &bundle.grid;
    let n = grid.n_steps;
    let dt = grid.dt();
    let theta = spec.theta().on_grid(grid)?;
    let delta = spec.delta().on_grid(grid)?;
    let phi = spec.phi().on_grid(grid)?;
    let rho = spec.rho().on_grid(grid)?;

    // Deterministic drift of A on [0, t_k].
    let mut drift = vec![0.0; n + 1];
    for k in 0..n {
        drift[k + 1] = drift[k] + 0.5 * (theta[k] - delta[k]).powi(2) * dt - 0.5 * phi[k] * phi[k] * dt;
    }

    let mut inv_gamma = vec![0.0; bundle.n_paths * (n + 1)];
    let mut a = vec![0.0; bundle.n_paths * (n + 1)];
    inv_gamma.par_chunks_mut(n + 1).zip(a.par_chunks_mut(n + 1)).enumerate().for_each(|(p, (ig, ap))| {
        let (s, dw) = (bundle.s(p), bundle.dw(p));
        let (mut log_ig, mut rho_s, mut phi_w) = (-gamma0.ln(), 0.0, 0.0);
        ig[0] = 1.0 / gamma0;
        ap[0] = a0;
        for k in 0..n {
            let ds = s[k + 1] - s[k];
            log_ig += delta[k] * ds - 0.5 * delta[k] * delta[k] * dt;
            rho_s += rho[k] * ds;
            phi_w += phi[k] * dw[k];
            ig[k + 1] = log_ig.exp();
            ap[k + 1] = a0 + drift[k + 1] + rho_s / ig[k + 1] - phi_w;
        }
    });
    Ok(FieldPaths { gamma0, a0, n_steps: n, n_paths: bundle.n_paths, inv_gamma, a })
}
