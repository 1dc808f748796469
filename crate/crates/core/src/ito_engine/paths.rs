use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{CoefficientSpec, ItoError, PiecewiseConstant, TimeGrid};

/// Simulated Brownian increments `ΔB`, `ΔW` and prices on a uniform grid.
///
/// Paths are stored row-major: path `i` owns `n_steps` increments and
/// `n_steps + 1` prices. With antithetic sampling, paths `2k` and `2k + 1`
/// carry opposite increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub spec: CoefficientSpec,
    pub grid: TimeGrid,
    pub seed: u64,
    pub n_paths: usize,
    pub antithetic: bool,
    db: Vec<f64>,
    dw: Vec<f64>,
    s: Vec<f64>,
}

impl PathBundle {
    /// Bundle from given increments (`n_paths * n_steps` each, row-major),
    /// without antithetic pairing. The seed is recorded as 0.
    pub fn from_increments(
        spec: &CoefficientSpec,
        n_steps: usize,
        db: Vec<f64>,
        dw: Vec<f64>,
    ) -> Result<Self, ItoError> {
        spec.validate()?;
        let grid = spec.grid(n_steps)?;
        if db.is_empty() || !db.len().is_multiple_of(n_steps) || dw.len() != db.len() {
            return Err(ItoError::Argument("increment arrays must both hold n_paths * n_steps values".into()));
        }
        if db.iter().chain(&dw).any(|x| !x.is_finite()) {
            return Err(ItoError::Argument("increments must be finite".into()));
        }
        let n_paths = db.len() / n_steps;
        let s = prices(spec, &grid, &db)?;
        Ok(Self { spec: spec.clone(), grid, seed: 0, n_paths, antithetic: false, db, dw, s })
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn db(&self, path: usize) -> &[f64] {
        let n = self.grid.n_steps;
        &self.db[path * n..(path + 1) * n]
    }

    pub fn dw(&self, path: usize) -> &[f64] {
        let n = self.grid.n_steps;
        &self.dw[path * n..(path + 1) * n]
    }

    /// Prices `S_{t_0}, …, S_{t_n}` on one path.
    pub fn s(&self, path: usize) -> &[f64] {
        let n = self.grid.n_steps + 1;
        &self.s[path * n..(path + 1) * n]
    }

    /// Price increment `ΔS_k = S_{t_{k+1}} - S_{t_k}`.
    pub fn ds(&self, path: usize, k: usize) -> f64 {
        let s = self.s(path);
        s[k + 1] - s[k]
    }

    /// Number of independent sampling units: pairs with antithetic
    /// sampling, single paths otherwise.
    pub fn group_size(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }
}

/// Exact simulation of `dS = θ dt + dB` with antithetic pairs.
pub fn simulate_paths(
    spec: &CoefficientSpec,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle, ItoError> {
    simulate_paths_with(spec, n_steps, n_paths, seed, true)
}

/// As [`simulate_paths`], choosing whether to pair paths antithetically.
///
/// Sampling unit `g` (a pair or a single path) draws from a ChaCha8 stream
/// keyed by `(seed, g)`, reading `ΔB_k` then `ΔW_k` for each step `k` in
/// order, so the bundle does not depend on how the work is scheduled.
pub fn simulate_paths_with(
    spec: &CoefficientSpec,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBundle, ItoError> {
    spec.validate()?;
    let grid = spec.grid(n_steps)?;
    if n_paths == 0 {
        return Err(ItoError::Argument("n_paths must be at least 1".into()));
    }
    let group = if antithetic { 2 } else { 1 };
    if !n_paths.is_multiple_of(group) {
        return Err(ItoError::Argument(format!("antithetic sampling needs an even n_paths, got {n_paths}")));
    }
    let sqdt = grid.dt().sqrt();

    let mut db = vec![0.0; n_paths * n_steps];
    let mut dw = vec![0.0; n_paths * n_steps];
    db.par_chunks_mut(group * n_steps).zip(dw.par_chunks_mut(group * n_steps)).enumerate().for_each(|(g, (b, w))| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        for k in 0..n_steps {
            let zb: f64 = rng.sample(StandardNormal);
            let zw: f64 = rng.sample(StandardNormal);
            b[k] = sqdt * zb;
            w[k] = sqdt * zw;
            if antithetic {
                b[n_steps + k] = -sqdt * zb;
                w[n_steps + k] = -sqdt * zw;
            }
        }
    });

    let s = prices(spec, &grid, &db)?;
    Ok(PathBundle { spec: spec.clone(), grid, seed, n_paths, antithetic, db, dw, s })
}

/// `S_{t_{k+1}} = S_{t_k} + θ_k Δt + ΔB_k` from `S_0 = s0`.
fn prices(spec: &CoefficientSpec, grid: &TimeGrid, db: &[f64]) -> Result<Vec<f64>, ItoError> {
    let n = grid.n_steps;
    let theta = spec.theta().on_grid(grid)?;
    let dt = grid.dt();
    let mut s = vec![0.0; db.len() / n * (n + 1)];
    s.par_chunks_mut(n + 1).zip(db.par_chunks(n)).for_each(|(row, b)| {
        row[0] = spec.s0;
        for k in 0..n {
            row[k + 1] = row[k] + theta[k] * dt + b[k];
        }
    });
    Ok(s)
}

/// Density process `Z^{ν1,ν2}` sampled on the grid, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPaths {
    pub n_steps: usize,
    z: Vec<f64>,
}

impl DensityPaths {
    pub fn z(&self, path: usize) -> &[f64] {
        let n = self.n_steps + 1;
        &self.z[path * n..(path + 1) * n]
    }

    pub fn terminal(&self, path: usize) -> f64 {
        self.z(path)[self.n_steps]
    }
}

/// `Z_t = exp(-Σ ν1 ΔB - Σ ν2 ΔW - ½ Σ (ν1² + ν2²) Δt)` on every path.
pub fn density_path(
    bundle: &PathBundle,
    nu1: &PiecewiseConstant,
    nu2: &PiecewiseConstant,
) -> Result<DensityPaths, ItoError> {
    let n = bundle.n_steps();
    let log_z = log_density(bundle, nu1, nu2)?;
    let z = log_z.into_iter().map(f64::exp).collect();
    Ok(DensityPaths { n_steps: n, z })
}

/// `log Z` rows, each of length `n_steps + 1`.
pub(crate) fn log_density(
    bundle: &PathBundle,
    nu1: &PiecewiseConstant,
    nu2: &PiecewiseConstant,
) -> Result<Vec<f64>, ItoError> {
    let n = bundle.n_steps();
    let a = nu1.on_grid(&bundle.grid)?;
    let b = nu2.on_grid(&bundle.grid)?;
    let dt = bundle.grid.dt();
    let mut out = vec![0.0; bundle.n_paths * (n + 1)];
    out.par_chunks_mut(n + 1).enumerate().for_each(|(p, row)| {
        let (db, dw) = (bundle.db(p), bundle.dw(p));
        row[0] = 0.0;
        for k in 0..n {
            row[k + 1] = row[k] - a[k] * db[k] - b[k] * dw[k] - 0.5 * (a[k] * a[k] + b[k] * b[k]) * dt;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::pairwise_mean;

    fn spec(theta: f64) -> CoefficientSpec {
        CoefficientSpec::constant(1.0, theta, 0.0, 0.0, 0.0).unwrap()
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let m = pairwise_mean(xs);
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, (v / xs.len() as f64).sqrt())
    }

    #[test]
    fn price_moments() {
        let b = simulate_paths_with(&spec(0.5), 16, 20_000, 11, false).unwrap();
        let st: Vec<f64> = (0..b.n_paths).map(|p| b.s(p)[16]).collect();
        let (m, se) = mean_se(&st);
        assert!((m - 0.5).abs() < 3.0 * se, "{m} {se}");
        let var: Vec<f64> = st.iter().map(|x| (x - 0.5).powi(2)).collect();
        let (v, vse) = mean_se(&var);
        assert!((v - 1.0).abs() < 3.0 * vse, "{v} {vse}");
    }

    #[test]
    fn antithetic_pairs_cancel() {
        let b = simulate_paths(&spec(0.0), 8, 10, 3).unwrap();
        for k in 0..8 {
            assert_eq!(b.db(4)[k], -b.db(5)[k]);
            assert_eq!(b.dw(4)[k], -b.dw(5)[k]);
        }
        assert_eq!(b.s(0)[0], 0.0);
        assert!(simulate_paths(&spec(0.0), 8, 11, 3).is_err());
    }

    #[test]
    fn zero_density_is_one() {
        let b = simulate_paths(&spec(0.5), 8, 10, 3).unwrap();
        let zero = PiecewiseConstant::constant(1.0, 0.0).unwrap();
        let z = density_path(&b, &zero, &zero).unwrap();
        assert!((0..10).all(|p| z.z(p).iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn girsanov_density_moments() {
        let b = simulate_paths_with(&spec(0.5), 16, 40_000, 5, false).unwrap();
        let theta = PiecewiseConstant::constant(1.0, 0.5).unwrap();
        let zero = PiecewiseConstant::constant(1.0, 0.0).unwrap();
        let z = density_path(&b, &theta, &zero).unwrap();
        let zt: Vec<f64> = (0..b.n_paths).map(|p| z.terminal(p)).collect();
        let (m, se) = mean_se(&zt);
        assert!((m - 1.0).abs() < 3.0 * se);
        let zs: Vec<f64> = (0..b.n_paths).map(|p| z.terminal(p) * b.s(p)[16]).collect();
        let (m, se) = mean_se(&zs);
        assert!(m.abs() < 3.0 * se, "{m} {se}");
    }

    #[test]
    fn independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_paths(&spec(0.5), 32, 200, 9).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
