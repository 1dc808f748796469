use serde::{Deserialize, Serialize};

use super::ItoError;

/// Relative tolerance for matching breakpoints to grid times.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform time grid `t_k = k T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, ItoError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ItoError::Spec(format!("horizon {horizon} is not positive")));
        }
        if n_steps == 0 {
            return Err(ItoError::Argument("n_steps must be at least 1".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Grid index of `t`, or an alignment error when `t` is not a grid time.
    pub fn index_of(&self, t: f64) -> Result<usize, ItoError> {
        let x = t / self.dt();
        let k = x.round();
        if !(t >= 0.0) || (x - k).abs() > ALIGN_TOL * (1.0 + x.abs()) || k as usize > self.n_steps {
            return Err(ItoError::Alignment { time: t, dt: self.dt() });
        }
        Ok(k as usize)
    }
}

/// A deterministic, right-continuous, piecewise-constant function of time:
/// `values[i]` holds on `[breakpoints[i], breakpoints[i + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstant {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ItoError> {
        validate_breakpoints(&breakpoints)?;
        if values.len() + 1 != breakpoints.len() {
            return Err(ItoError::Spec(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ItoError::Spec(format!("coefficient value {v} is not finite")));
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(horizon: f64, value: f64) -> Result<Self, ItoError> {
        Self::new(vec![0.0, horizon], vec![value])
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap_or(&0.0)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breakpoints[1..].iter().position(|&b| t < b).unwrap_or(self.values.len() - 1);
        self.values[i]
    }

    /// `∫_a^b f(u)^p du` for `p = 1` or `2`, exact.
    fn integral_pow(&self, a: f64, b: f64, p: i32) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let lo = self.breakpoints[i].max(a);
                let hi = self.breakpoints[i + 1].min(b);
                if hi > lo {
                    v.powi(p) * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.integral_pow(a, b, 1)
    }

    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        self.integral_pow(a, b, 2)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Pointwise combination of two functions on the union of breakpoints.
    pub fn combine(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, ItoError> {
        if (self.horizon() - other.horizon()).abs() > ALIGN_TOL * self.horizon() {
            return Err(ItoError::Spec("coefficients have different horizons".into()));
        }
        let mut bps: Vec<f64> = self.breakpoints.iter().chain(&other.breakpoints).copied().collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup_by(|a, b| (*a - *b).abs() <= ALIGN_TOL * (1.0 + b.abs()));
        let values = bps.windows(2).map(|w| f(self.value_at(w[0]), other.value_at(w[0]))).collect();
        Self::new(bps, values)
    }

    /// Value on each grid step `[t_k, t_{k+1})`. Every breakpoint must be a
    /// grid time and the horizons must agree.
    pub fn on_grid(&self, grid: &TimeGrid) -> Result<Vec<f64>, ItoError> {
        if (self.horizon() - grid.horizon).abs() > ALIGN_TOL * grid.horizon {
            return Err(ItoError::Alignment { time: self.horizon(), dt: grid.dt() });
        }
        let idx: Vec<usize> = self.breakpoints.iter().map(|&b| grid.index_of(b)).collect::<Result<_, _>>()?;
        let mut out = vec![0.0; grid.n_steps];
        for (i, v) in self.values.iter().enumerate() {
            for x in &mut out[idx[i]..idx[i + 1]] {
                *x = *v;
            }
        }
        Ok(out)
    }
}

fn validate_breakpoints(bps: &[f64]) -> Result<(), ItoError> {
    if bps.len() < 2 {
        return Err(ItoError::Spec("need at least two breakpoints".into()));
    }
    if bps[0] != 0.0 {
        return Err(ItoError::Spec(format!("breakpoints must start at 0, got {}", bps[0])));
    }
    if bps.iter().any(|b| !b.is_finite()) || bps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ItoError::Spec("breakpoints must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Piecewise-constant deterministic coefficients of the diffusion market
/// and of an exponential forward performance: drift `θ` of the price, the
/// volatility `δ` of `1/γ`, and the loadings `φ` (on `W`) and `ρ` (on `S`)
/// of the shift `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub breakpoints: Vec<f64>,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub horizon: f64,
    /// Initial price `S_0`.
    #[serde(default)]
    pub s0: f64,
}

impl CoefficientSpec {
    pub fn new(
        breakpoints: Vec<f64>,
        theta: Vec<f64>,
        delta: Vec<f64>,
        phi: Vec<f64>,
        rho: Vec<f64>,
        horizon: f64,
    ) -> Result<Self, ItoError> {
        let spec = Self { breakpoints, theta, delta, phi, rho, horizon, s0: 0.0 };
        spec.validate()?;
        Ok(spec)
    }

    /// Constant coefficients on `[0, T]`.
    pub fn constant(horizon: f64, theta: f64, delta: f64, phi: f64, rho: f64) -> Result<Self, ItoError> {
        Self::new(vec![0.0, horizon], vec![theta], vec![delta], vec![phi], vec![rho], horizon)
    }

    pub fn with_s0(mut self, s0: f64) -> Self {
        self.s0 = s0;
        self
    }

    pub fn validate(&self) -> Result<(), ItoError> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(ItoError::Spec(format!("horizon {} is not positive", self.horizon)));
        }
        if (self.breakpoints.last().copied().unwrap_or(f64::NAN) - self.horizon).abs() > ALIGN_TOL * self.horizon {
            return Err(ItoError::Spec("breakpoints must end at the horizon".into()));
        }
        if !self.s0.is_finite() {
            return Err(ItoError::Spec("s0 is not finite".into()));
        }
        for (name, v) in [("theta", &self.theta), ("delta", &self.delta), ("phi", &self.phi), ("rho", &self.rho)] {
            PiecewiseConstant::new(self.breakpoints.clone(), v.clone())
                .map_err(|e| ItoError::Spec(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    fn piece(&self, v: &[f64]) -> PiecewiseConstant {
        PiecewiseConstant { breakpoints: self.breakpoints.clone(), values: v.to_vec() }
    }

    pub fn theta(&self) -> PiecewiseConstant {
        self.piece(&self.theta)
    }

    pub fn delta(&self) -> PiecewiseConstant {
        self.piece(&self.delta)
    }

    pub fn phi(&self) -> PiecewiseConstant {
        self.piece(&self.phi)
    }

    pub fn rho(&self) -> PiecewiseConstant {
        self.piece(&self.rho)
    }

    pub fn grid(&self, n_steps: usize) -> Result<TimeGrid, ItoError> {
        let grid = TimeGrid::new(self.horizon, n_steps)?;
        for &b in &self.breakpoints {
            grid.index_of(b)?;
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_alignment() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        assert_eq!(g.index_of(0.25).unwrap(), 16);
        assert_eq!(g.index_of(1.0).unwrap(), 64);
        assert!(matches!(g.index_of(0.3), Err(ItoError::Alignment { .. })));
        let spec =
            CoefficientSpec::new(vec![0.0, 0.3, 1.0], vec![0.5; 2], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2], 1.0)
                .unwrap();
        assert!(spec.grid(64).is_err());
        assert!(spec.grid(10).is_ok());
    }

    #[test]
    fn piecewise_integrals_and_grid_values() {
        let f = PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![0.4, 0.0]).unwrap();
        assert!((f.integral_sq(0.0, 1.0) - 0.08).abs() < 1e-15);
        assert!((f.integral(0.25, 1.0) - 0.1).abs() < 1e-15);
        let g = f.on_grid(&TimeGrid::new(1.0, 4).unwrap()).unwrap();
        assert_eq!(g, vec![0.4, 0.4, 0.0, 0.0]);
        let d = f.combine(&PiecewiseConstant::constant(1.0, 0.1).unwrap(), |a, b| a - b).unwrap();
        assert_eq!(d.values, vec![0.30000000000000004, -0.1]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(CoefficientSpec::new(vec![0.1, 1.0], vec![0.0], vec![0.0], vec![0.0], vec![0.0], 1.0).is_err());
        assert!(CoefficientSpec::new(vec![0.0, 1.0], vec![f64::NAN], vec![0.0], vec![0.0], vec![0.0], 1.0).is_err());
        assert!(CoefficientSpec::new(vec![0.0, 0.5], vec![0.0], vec![0.0], vec![0.0], vec![0.0], 1.0).is_err());
        assert!(PiecewiseConstant::new(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
    }
}
