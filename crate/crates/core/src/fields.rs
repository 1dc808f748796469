//! Utility random fields and their Fenchel–Legendre conjugates.
//!
//! A slice `x ↦ U(t, x)` of a utility random field is strictly concave,
//! strictly increasing and satisfies the Inada conditions. Its dual is
//! `V(t, y) = sup_x (U(t, x) - x y)`, with the value at `y = 0` adjoined as
//! `sup_x U(t, x)`.
//!
//! The exponential family `U(t, x) = -exp(-γ_t x + A_t)` has the closed-form
//! dual `V(t, y) = h(y / γ_t) - (y / γ_t) A_t` where `h(y) = y log y - y`.
//! Everything else goes through [`conjugate_numeric`], which only needs
//! evaluation access to `U` and `U'`.

use thiserror::Error;

use crate::numeric::{bracket_decreasing, brent_root, golden_section_min, NumericError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("argument {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },
    #[error("no field value at node {0}")]
    UnknownNode(usize),
    #[error("gamma and a_shift have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("Inada conditions violated: marginal utility does not reach {y} within bracket width {width:e}")]
    InadaViolation { y: f64, width: f64 },
    #[error("conjugate solver failed: {0}")]
    Solver(#[from] NumericError),
    #[error("utility slice invariant violated: {0}")]
    Slice(String),
    #[error("empty argument grid")]
    EmptyGrid,
}

/// `h(y) = y log y - y` on `y >= 0`, with `h(0) = 0`.
pub fn h_entropy(y: f64) -> Result<f64, FieldError> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(FieldError::Domain { what: "h", value: y });
    }
    Ok(h_unchecked(y))
}

#[inline]
pub(crate) fn h_unchecked(y: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y * y.ln() - y
    }
}

/// One `(ω, t)` slice of a utility random field, accessed by evaluation only.
pub trait UtilitySlice: Send + Sync {
    fn eval(&self, x: f64) -> f64;
    /// Marginal utility `U'(x) > 0`.
    fn deriv(&self, x: f64) -> f64;
    /// `U''(x)` when known in closed form.
    fn deriv2(&self, _x: f64) -> Option<f64> {
        None
    }
}

impl<S: UtilitySlice + ?Sized> UtilitySlice for std::sync::Arc<S> {
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (**self).deriv(x)
    }
    fn deriv2(&self, x: f64) -> Option<f64> {
        (**self).deriv2(x)
    }
}

impl<S: UtilitySlice + ?Sized> UtilitySlice for &S {
    fn eval(&self, x: f64) -> f64 {
        (**self).eval(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (**self).deriv(x)
    }
    fn deriv2(&self, x: f64) -> Option<f64> {
        (**self).deriv2(x)
    }
}

/// `U(x) = -exp(-γ x + a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialSlice {
    pub gamma: f64,
    pub a: f64,
}

impl ExponentialSlice {
    pub fn new(gamma: f64, a: f64) -> Result<Self, FieldError> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(FieldError::Domain { what: "gamma", value: gamma });
        }
        if !a.is_finite() {
            return Err(FieldError::Domain { what: "A", value: a });
        }
        Ok(Self { gamma, a })
    }
}

impl UtilitySlice for ExponentialSlice {
    fn eval(&self, x: f64) -> f64 {
        -(-self.gamma * x + self.a).exp()
    }
    fn deriv(&self, x: f64) -> f64 {
        self.gamma * (-self.gamma * x + self.a).exp()
    }
    fn deriv2(&self, x: f64) -> Option<f64> {
        Some(-self.gamma * self.gamma * (-self.gamma * x + self.a).exp())
    }
}

/// A slice given by a pair of closures `(U, U')`.
pub struct FnSlice<F, G> {
    eval: F,
    deriv: G,
}

impl<F, G> FnSlice<F, G>
where
    F: Fn(f64) -> f64 + Send + Sync,
    G: Fn(f64) -> f64 + Send + Sync,
{
    pub fn new(eval: F, deriv: G) -> Self {
        Self { eval, deriv }
    }
}

impl<F, G> UtilitySlice for FnSlice<F, G>
where
    F: Fn(f64) -> f64 + Send + Sync,
    G: Fn(f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
    fn deriv(&self, x: f64) -> f64 {
        (self.deriv)(x)
    }
}

/// Checks monotonicity, concavity and the Inada limits of a slice on a
/// sampled grid. The Inada probes are `x = ∓2^k`, `k = 0..=probe_depth`.
pub fn validate_slice<S: UtilitySlice + ?Sized>(slice: &S, grid: &[f64], probe_depth: u32) -> Result<(), FieldError> {
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(slice.eval(b) > slice.eval(a)) {
            return Err(FieldError::Slice(format!("not strictly increasing on [{a}, {b}]")));
        }
        let (da, db) = (slice.deriv(a), slice.deriv(b));
        if !(da > 0.0 && db > 0.0) {
            return Err(FieldError::Slice(format!("nonpositive marginal utility near {a}")));
        }
        if !(db < da) {
            return Err(FieldError::Slice(format!("marginal utility not decreasing on [{a}, {b}]")));
        }
    }
    for w in grid.windows(3) {
        let mid = slice.eval(0.5 * (w[0] + w[2]));
        let chord = 0.5 * (slice.eval(w[0]) + slice.eval(w[2]));
        if !(mid > chord) {
            return Err(FieldError::Slice(format!("not strictly concave around {}", w[1])));
        }
    }
    let far = 2f64.powi(probe_depth as i32);
    let (left, right) = (slice.deriv(-far), slice.deriv(far));
    let (l1, r1) = (slice.deriv(-1.0), slice.deriv(1.0));
    if !(left > 1e3 * l1.max(1.0)) {
        return Err(FieldError::Slice(format!("U'(-{far}) = {left} does not grow without bound")));
    }
    if !(right < 1e-3 * r1.min(1.0)) {
        return Err(FieldError::Slice(format!("U'({far}) = {right} does not vanish")));
    }
    Ok(())
}

/// Per-node parameters `(γ, A)` of an exponential field on an event tree,
/// indexed by node id. The root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialFieldParams {
    gamma: Vec<f64>,
    a_shift: Vec<f64>,
}

impl ExponentialFieldParams {
    pub fn new(gamma: Vec<f64>, a_shift: Vec<f64>) -> Result<Self, FieldError> {
        if gamma.len() != a_shift.len() {
            return Err(FieldError::LengthMismatch(gamma.len(), a_shift.len()));
        }
        if let Some(&g) = gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(FieldError::Domain { what: "gamma", value: g });
        }
        if let Some(&a) = a_shift.iter().find(|a| !a.is_finite()) {
            return Err(FieldError::Domain { what: "A", value: a });
        }
        Ok(Self { gamma, a_shift })
    }

    /// Same `γ` and `A` at every one of `n_nodes` nodes.
    pub fn constant(n_nodes: usize, gamma: f64, a: f64) -> Result<Self, FieldError> {
        Self::new(vec![gamma; n_nodes], vec![a; n_nodes])
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn gamma(&self, node: usize) -> Result<f64, FieldError> {
        self.gamma.get(node).copied().ok_or(FieldError::UnknownNode(node))
    }

    pub fn a_shift(&self, node: usize) -> Result<f64, FieldError> {
        self.a_shift.get(node).copied().ok_or(FieldError::UnknownNode(node))
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma[0]
    }

    pub fn a0(&self) -> f64 {
        self.a_shift[0]
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }

    pub fn a_shifts(&self) -> &[f64] {
        &self.a_shift
    }

    pub fn set_a_shift(&mut self, node: usize, value: f64) -> Result<(), FieldError> {
        if !value.is_finite() {
            return Err(FieldError::Domain { what: "A", value });
        }
        let slot = self.a_shift.get_mut(node).ok_or(FieldError::UnknownNode(node))?;
        *slot = value;
        Ok(())
    }

    pub fn slice(&self, node: usize) -> Result<ExponentialSlice, FieldError> {
        Ok(ExponentialSlice { gamma: self.gamma(node)?, a: self.a_shift(node)? })
    }

    pub fn dual(&self, node: usize) -> Result<ExponentialDual, FieldError> {
        Ok(ExponentialDual { gamma: self.gamma(node)?, a: self.a_shift(node)? })
    }
}

/// `U(node, x) = -exp(-γ x + A)`.
pub fn eval_exponential(params: &ExponentialFieldParams, node: usize, x: f64) -> Result<f64, FieldError> {
    Ok(params.slice(node)?.eval(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateOptions {
    /// Tolerance on the first-order condition, relative to `y`.
    pub foc_tol: f64,
    /// Largest bracket width tried before declaring an Inada violation.
    pub max_width: f64,
    pub max_iter: usize,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        Self { foc_tol: 1e-10, max_width: 1e6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conjugate {
    pub value: f64,
    pub x_star: f64,
}

/// Numerical conjugate `V(y) = sup_x (U(x) - x y)` for `y > 0`.
///
/// The first-order condition `U'(x) = y` is solved in log form,
/// `ln U'(x) - ln y = 0`, after geometric bracket expansion from `[-1, 1]`.
pub fn conjugate_numeric<S: UtilitySlice + ?Sized>(
    slice: &S,
    y: f64,
    opts: &ConjugateOptions,
) -> Result<Conjugate, FieldError> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(FieldError::Domain { what: "conjugate argument", value: y });
    }
    let ln_y = y.ln();
    let foc = |x: f64| {
        let d = slice.deriv(x);
        if d.is_nan() {
            f64::NAN
        } else {
            d.ln() - ln_y
        }
    };
    let (lo, hi) = bracket_decreasing(foc, 0.0, opts.max_width).map_err(|e| match e {
        NumericError::BracketNotFound { width } => FieldError::InadaViolation { y, width },
        other => FieldError::Solver(other),
    })?;
    let x_star = brent_root(foc, lo, hi, 1e-15, opts.max_iter)?;
    let residual = foc(x_star);
    if !(residual.abs() <= opts.foc_tol) {
        // Bisection collapsed without meeting the tolerance: U' jumps here.
        return Err(FieldError::Solver(NumericError::NoConvergence {
            iterations: opts.max_iter,
            lo: x_star,
            hi: x_star,
        }));
    }
    Ok(Conjugate { value: slice.eval(x_star) - x_star * y, x_star })
}

/// Closed-form dual of the exponential slice: `h(y/γ) - (y/γ) A`.
pub fn conjugate_exponential(gamma: f64, a: f64, y: f64) -> Result<f64, FieldError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(FieldError::Domain { what: "gamma", value: gamma });
    }
    if !(y >= 0.0) || !y.is_finite() {
        return Err(FieldError::Domain { what: "dual argument", value: y });
    }
    let r = y / gamma;
    Ok(h_unchecked(r) - r * a)
}

/// The adjoined value `V(0) = sup_x U(x)`, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupValue {
    Finite(f64),
    Unbounded,
}

/// Probes `U(2^k)` for `k = 0..=60` and declares the supremum finite once
/// successive increments fall below `tol`.
pub fn adjoined_value<S: UtilitySlice + ?Sized>(slice: &S, tol: f64) -> SupValue {
    let mut prev = slice.eval(1.0);
    for k in 1..=60 {
        let cur = slice.eval(2f64.powi(k));
        if !cur.is_finite() {
            return SupValue::Unbounded;
        }
        if (cur - prev).abs() <= tol {
            return SupValue::Finite(cur);
        }
        prev = cur;
    }
    SupValue::Unbounded
}

/// One slice of a dual random field.
pub trait DualSlice: Send + Sync {
    /// `V(y)` for `y >= 0`; `+inf` if the adjoined value is unbounded.
    fn eval(&self, y: f64) -> f64;
    /// The conjugating wealth `x*(y)` with `U'(x*) = y`, for `y > 0`.
    fn minimizer(&self, y: f64) -> f64;
    /// `V'(y) = -x*(y)`.
    fn deriv(&self, y: f64) -> f64 {
        -self.minimizer(y)
    }
    /// `V''(y)`, by central differences of `x*` unless overridden.
    fn deriv2(&self, y: f64) -> f64 {
        let step = 1e-5 * y;
        (self.minimizer(y - step) - self.minimizer(y + step)) / (2.0 * step)
    }
}

/// Closed-form dual of [`ExponentialSlice`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialDual {
    pub gamma: f64,
    pub a: f64,
}

impl DualSlice for ExponentialDual {
    fn eval(&self, y: f64) -> f64 {
        let r = y / self.gamma;
        h_unchecked(r) - r * self.a
    }
    fn minimizer(&self, y: f64) -> f64 {
        (self.a - (y / self.gamma).ln()) / self.gamma
    }
    fn deriv(&self, y: f64) -> f64 {
        ((y / self.gamma).ln() - self.a) / self.gamma
    }
    fn deriv2(&self, y: f64) -> f64 {
        1.0 / (self.gamma * y)
    }
}

/// Dual slice computed on demand from an arbitrary utility slice.
pub struct NumericDual<S> {
    slice: S,
    opts: ConjugateOptions,
    sup: SupValue,
}

impl<S: UtilitySlice> NumericDual<S> {
    pub fn new(slice: S, opts: ConjugateOptions) -> Self {
        let sup = adjoined_value(&slice, 1e-13);
        Self { slice, opts, sup }
    }

    pub fn slice(&self) -> &S {
        &self.slice
    }

    pub fn try_eval(&self, y: f64) -> Result<f64, FieldError> {
        if y == 0.0 {
            return Ok(match self.sup {
                SupValue::Finite(v) => v,
                SupValue::Unbounded => f64::INFINITY,
            });
        }
        Ok(conjugate_numeric(&self.slice, y, &self.opts)?.value)
    }
}

impl<S: UtilitySlice> DualSlice for NumericDual<S> {
    fn eval(&self, y: f64) -> f64 {
        self.try_eval(y).unwrap_or(f64::NAN)
    }
    fn minimizer(&self, y: f64) -> f64 {
        conjugate_numeric(&self.slice, y, &self.opts).map(|c| c.x_star).unwrap_or(f64::NAN)
    }
    fn deriv2(&self, y: f64) -> f64 {
        match conjugate_numeric(&self.slice, y, &self.opts) {
            Ok(c) => match self.slice.deriv2(c.x_star) {
                Some(u2) => -1.0 / u2,
                None => {
                    let step = 1e-5 * (1.0 + c.x_star.abs());
                    let u2 = (self.slice.deriv(c.x_star + step) - self.slice.deriv(c.x_star - step)) / (2.0 * step);
                    -1.0 / u2
                }
            },
            Err(_) => f64::NAN,
        }
    }
}

/// Recovers `U(x) = inf_{y>0} (V(y) + x y)` from a dual slice: grid minimum
/// followed by golden-section refinement in `log y` between the neighbours of
/// the best grid point.
pub fn bidual<D: DualSlice + ?Sized>(dual: &D, x: f64, y_grid: &[f64]) -> Result<f64, FieldError> {
    if y_grid.is_empty() {
        return Err(FieldError::EmptyGrid);
    }
    if let Some(&bad) = y_grid.iter().find(|y| !(**y > 0.0)) {
        return Err(FieldError::Domain { what: "bidual grid", value: bad });
    }
    let mut grid = y_grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    let objective = |y: f64| dual.eval(y) + x * y;
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &y)| (i, objective(y)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is nonempty");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    if lo == hi {
        return Ok(objective(lo));
    }
    let (_, v) = golden_section_min(|s| objective(s.exp()), lo.ln(), hi.ln(), 1e-12, 300);
    Ok(v.min(objective(grid[best])))
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
