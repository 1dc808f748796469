use crate::numeric::{bracket_decreasing, brent_root, golden_section_min, Pchip};
use crate::tree_market::{one_step_positivity_margin, EventTree, SUPPORT_TOL};

use super::{require_times, NodeArg, NodeValue, TreeField, ValueFieldResult, VerifierError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrimalMethod {
    /// Exponential recursion when `γ_T` is constant below each start node,
    /// exact recursion for other exponential fields, wealth grid otherwise.
    #[default]
    Auto,
    /// `u(ξ) = -C e^{-γ ξ}` with a scalar recursion for `C`.
    Exponential,
    /// Nested one-dimensional first-order conditions, no discretization.
    Recursive,
    /// Value functions tabulated on a wealth grid.
    Grid,
}

/// Wealth grid of the tabulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for WealthGrid {
    fn default() -> Self {
        Self { lo: -10.0, hi: 10.0, points: 257 }
    }
}

impl WealthGrid {
    fn nodes(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalOptions {
    pub method: PrimalMethod,
    pub grid: WealthGrid,
    /// Relative tolerance on the optimal holding.
    pub xtol: f64,
}

impl Default for PrimalOptions {
    fn default() -> Self {
        Self { method: PrimalMethod::Auto, grid: WealthGrid::default(), xtol: 1e-14 }
    }
}

/// Log-sum-exp of `(log weight, value)` pairs.
fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct Table {
    spline: Pchip,
    /// Grid points whose optimizer hit the edge of the grid, or whose
    /// children tables were already contaminated there.
    clipped: Vec<bool>,
}

enum Engine {
    Exponential { log_c: Vec<f64>, gamma: Vec<f64>, pi: Vec<Option<f64>> },
    Recursive,
    Grid { xs: Vec<f64>, tables: Vec<Option<Table>>, interp_error: f64 },
}

/// Primal value field `u(·; t, T)` below the nodes at time `t`, prepared
/// once and evaluated at any wealth.
pub struct PrimalSolver<'a> {
    tree: &'a EventTree,
    field: &'a TreeField,
    t: usize,
    big_t: usize,
    opts: PrimalOptions,
    engine: Engine,
}

/// One step of the dynamic programme: value, log marginal value and the
/// optimal holding.
#[derive(Debug, Clone, Copy)]
struct Step {
    value: f64,
    log_marginal: f64,
    pi: f64,
}

impl<'a> PrimalSolver<'a> {
    pub fn new(
        tree: &'a EventTree,
        field: &'a TreeField,
        t: usize,
        big_t: usize,
        opts: &PrimalOptions,
    ) -> Result<Self, VerifierError> {
        require_times(tree, t, big_t)?;
        field.check_len(tree)?;
        // The supremum is only attained without arbitrage below `t`.
        for id in 0..tree.len() {
            let n = &tree.nodes()[id];
            if n.time < t || n.time >= big_t {
                continue;
            }
            let d: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].increment).collect();
            if !(one_step_positivity_margin(&d).unwrap_or(-1.0) > SUPPORT_TOL) {
                return Err(VerifierError::Nflvr(format!("arbitrage at node '{}'", n.label)));
            }
        }
        let method = match (opts.method, field) {
            (PrimalMethod::Auto, TreeField::Exponential(_)) => {
                if common_terminal_gamma(tree, field, t, big_t).is_some() {
                    PrimalMethod::Exponential
                } else {
                    PrimalMethod::Recursive
                }
            }
            (PrimalMethod::Auto, TreeField::Generic(_)) => PrimalMethod::Grid,
            (m, _) => m,
        };
        let mut solver = Self { tree, field, t, big_t, opts: *opts, engine: Engine::Recursive };
        solver.engine = match method {
            PrimalMethod::Exponential => solver.build_exponential()?,
            PrimalMethod::Grid => solver.build_grid()?,
            _ => Engine::Recursive,
        };
        Ok(solver)
    }

    pub fn method(&self) -> PrimalMethod {
        match self.engine {
            Engine::Exponential { .. } => PrimalMethod::Exponential,
            Engine::Recursive => PrimalMethod::Recursive,
            Engine::Grid { .. } => PrimalMethod::Grid,
        }
    }

    /// Largest deviation between the tables and direct optimization at
    /// grid midpoints (grid path only).
    pub fn interpolation_error(&self) -> Option<f64> {
        match &self.engine {
            Engine::Grid { interp_error, .. } => Some(*interp_error),
            _ => None,
        }
    }

    fn check_start(&self, node: usize) -> Result<(), VerifierError> {
        let n = self.tree.node(node)?;
        if n.time != self.t {
            return Err(VerifierError::Argument(format!("node '{}' is not at time {}", n.label, self.t)));
        }
        Ok(())
    }

    /// `u(ξ; t, T)` at `node`.
    pub fn value(&self, node: usize, xi: f64) -> Result<f64, VerifierError> {
        self.check_start(node)?;
        if !xi.is_finite() {
            return Err(VerifierError::Domain(format!("wealth {xi}")));
        }
        Ok(self.step(node, xi)?.value)
    }

    /// `u'(ξ; t, T)` at `node`.
    pub fn marginal(&self, node: usize, xi: f64) -> Result<f64, VerifierError> {
        self.check_start(node)?;
        Ok(self.step(node, xi)?.log_marginal.exp())
    }

    /// Optimal one-step holdings along the optimally controlled wealth
    /// started from `ξ` at `node`.
    pub fn policy(&self, node: usize, xi: f64) -> Result<Vec<Option<f64>>, VerifierError> {
        self.check_start(node)?;
        let mut out = vec![None; self.tree.len()];
        let mut stack = vec![(node, xi)];
        while let Some((k, w)) = stack.pop() {
            if self.tree.nodes()[k].time >= self.big_t {
                continue;
            }
            let s = self.step(k, w)?;
            out[k] = Some(s.pi);
            for &c in &self.tree.nodes()[k].children {
                stack.push((c, w + s.pi * self.tree.nodes()[c].increment));
            }
        }
        Ok(out)
    }

    fn step(&self, node: usize, w: f64) -> Result<Step, VerifierError> {
        match &self.engine {
            Engine::Exponential { log_c, gamma, pi } => {
                let g = gamma[node];
                Ok(Step {
                    value: -(log_c[node] - g * w).exp(),
                    log_marginal: g.ln() + log_c[node] - g * w,
                    pi: pi[node].unwrap_or(0.0),
                })
            }
            Engine::Recursive => self.recursive(node, w),
            Engine::Grid { xs, tables, .. } => self.grid_step(node, w, xs, tables, true),
        }
    }

    fn terminal(&self, node: usize, x: f64) -> Result<Step, VerifierError> {
        match self.field {
            TreeField::Exponential(p) => {
                let (g, a) = (p.gammas()[node], p.a_shifts()[node]);
                let e = -g * x + a;
                Ok(Step { value: -e.exp(), log_marginal: g.ln() + e, pi: 0.0 })
            }
            TreeField::Generic(_) => {
                let s = self.field.slice(node)?;
                Ok(Step { value: s.eval(x), log_marginal: s.deriv(x).ln(), pi: 0.0 })
            }
        }
    }

    /// Exact backward recursion: the optimal holding solves
    /// `Σ p_c ΔS_c J_c'(w + π ΔS_c) = 0`, written in log form so that
    /// nothing overflows; `J' = Σ p_c J_c'` by the envelope theorem.
    fn recursive(&self, node: usize, w: f64) -> Result<Step, VerifierError> {
        let n = &self.tree.nodes()[node];
        if n.time == self.big_t {
            return self.terminal(node, w);
        }
        let kids: Vec<(usize, f64, f64)> =
            n.children.iter().map(|&c| (c, self.tree.nodes()[c].prob, self.tree.nodes()[c].increment)).collect();
        let pi = if kids.iter().all(|k| k.2 == 0.0) {
            0.0
        } else {
            let mut err = None;
            let mut foc = |pi: f64| -> f64 {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for &(c, p, d) in &kids {
                    if d == 0.0 {
                        continue;
                    }
                    match self.recursive(c, w + pi * d) {
                        Ok(s) => {
                            let lw = p.ln() + d.abs().ln() + s.log_marginal;
                            if d > 0.0 {
                                pos.push(lw)
                            } else {
                                neg.push(lw)
                            }
                        }
                        Err(e) => {
                            err = Some(e);
                            return f64::NAN;
                        }
                    }
                }
                log_sum_exp(pos.iter().copied()) - log_sum_exp(neg.iter().copied())
            };
            let (lo, hi) = bracket_decreasing(&mut foc, 0.0, 1e8)?;
            let root = brent_root(&mut foc, lo, hi, self.opts.xtol, 300)?;
            if let Some(e) = err {
                return Err(e);
            }
            root
        };
        let mut value = 0.0;
        let mut lm = Vec::with_capacity(kids.len());
        for &(c, p, d) in &kids {
            let s = self.recursive(c, w + pi * d)?;
            value += p * s.value;
            lm.push(p.ln() + s.log_marginal);
        }
        Ok(Step { value, log_marginal: log_sum_exp(lm.iter().copied()), pi })
    }

    fn build_exponential(&self) -> Result<Engine, VerifierError> {
        let tree = self.tree;
        let TreeField::Exponential(params) = self.field else {
            return Err(VerifierError::Argument("the exponential method needs an exponential field".into()));
        };
        let gamma_at = common_terminal_gamma(tree, self.field, self.t, self.big_t).ok_or_else(|| {
            VerifierError::Argument("gamma_T is not constant below every start node; use the recursive method".into())
        })?;
        let mut log_c = vec![f64::NAN; tree.len()];
        let mut pi = vec![None; tree.len()];
        for id in (0..tree.len()).rev() {
            let n = &tree.nodes()[id];
            if n.time < self.t || n.time > self.big_t {
                continue;
            }
            if n.time == self.big_t {
                log_c[id] = params.a_shifts()[id];
                continue;
            }
            let g = gamma_at[id];
            let a: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].prob.ln() + log_c[c]).collect();
            let d: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].increment).collect();
            let (p_star, value) = minimize_log_cost(&a, &d, g, self.opts.xtol)?;
            log_c[id] = value;
            pi[id] = Some(p_star);
        }
        Ok(Engine::Exponential { log_c, gamma: gamma_at, pi })
    }

    fn build_grid(&self) -> Result<Engine, VerifierError> {
        let g = self.opts.grid;
        if g.points < 4 || !(g.hi > g.lo) {
            return Err(VerifierError::Argument(format!("wealth grid {g:?} is too small")));
        }
        let xs = g.nodes();
        let tree = self.tree;
        let mut tables: Vec<Option<Table>> = (0..tree.len()).map(|_| None).collect();
        let mut interp_error: f64 = 0.0;
        for id in (0..tree.len()).rev() {
            let n = &tree.nodes()[id];
            if n.time <= self.t || n.time > self.big_t {
                continue;
            }
            let (ys, clipped) = if n.time == self.big_t {
                let ys = xs.iter().map(|&x| self.terminal(id, x).map(|s| s.value)).collect::<Result<Vec<_>, _>>()?;
                (ys, vec![false; xs.len()])
            } else {
                let mut ys = Vec::with_capacity(xs.len());
                let mut clipped = Vec::with_capacity(xs.len());
                for &x in &xs {
                    let (s, bad) = self.grid_optimize(id, x, &xs, &tables)?;
                    ys.push(s.value);
                    clipped.push(bad);
                }
                (ys, clipped)
            };
            let spline = Pchip::new(xs.clone(), ys)?;
            if n.time < self.big_t {
                for w in xs.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let (direct, bad) = self.grid_optimize(id, mid, &xs, &tables)?;
                    if !bad {
                        let interp = spline.eval(mid).expect("midpoint inside the grid");
                        interp_error = interp_error.max((interp - direct.value).abs());
                    }
                }
            }
            tables[id] = Some(Table { spline, clipped });
        }
        Ok(Engine::Grid { xs, tables, interp_error })
    }

    /// Maximizes `Σ p_c J_c(x + π ΔS_c)` over holdings that keep every
    /// child wealth on the grid. The flag reports an optimizer on the edge
    /// of that range or contaminated child values.
    fn grid_optimize(
        &self,
        node: usize,
        x: f64,
        xs: &[f64],
        tables: &[Option<Table>],
    ) -> Result<(Step, bool), VerifierError> {
        let tree = self.tree;
        let n = &tree.nodes()[node];
        let (lo, hi) = (xs[0], xs[xs.len() - 1]);
        let mut pmin = f64::NEG_INFINITY;
        let mut pmax = f64::INFINITY;
        for &c in &n.children {
            let d = tree.nodes()[c].increment;
            if d > 0.0 {
                pmin = pmin.max((lo - x) / d);
                pmax = pmax.min((hi - x) / d);
            } else if d < 0.0 {
                pmin = pmin.max((hi - x) / d);
                pmax = pmax.min((lo - x) / d);
            }
        }
        if !pmin.is_finite() {
            pmin = 0.0;
            pmax = 0.0;
        }
        if pmin > pmax {
            return Err(VerifierError::Sizing {
                node: n.label.clone(),
                detail: format!("wealth {x} lies outside the grid [{lo}, {hi}]"),
            });
        }
        let child_value = |c: usize, w: f64| -> f64 {
            let t = tables[c].as_ref().expect("child table built first");
            t.spline.eval(w.clamp(lo, hi)).unwrap_or(f64::NAN)
        };
        let objective = |pi: f64| -> f64 {
            -n.children
                .iter()
                .map(|&c| tree.nodes()[c].prob * child_value(c, x + pi * tree.nodes()[c].increment))
                .sum::<f64>()
        };
        let (pi, neg) =
            if pmax > pmin { golden_section_min(objective, pmin, pmax, 1e-12, 400) } else { (pmin, objective(pmin)) };
        let span = (pmax - pmin).max(1e-300);
        let mut bad = pmax > pmin && ((pi - pmin) / span < 1e-6 || (pmax - pi) / span < 1e-6);
        for &c in &n.children {
            let t = tables[c].as_ref().expect("child table built first");
            let w = (x + pi * tree.nodes()[c].increment).clamp(lo, hi);
            let i = t.spline.segment(w);
            if t.clipped[i] || t.clipped[i + 1] {
                bad = true;
            }
        }
        // Envelope theorem with central differences of the child tables.
        let h = 1e-6 * (1.0 + x.abs());
        let slope: f64 = n
            .children
            .iter()
            .map(|&c| {
                let w = x + pi * tree.nodes()[c].increment;
                tree.nodes()[c].prob * (child_value(c, w + h) - child_value(c, w - h)) / (2.0 * h)
            })
            .sum();
        Ok((Step { value: -neg, log_marginal: slope.max(0.0).ln(), pi }, bad))
    }

    fn grid_step(
        &self,
        node: usize,
        w: f64,
        xs: &[f64],
        tables: &[Option<Table>],
        strict: bool,
    ) -> Result<Step, VerifierError> {
        let n = &self.tree.nodes()[node];
        if n.time == self.big_t {
            return self.terminal(node, w);
        }
        let (s, bad) = self.grid_optimize(node, w, xs, tables)?;
        if bad && strict {
            return Err(VerifierError::Sizing {
                node: n.label.clone(),
                detail: format!(
                    "the optimizer at wealth {w} reaches the edge of [{}, {}]; widen the grid",
                    xs[0],
                    xs[xs.len() - 1]
                ),
            });
        }
        Ok(s)
    }
}

/// `γ_T` common to every terminal descendant, per node in `[t, T]`.
fn common_terminal_gamma(tree: &EventTree, field: &TreeField, t: usize, big_t: usize) -> Option<Vec<f64>> {
    let params = field.exponential()?;
    let mut out = vec![f64::NAN; tree.len()];
    for id in (0..tree.len()).rev() {
        let n = &tree.nodes()[id];
        if n.time < t || n.time > big_t {
            continue;
        }
        if n.time == big_t {
            out[id] = params.gammas()[id];
            continue;
        }
        let g = out[n.children[0]];
        if n.children.iter().any(|&c| out[c] != g) {
            return None;
        }
        out[id] = g;
    }
    Some(out)
}

/// `min_π log Σ_c exp(a_c - γ π d_c)` by Newton's method safeguarded with
/// a bisection bracket. Returns `(π*, minimum)`.
fn minimize_log_cost(a: &[f64], d: &[f64], gamma: f64, xtol: f64) -> Result<(f64, f64), VerifierError> {
    let phi = |pi: f64| log_sum_exp(a.iter().zip(d).map(|(ai, di)| ai - gamma * pi * di));
    if d.iter().all(|&x| x == 0.0) {
        return Ok((0.0, phi(0.0)));
    }
    // Derivative and curvature through the softmax weights.
    let moments = |pi: f64| -> (f64, f64) {
        let e: Vec<f64> = a.iter().zip(d).map(|(ai, di)| ai - gamma * pi * di).collect();
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = w.iter().sum();
        let mean: f64 = w.iter().zip(d).map(|(wi, di)| wi * di).sum::<f64>() / s;
        let second: f64 = w.iter().zip(d).map(|(wi, di)| wi * di * di).sum::<f64>() / s;
        (-gamma * mean, gamma * gamma * (second - mean * mean))
    };
    let (mut lo, mut hi) = bracket_decreasing(|p| -moments(p).0, 0.0, 1e8)?;
    let mut pi = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g1, g2) = moments(pi);
        if g1 == 0.0 {
            break;
        }
        if g1 > 0.0 {
            hi = pi;
        } else {
            lo = pi;
        }
        let newton = if g2 > 0.0 { pi - g1 / g2 } else { f64::NAN };
        let next = if newton.is_finite() && newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
        let done = (next - pi).abs() <= xtol * (1.0 + pi.abs());
        pi = next;
        if done || hi - lo <= xtol * (1.0 + pi.abs()) {
            break;
        }
    }
    Ok((pi, phi(pi)))
}

/// `u(ξ; t, T)` at every node at time `t`, with optimal holdings.
pub fn primal_value(
    tree: &EventTree,
    field: &TreeField,
    xi: &NodeArg,
    t: usize,
    big_t: usize,
    opts: &PrimalOptions,
) -> Result<ValueFieldResult, VerifierError> {
    require_times(tree, t, big_t)?;
    field.check_len(tree)?;
    let mut result = ValueFieldResult {
        t,
        big_t,
        values: Vec::new(),
        portfolio: vec![None; tree.len()],
        measure: None,
        interpolation_error: None,
        kkt_residual: None,
        duality_gap: None,
    };
    if t == big_t {
        for m in tree.nodes_at(t) {
            let x = xi.at(m);
            result.values.push(NodeValue { node: m, argument: x, value: field.eval(m, x)? });
        }
        return Ok(result);
    }
    let solver = PrimalSolver::new(tree, field, t, big_t, opts)?;
    for m in tree.nodes_at(t) {
        let x = xi.at(m);
        let v = solver.value(m, x)?;
        result.values.push(NodeValue { node: m, argument: x, value: v });
        for (k, p) in solver.policy(m, x)?.into_iter().enumerate() {
            if p.is_some() {
                result.portfolio[k] = p;
            }
        }
    }
    result.interpolation_error = solver.interpolation_error();
    Ok(result)
}
