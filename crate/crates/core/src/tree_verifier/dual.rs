use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::fields::{h_unchecked, DualSlice, ExponentialFieldParams};
use crate::tree_market::{measure_polytope, EventTree, MeasurePolytope, TreeMeasure};

use super::construct::inverse_gamma_is_martingale;
use super::entropy::EntropyResult;
use super::{inverse_gammas, require_times, NodeArg, NodeValue, TreeField, ValueFieldResult, VerifierError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualMethod {
    /// Entropy recursion when the field is exponential and `1/γ` is a
    /// martingale under every measure; log-barrier Newton otherwise.
    #[default]
    Auto,
    /// Closed-form scaling plus the minimum-entropy recursion.
    Entropy,
    /// Log-barrier Newton over leaf masses.
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOptions {
    pub method: DualMethod,
    pub max_newton: usize,
    /// Stop once the barrier duality-gap bound falls below this.
    pub gap_tol: f64,
    /// Tolerance of the `E^Q[1/γ_T] = 1/γ_t` test deciding the method.
    pub martingale_tol: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self { method: DualMethod::Auto, max_newton: 200, gap_tol: 1e-10, martingale_tol: 1e-12 }
    }
}

/// Minimum conditional entropy at every node in `[t, T]`, with the one-step
/// minimizing laws.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTable {
    pub t: usize,
    pub big_t: usize,
    /// `min_Q H(Q; time(node), T)` at every node with time in `[t, T]`.
    pub hmin: Vec<f64>,
    /// Minimizing one-step law at every node with time in `[t, T)`.
    pub q: Vec<Option<Vec<f64>>>,
    /// Largest duality gap of the one-step problems.
    pub worst_gap: f64,
}

impl EntropyTable {
    /// The minimizing measure (reference law outside `[t, T)`).
    pub fn measure(&self, tree: &EventTree) -> Result<TreeMeasure, VerifierError> {
        Ok(TreeMeasure::from_choices(tree, |id| self.q[id].clone())?)
    }
}

/// Nodes in `[t, T]` that some martingale measure started at time `t`
/// reaches with positive probability.
pub(crate) fn reachable(tree: &EventTree, poly: &MeasurePolytope) -> Vec<bool> {
    let mut out = vec![false; tree.len()];
    for id in 0..tree.len() {
        let n = &tree.nodes()[id];
        if n.time < poly.t || n.time > poly.big_t {
            continue;
        }
        let reached = if n.time == poly.t { true } else { n.parent.is_some_and(|p| out[p]) };
        if !reached {
            continue;
        }
        if n.time == poly.t || poly_allows(tree, poly, id) {
            out[id] = true;
        }
    }
    out
}

fn poly_allows(tree: &EventTree, poly: &MeasurePolytope, id: usize) -> bool {
    let Some(parent) = tree.nodes()[id].parent else {
        return true;
    };
    let Some(np) = poly.node(parent) else {
        return true;
    };
    let k = np.children.iter().position(|&c| c == id).expect("child listed at parent");
    np.support()[k]
}

/// `min Σ_c q_c (w_c log(q_c/p_c) + b_c)` over the one-step polytope,
/// through the two-dimensional concave dual in `(λ0, λ1)`.
/// Returns `(q, value, gap, iterations)`.
fn one_step_entropy(
    p: &[f64],
    d: &[f64],
    w: &[f64],
    b: &[f64],
    active: &[bool],
    max_iter: usize,
) -> Option<(Vec<f64>, f64, f64, usize)> {
    let n = p.len();
    let idx: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    if idx.is_empty() {
        return None;
    }
    let objective = |q: &[f64]| -> f64 {
        idx.iter().map(|&i| if q[i] > 0.0 { q[i] * (w[i] * (q[i] / p[i]).ln() + b[i]) } else { 0.0 }).sum()
    };
    if idx.len() == 1 {
        let mut q = vec![0.0; n];
        q[idx[0]] = 1.0;
        return Some((q.clone(), objective(&q), 0.0, 0));
    }
    let use_drift = idx.iter().any(|&i| d[i] != 0.0);
    let log_q = |l0: f64, l1: f64, i: usize| p[i].ln() + (l0 + l1 * d[i] - b[i]) / w[i] - 1.0;
    let g = |l0: f64, l1: f64| -> f64 { l0 - idx.iter().map(|&i| w[i] * log_q(l0, l1, i).exp()).sum::<f64>() };

    let mut l0 = idx.iter().map(|&i| b[i] + w[i]).fold(f64::INFINITY, f64::min);
    let mut l1 = 0.0;
    let mut iters = 0;
    let mut gval = g(l0, l1);
    while iters < max_iter {
        iters += 1;
        let (mut s0, mut s1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in &idx {
            let q = log_q(l0, l1, i).exp();
            s0 += q;
            s1 += q * d[i];
            h00 += q / w[i];
            h01 += q * d[i] / w[i];
            h11 += q * d[i] * d[i] / w[i];
        }
        let g0 = 1.0 - s0;
        let g1 = -s1;
        let scale = idx.iter().map(|&i| d[i].abs()).fold(1.0, f64::max);
        if g0.abs() < 1e-15 && (!use_drift || g1.abs() < 1e-15 * scale) {
            break;
        }
        // Newton ascent direction: solve (h) step = grad with h = -∇²g.
        let (st0, st1) = if use_drift {
            let det = h00 * h11 - h01 * h01;
            if !(det > 0.0) {
                (g0 / h00, 0.0)
            } else {
                ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
            }
        } else {
            (g0 / h00, 0.0)
        };
        let slope = st0 * g0 + st1 * g1;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (n0, n1) = (l0 + step * st0, l1 + step * st1);
            let gn = g(n0, n1);
            if gn.is_finite() && gn >= gval + 1e-4 * step * slope - 1e-15 * gval.abs().max(1.0) {
                l0 = n0;
                l1 = n1;
                gval = gn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut q = vec![0.0; n];
    for &i in &idx {
        q[i] = log_q(l0, l1, i).exp();
    }
    // Remove the last rounding-level infeasibility before reporting.
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= s);
    let value = objective(&q);
    let drift: f64 = q.iter().zip(d).map(|(a, b)| a * b).sum();
    let gap = (value - gval).abs() + drift.abs() * l1.abs();
    Some((q, value, gap, iters))
}

/// Minimum-entropy recursion; valid when `E^Q[1/γ_T | ·] = 1/γ` for every
/// martingale measure `Q` on `[t, T]`.
pub(crate) fn entropy_dp(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
    max_iter: usize,
) -> Result<EntropyTable, VerifierError> {
    let inv = inverse_gammas(params)?;
    let poly = measure_polytope(tree, t, big_t)?;
    let mut hmin = vec![f64::NAN; tree.len()];
    let mut qs: Vec<Option<Vec<f64>>> = vec![None; tree.len()];
    let mut worst_gap: f64 = 0.0;
    for id in (0..tree.len()).rev() {
        let n = &tree.nodes()[id];
        if n.time < t || n.time > big_t {
            continue;
        }
        if n.time == big_t {
            hmin[id] = h_unchecked(inv[id]) - inv[id] * params.a_shifts()[id];
            continue;
        }
        let np = poly.node(id).expect("polytope covers [t, T)");
        if np.is_empty() {
            continue;
        }
        let p: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].prob).collect();
        let w: Vec<f64> = n.children.iter().map(|&c| inv[c]).collect();
        let b: Vec<f64> = n.children.iter().map(|&c| hmin[c]).collect();
        let support = np.support();
        let (q, value, gap) = if np.vertices.len() == 1 {
            let q = np.vertices[0].clone();
            let value = (0..q.len()).filter(|&i| q[i] > 0.0).map(|i| q[i] * (w[i] * (q[i] / p[i]).ln() + b[i])).sum();
            (q, value, 0.0)
        } else {
            let (q, value, gap, iters) = one_step_entropy(&p, &np.increments, &w, &b, &support, max_iter)
                .ok_or_else(|| VerifierError::Nflvr(format!("empty polytope at '{}'", n.label)))?;
            if gap > 1e-10 && iters >= max_iter {
                return Err(VerifierError::NoConvergence { node: n.label.clone(), iterations: iters, gap });
            }
            (q, value, gap)
        };
        worst_gap = worst_gap.max(gap);
        hmin[id] = value;
        qs[id] = Some(q);
    }
    Ok(EntropyTable { t, big_t, hmin, q: qs, worst_gap })
}

/// Outcome of the log-barrier solve on one subtree.
#[derive(Debug, Clone)]
struct BarrierOutcome {
    leaves: Vec<usize>,
    mu: Vec<f64>,
    value: f64,
    kkt: f64,
    gap: f64,
}

/// `min Σ_l f_l(μ_l)` over leaf masses below `start` that come from a
/// martingale measure on `[time(start), T]`. `f(l, μ)` returns the value
/// and the first two derivatives of leaf `l`'s term.
fn barrier_minimize<F>(
    tree: &EventTree,
    poly: &MeasurePolytope,
    start: usize,
    big_t: usize,
    f: F,
    opts: &DualOptions,
) -> Result<BarrierOutcome, VerifierError>
where
    F: Fn(usize, f64) -> (f64, f64, f64),
{
    let label = tree.label(start).to_string();
    let reach = reachable(tree, poly);
    let leaves: Vec<usize> = tree.descendants_at(start, big_t).into_iter().filter(|&l| reach[l]).collect();
    if leaves.is_empty() {
        return Err(VerifierError::Nflvr(format!("no martingale measure below '{label}'")));
    }
    let n = leaves.len();

    // Starting point: product of one-step barycentres.
    let mut mu = vec![0.0; n];
    for (k, &l) in leaves.iter().enumerate() {
        let mut m = 1.0;
        let mut cur = l;
        while cur != start {
            let parent = tree.nodes()[cur].parent.expect("leaf below start");
            let np = poly.node(parent).expect("internal node in polytope");
            let pos = np.children.iter().position(|&c| c == cur).expect("child listed at parent");
            m *= np.interior_point().map(|q| q[pos]).unwrap_or(0.0);
            cur = parent;
        }
        mu[k] = m;
    }
    if mu.iter().any(|&m| !(m > 0.0)) {
        return Err(VerifierError::Nflvr(format!("degenerate support below '{label}'")));
    }

    // Constraints: total mass one, zero drift at every internal node.
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut rhs = vec![1.0];
    for k in tree.internal_nodes_between(start, big_t) {
        if !reach[k] {
            continue;
        }
        let mut row = vec![0.0; n];
        for &c in &tree.nodes()[k].children {
            let d = tree.nodes()[c].increment;
            if d == 0.0 {
                continue;
            }
            for (j, &l) in leaves.iter().enumerate() {
                if tree.ancestor_at(l, tree.nodes()[c].time).ok() == Some(c) {
                    row[j] = d;
                }
            }
        }
        rows.push(row);
        rhs.push(0.0);
    }
    let (a, b) = independent_rows(rows, rhs);
    let m = a.nrows();

    let phi =
        |mu: &[f64], tau: f64| -> f64 { mu.iter().enumerate().map(|(k, &x)| f(leaves[k], x).0 - tau * x.ln()).sum() };

    let mut tau = 1e-2;
    let mut total_iter = 0;
    let gap_target = opts.gap_tol * 0.1;
    loop {
        let mut stage_iter = 0;
        loop {
            stage_iter += 1;
            total_iter += 1;
            let mut grad = DVector::zeros(n);
            let mut hdiag = DVector::zeros(n);
            for k in 0..n {
                let (_, d1, d2) = f(leaves[k], mu[k]);
                grad[k] = d1 - tau / mu[k];
                hdiag[k] = d2 + tau / (mu[k] * mu[k]);
            }
            let x = DVector::from_column_slice(&mu);
            let rp = &a * &x - &b;
            let mut kkt = DMatrix::zeros(n + m, n + m);
            for k in 0..n {
                kkt[(k, k)] = hdiag[k];
            }
            kkt.view_mut((n, 0), (m, n)).copy_from(&a);
            kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
            let mut r = DVector::zeros(n + m);
            r.rows_mut(0, n).copy_from(&(-&grad));
            r.rows_mut(n, m).copy_from(&(-&rp));
            let sol = kkt.lu().solve(&r).ok_or_else(|| VerifierError::NoConvergence {
                node: label.clone(),
                iterations: total_iter,
                gap: f64::NAN,
            })?;
            let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            let decrement: f64 = (0..n).map(|k| dx[k] * dx[k] * hdiag[k]).sum();
            // Largest step keeping every mass positive.
            let mut step: f64 = 1.0;
            for k in 0..n {
                if dx[k] < 0.0 {
                    step = step.min(-0.99 * mu[k] / dx[k]);
                }
            }
            let base = phi(&mu, tau);
            let infeasible = rp.amax() > 1e-14;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = mu.iter().zip(&dx).map(|(a, b)| a + step * b).collect();
                let val = phi(&trial, tau);
                if trial.iter().all(|&v| v > 0.0)
                    && val.is_finite()
                    && (infeasible || val <= base - 1e-4 * step * decrement + 1e-15 * base.abs().max(1.0))
                {
                    mu = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || decrement < 1e-20 || (decrement * 0.5 < 1e-16 && !infeasible) {
                break;
            }
            if stage_iter >= opts.max_newton {
                return Err(VerifierError::NoConvergence {
                    node: label.clone(),
                    iterations: total_iter,
                    gap: n as f64 * tau,
                });
            }
        }
        if n as f64 * tau <= gap_target {
            break;
        }
        tau *= 0.1;
    }

    // Stationarity residual with multipliers fitted by least squares.
    let grad = DVector::from_iterator(n, (0..n).map(|k| f(leaves[k], mu[k]).1));
    let aat = &a * a.transpose();
    let rhs_nu = -(&a * &grad);
    let nu = aat.lu().solve(&rhs_nu).unwrap_or_else(|| DVector::zeros(m));
    let resid = &grad + a.transpose() * nu;
    let kkt = resid.amax();
    let value = mu.iter().enumerate().map(|(k, &x)| f(leaves[k], x).0).sum();
    Ok(BarrierOutcome { leaves, mu, value, kkt, gap: n as f64 * tau })
}

/// Drops rows that are (numerically) combinations of earlier ones.
fn independent_rows(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = rows.first().map_or(0, |r| r.len());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept_rows = Vec::new();
    let mut kept_rhs = Vec::new();
    for (row, r) in rows.into_iter().zip(rhs) {
        let mut v = row.clone();
        for e in &basis {
            let dot: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(e).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * scale.max(1e-300) && scale > 0.0 {
            basis.push(v.iter().map(|x| x / norm).collect());
            kept_rows.push(row);
            kept_rhs.push(r);
        }
    }
    let a = DMatrix::from_fn(kept_rows.len(), n, |i, j| kept_rows[i][j]);
    (a, DVector::from_vec(kept_rhs))
}

/// Writes conditional probabilities below `start` from leaf masses; nodes
/// without mass get an interior point of their polytope.
fn fill_from_leaf_masses(
    tree: &EventTree,
    poly: &MeasurePolytope,
    start: usize,
    big_t: usize,
    leaf_mass: &[(usize, f64)],
    cond: &mut [f64],
) {
    let mut mass = vec![0.0; tree.len()];
    for &(l, m) in leaf_mass {
        let mut cur = l;
        loop {
            mass[cur] += m;
            if cur == start {
                break;
            }
            cur = tree.nodes()[cur].parent.expect("leaf below start");
        }
    }
    for k in tree.internal_nodes_between(start, big_t) {
        let children = &tree.nodes()[k].children;
        if mass[k] > 0.0 {
            for &c in children {
                cond[c] = mass[c] / mass[k];
            }
        } else if let Some(q) = poly.node(k).and_then(|np| np.interior_point()) {
            for (&c, qc) in children.iter().zip(q) {
                cond[c] = qc;
            }
        }
    }
}

fn eval_dual_terms(duals: &[Arc<dyn DualSlice>], p: f64, eta: f64, k: usize, mu: f64) -> (f64, f64, f64) {
    let y = eta * mu / p;
    let d = &duals[k];
    (p * d.eval(y), eta * d.deriv(y), eta * eta / p * d.deriv2(y))
}

/// `v(η; t, T)` at every node at time `t`: the infimum over martingale
/// measures of `E[V(T, η Z_T/Z_t) | node]`.
pub fn dual_value(
    tree: &EventTree,
    field: &TreeField,
    eta: &NodeArg,
    t: usize,
    big_t: usize,
    opts: &DualOptions,
) -> Result<ValueFieldResult, VerifierError> {
    require_times(tree, t, big_t)?;
    field.check_len(tree)?;
    let starts: Vec<usize> = tree.nodes_at(t).collect();
    for &m in &starts {
        let e = eta.at(m);
        if !(e >= 0.0) || !e.is_finite() {
            return Err(VerifierError::Domain(format!("eta = {e} at node '{}'", tree.label(m))));
        }
    }
    let mut result = ValueFieldResult {
        t,
        big_t,
        values: Vec::new(),
        portfolio: vec![None; tree.len()],
        measure: None,
        interpolation_error: None,
        kkt_residual: Some(0.0),
        duality_gap: Some(0.0),
    };
    if t == big_t {
        for &m in &starts {
            let v = field.eval_dual(m, eta.at(m))?;
            result.values.push(NodeValue { node: m, argument: eta.at(m), value: v });
        }
        result.measure = Some(TreeMeasure::reference(tree));
        return Ok(result);
    }
    let poly = measure_polytope(tree, t, big_t)?;
    for &m in &starts {
        if !poly.viable(m) {
            return Err(VerifierError::Nflvr(format!("empty measure polytope below '{}'", tree.label(m))));
        }
    }

    let entropy_path = match (opts.method, field.exponential()) {
        (DualMethod::Barrier, _) => None,
        (DualMethod::Entropy, None) => {
            return Err(VerifierError::Argument("the entropy method needs an exponential field".into()))
        }
        (DualMethod::Entropy, Some(p)) => {
            if !inverse_gamma_is_martingale(tree, p, t, big_t, opts.martingale_tol)? {
                return Err(VerifierError::InverseGammaNotMartingale(format!("on [{t}, {big_t}]")));
            }
            Some(p)
        }
        (DualMethod::Auto, Some(p)) => {
            if inverse_gamma_is_martingale(tree, p, t, big_t, opts.martingale_tol)? {
                Some(p)
            } else {
                None
            }
        }
        (DualMethod::Auto, None) => None,
    };

    let mut cond = TreeMeasure::reference(tree).conds().to_vec();
    if let Some(params) = entropy_path {
        let table = entropy_dp(tree, params, t, big_t, opts.max_newton)?;
        let inv = inverse_gammas(params)?;
        for &m in &starts {
            let e = eta.at(m);
            let log_term = if e > 0.0 { e * e.ln() * inv[m] } else { 0.0 };
            result.values.push(NodeValue { node: m, argument: e, value: log_term + e * table.hmin[m] });
        }
        for (id, q) in table.q.iter().enumerate() {
            if let Some(q) = q {
                for (&c, &qc) in tree.nodes()[id].children.iter().zip(q) {
                    cond[c] = qc;
                }
            }
        }
        result.duality_gap = Some(table.worst_gap);
    } else {
        let mut worst_kkt: f64 = 0.0;
        let mut worst_gap: f64 = 0.0;
        for &m in &starts {
            let e = eta.at(m);
            let leaves = tree.descendants_at(m, big_t);
            let duals: Vec<Arc<dyn DualSlice>> = leaves.iter().map(|&l| field.dual(l)).collect::<Result<_, _>>()?;
            let probs: Vec<f64> = leaves.iter().map(|&l| tree.path_prob(m, l)).collect();
            let pos = |l: usize| leaves.binary_search(&l).expect("leaf below start");
            if e == 0.0 {
                let v: f64 = leaves.iter().enumerate().map(|(k, _)| probs[k] * duals[k].eval(0.0)).sum();
                result.values.push(NodeValue { node: m, argument: e, value: v });
                fill_from_leaf_masses(tree, &poly, m, big_t, &[], &mut cond);
                continue;
            }
            let out = barrier_minimize(
                tree,
                &poly,
                m,
                big_t,
                |l, mu| {
                    let k = pos(l);
                    eval_dual_terms(&duals, probs[k], e, k, mu)
                },
                opts,
            )?;
            // Leaves no martingale measure charges keep Z = 0.
            let dead: f64 = leaves
                .iter()
                .enumerate()
                .filter(|(_, l)| !out.leaves.contains(l))
                .map(|(k, _)| probs[k] * duals[k].eval(0.0))
                .sum();
            result.values.push(NodeValue { node: m, argument: e, value: out.value + dead });
            let masses: Vec<(usize, f64)> = out.leaves.iter().copied().zip(out.mu.iter().copied()).collect();
            fill_from_leaf_masses(tree, &poly, m, big_t, &masses, &mut cond);
            worst_kkt = worst_kkt.max(out.kkt);
            worst_gap = worst_gap.max(out.gap);
        }
        result.kkt_residual = Some(worst_kkt);
        result.duality_gap = Some(worst_gap);
    }
    result.measure = Some(TreeMeasure::new(tree, cond)?);
    Ok(result)
}

/// `min_Q H(Q; t, T)` per node at `t`, with the minimizing measure.
pub fn minimum_entropy(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
    opts: &DualOptions,
) -> Result<EntropyResult, VerifierError> {
    // The entropy is the dual objective at η = 1.
    let field = TreeField::Exponential(params.clone());
    let r = dual_value(tree, &field, &NodeArg::Const(1.0), t, big_t, opts)?;
    Ok(EntropyResult { t, big_t, values: r.values.iter().map(|v| (v.node, v.value)).collect(), measure: r.measure })
}

/// Minimizing measure of the conditional entropy on `[t, T]`.
pub fn minimum_entropy_measure(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
) -> Result<TreeMeasure, VerifierError> {
    minimum_entropy(tree, params, t, big_t, &DualOptions::default())?
        .measure
        .ok_or_else(|| VerifierError::Argument("no minimizing measure".into()))
}

/// Splits a nonnegative density `ζ` on the leaves below `start` (relative
/// to `P(· | start)`) into `η = E[ζ]` and a measure `Q` with
/// `ζ = η dQ/dP`. Returns `(η, Q, martingale residual of Q)`; the residual
/// is zero exactly when `ζ` is a scaled martingale density.
pub fn decompose_density(
    tree: &EventTree,
    start: usize,
    big_t: usize,
    zeta: &[(usize, f64)],
) -> Result<(f64, TreeMeasure, f64), VerifierError> {
    let t = tree.node(start)?.time;
    require_times(tree, t, big_t)?;
    let leaves = tree.descendants_at(start, big_t);
    let mut masses = Vec::with_capacity(leaves.len());
    let mut eta = 0.0;
    for &l in &leaves {
        let z = zeta.iter().find(|(id, _)| *id == l).map(|(_, z)| *z).unwrap_or(0.0);
        if !(z >= 0.0) {
            return Err(VerifierError::Domain(format!("negative density at '{}'", tree.label(l))));
        }
        let w = tree.path_prob(start, l) * z;
        eta += w;
        masses.push((l, w));
    }
    let poly = measure_polytope(tree, t, big_t)?;
    let mut cond = TreeMeasure::reference(tree).conds().to_vec();
    if eta > 0.0 {
        masses.iter_mut().for_each(|(_, w)| *w /= eta);
        fill_from_leaf_masses(tree, &poly, start, big_t, &masses, &mut cond);
    } else {
        fill_from_leaf_masses(tree, &poly, start, big_t, &[], &mut cond);
    }
    let q = TreeMeasure::new(tree, cond)?;
    let mut residual: f64 = 0.0;
    for k in tree.internal_nodes_between(start, big_t) {
        if q.mass(tree, start, k) == 0.0 {
            continue;
        }
        let drift: f64 = tree.nodes()[k].children.iter().map(|&c| q.cond(c) * tree.nodes()[c].increment).sum();
        residual = residual.max(drift.abs());
    }
    Ok((eta, q, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ExponentialFieldParams;

    fn exp_field(tree: &EventTree, a: f64) -> TreeField {
        ExponentialFieldParams::constant(tree.len(), 1.0, a).unwrap().into()
    }

    fn both(tree: &EventTree, field: &TreeField, eta: f64, t: usize, big_t: usize) -> (f64, f64) {
        let e = dual_value(tree, field, &eta.into(), t, big_t, &DualOptions::default()).unwrap();
        let opts = DualOptions { method: DualMethod::Barrier, ..DualOptions::default() };
        let b = dual_value(tree, field, &eta.into(), t, big_t, &opts).unwrap();
        (e.values[0].value, b.values[0].value)
    }

    #[test]
    fn binomial_dual_value() {
        let tree = EventTree::one_period(&[0.8, 0.2], &[1.0, -1.0]).unwrap();
        let (e, b) = both(&tree, &exp_field(&tree, 0.0), 1.0, 0, 1);
        let expected = 0.8 * h_unchecked(0.625) + 0.2 * h_unchecked(2.5);
        assert!((e - expected).abs() < 1e-12);
        assert!((b - expected).abs() < 1e-9);
        assert!((expected - (-1.0 - 0.8f64.ln())).abs() < 1e-12);
        assert!((e + 0.776856).abs() < 1e-6);
    }

    #[test]
    fn uniform_trinomial_minimizer_is_reference() {
        let tree = EventTree::one_period(&[1.0 / 3.0; 3], &[1.0, 0.0, -1.0]).unwrap();
        let r = dual_value(&tree, &exp_field(&tree, 0.0), &1.0.into(), 0, 1, &DualOptions::default()).unwrap();
        assert!((r.values[0].value + 1.0).abs() < 1e-12);
        let q = r.measure.unwrap();
        for c in 1..4 {
            assert!((q.cond(c) - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn skewed_trinomial_matches_segment_search() {
        let tree = EventTree::one_period(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        let (e, b) = both(&tree, &exp_field(&tree, 0.0), 1.0, 0, 1);
        // Oracle: golden-section over α on the segment (α/2, 1-α, α/2).
        let h = |a: f64| {
            let q = [a / 2.0, 1.0 - a, a / 2.0];
            let p = [0.5, 0.3, 0.2];
            (0..3).map(|i| p[i] * h_unchecked(q[i] / p[i])).sum::<f64>()
        };
        let (alpha, v) = crate::numeric::golden_section_min(h, 0.0, 1.0, 1e-12, 500);
        assert!((e - v).abs() < 1e-10, "{e} vs {v}");
        assert!((b - v).abs() < 1e-8);
        assert!((v + 0.930066).abs() < 1e-6);
        assert!((alpha - 0.678269).abs() < 1e-5);
    }

    #[test]
    fn scaling_in_eta() {
        let tree = EventTree::uniform(2, &[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        let f = exp_field(&tree, 0.3);
        let (_, h1) = both(&tree, &f, 1.0, 0, 2);
        for eta in [0.5, 2.0] {
            let (e, b) = both(&tree, &f, eta, 0, 2);
            let closed = eta * eta.ln() + eta * h1;
            assert!((e - closed).abs() < 1e-10);
            assert!((b - closed).abs() < 1e-8, "eta {eta}: {b} vs {closed}");
        }
        let (e0, b0) = both(&tree, &f, 0.0, 0, 2);
        assert_eq!(e0, 0.0);
        assert_eq!(b0, 0.0);
    }

    #[test]
    fn negative_eta_rejected() {
        let tree = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        let r = dual_value(&tree, &exp_field(&tree, 0.0), &(-1.0).into(), 0, 1, &DualOptions::default());
        assert!(matches!(r, Err(VerifierError::Domain(_))));
    }

    #[test]
    fn arbitrage_tree_has_no_dual() {
        let tree = EventTree::one_period(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        let r = dual_value(&tree, &exp_field(&tree, 0.0), &1.0.into(), 0, 1, &DualOptions::default());
        assert!(matches!(r, Err(VerifierError::Nflvr(_))));
    }

    #[test]
    fn density_round_trip() {
        let tree = EventTree::uniform(2, &[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        let f = exp_field(&tree, 0.0);
        let r = dual_value(&tree, &f, &1.0.into(), 0, 2, &DualOptions::default()).unwrap();
        let q = r.measure.unwrap();
        let leaves = tree.descendants_at(0, 2);
        let eta = 1.7;
        let zeta: Vec<(usize, f64)> =
            leaves.iter().map(|&l| (l, eta * q.mass(&tree, 0, l) / tree.path_prob(0, l))).collect();
        let (e, back, resid) = decompose_density(&tree, 0, 2, &zeta).unwrap();
        assert!((e - eta).abs() < 1e-12);
        assert!(resid < 1e-12);
        for &l in &leaves {
            assert!((back.mass(&tree, 0, l) - q.mass(&tree, 0, l)).abs() < 1e-12);
        }
    }
}
