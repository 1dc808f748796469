use crate::fields::{h_unchecked, ExponentialFieldParams};
use crate::numeric::golden_section_min;
use crate::report::{CheckEntry, Verdict, VerificationReport};
use crate::tree_market::{measure_polytope, EventTree, TreeMeasure};

use super::construct::{inverse_gamma_deviation, inverse_gamma_is_martingale};
use super::dual::{dual_value, entropy_dp, minimum_entropy, reachable, DualOptions};
use super::primal::{PrimalOptions, PrimalSolver};
use super::{inverse_gammas, require_times, NodeArg, TreeField, VerifierError};

/// `(t, T)` with `t <= T`.
pub type TimePair = (usize, usize);

const OUTSIDE_REGIME: &str = "value is +inf: outside the validated regime";

/// Worst violation seen so far, with where it happened.
#[derive(Debug, Clone, Copy)]
struct Worst {
    gap: f64,
    node: Option<usize>,
    arg: f64,
    value: f64,
    target: f64,
}

impl Worst {
    fn new() -> Self {
        Self { gap: 0.0, node: None, arg: f64::NAN, value: f64::NAN, target: f64::NAN }
    }

    fn update(&mut self, node: usize, arg: f64, value: f64, target: f64) {
        let gap = (value - target).abs();
        if self.node.is_none() || gap > self.gap || gap.is_nan() {
            *self = Self { gap, node: Some(node), arg, value, target };
        }
    }

    fn entry(&self, tree: &EventTree, id: String, tag: &str, tol: f64, arg_name: &str) -> CheckEntry {
        let mut e = CheckEntry::new(id, tag, Verdict::from_bool(self.gap <= tol))
            .with_value(self.gap)
            .with_target(0.0)
            .with_tolerance(tol);
        if let Some(n) = self.node {
            e = e.with_node(tree.label(n)).with_detail(format!(
                "worst at {arg_name} = {}: computed {}, expected {}",
                self.arg, self.value, self.target
            ));
        }
        e
    }
}

/// Checks `u(ξ; t, T) = U(t, ξ)` at every node at `t`, for every pair and
/// every `ξ` in the grid.
pub fn check_self_generation_primal(
    tree: &EventTree,
    field: &TreeField,
    pairs: &[TimePair],
    xi_grid: &[f64],
    tol: f64,
    opts: &PrimalOptions,
) -> Result<VerificationReport, VerifierError> {
    if xi_grid.is_empty() {
        return Err(VerifierError::Argument("empty wealth grid".into()));
    }
    let mut rep = VerificationReport::new();
    for &(t, big_t) in pairs {
        require_times(tree, t, big_t)?;
        let id = format!("self_generation.primal[{t},{big_t}]");
        let tag = "self-generation/primal";
        let solver = if t < big_t { Some(PrimalSolver::new(tree, field, t, big_t, opts)?) } else { None };
        let mut worst = Worst::new();
        let mut infinite = false;
        for m in tree.nodes_at(t) {
            for &x in xi_grid {
                let u = match &solver {
                    Some(s) => s.value(m, x)?,
                    None => field.eval(m, x)?,
                };
                infinite |= u == f64::INFINITY;
                worst.update(m, x, u, field.eval(m, x)?);
            }
        }
        if infinite {
            rep.push(CheckEntry::new(id, tag, Verdict::Undetermined).with_detail(OUTSIDE_REGIME));
        } else {
            rep.push(worst.entry(tree, id, tag, tol, "xi"));
        }
    }
    Ok(rep)
}

/// Checks `v(η; t, T) = V(t, η)` at every node at `t`.
pub fn check_self_generation_dual(
    tree: &EventTree,
    field: &TreeField,
    pairs: &[TimePair],
    eta_grid: &[f64],
    tol: f64,
    opts: &DualOptions,
) -> Result<VerificationReport, VerifierError> {
    if eta_grid.is_empty() {
        return Err(VerifierError::Argument("empty dual grid".into()));
    }
    let mut rep = VerificationReport::new();
    for &(t, big_t) in pairs {
        require_times(tree, t, big_t)?;
        let id = format!("self_generation.dual[{t},{big_t}]");
        let tag = "self-generation/dual";
        let mut worst = Worst::new();
        let mut infinite = false;
        for &eta in eta_grid {
            let r = dual_value(tree, field, &NodeArg::Const(eta), t, big_t, opts)?;
            for nv in &r.values {
                infinite |= nv.value == f64::INFINITY;
                worst.update(nv.node, eta, nv.value, field.eval_dual(nv.node, eta)?);
            }
        }
        if infinite {
            rep.push(CheckEntry::new(id, tag, Verdict::Undetermined).with_detail(OUTSIDE_REGIME));
        } else {
            rep.push(worst.entry(tree, id, tag, tol, "eta"));
        }
    }
    Ok(rep)
}

/// Checks `u(ξ) <= v(η) + ξ η` on the whole grid product, reporting the
/// smallest slack.
pub fn check_weak_duality(
    tree: &EventTree,
    field: &TreeField,
    t: usize,
    big_t: usize,
    xi_grid: &[f64],
    eta_grid: &[f64],
    slack_tol: f64,
) -> Result<VerificationReport, VerifierError> {
    require_times(tree, t, big_t)?;
    let starts: Vec<usize> = tree.nodes_at(t).collect();
    let u = primal_table(tree, field, t, big_t, &starts, xi_grid)?;
    let mut min_slack = f64::INFINITY;
    let mut at = (0, f64::NAN, f64::NAN);
    for &eta in eta_grid {
        let r = dual_value(tree, field, &NodeArg::Const(eta), t, big_t, &DualOptions::default())?;
        for (i, &m) in starts.iter().enumerate() {
            let v = r.value_at(m).expect("dual value at every start node");
            for (j, &x) in xi_grid.iter().enumerate() {
                let slack = v + x * eta - u[i][j];
                if slack < min_slack {
                    min_slack = slack;
                    at = (m, x, eta);
                }
            }
        }
    }
    let mut rep = VerificationReport::new();
    rep.push(
        CheckEntry::new(
            format!("weak_duality[{t},{big_t}]"),
            "duality/weak",
            Verdict::from_bool(min_slack >= -slack_tol),
        )
        .with_value(min_slack)
        .with_target(0.0)
        .with_tolerance(slack_tol)
        .with_node(tree.label(at.0))
        .with_detail(format!("smallest slack v + xi*eta - u at xi = {}, eta = {}", at.1, at.2)),
    );
    Ok(rep)
}

fn primal_table(
    tree: &EventTree,
    field: &TreeField,
    t: usize,
    big_t: usize,
    starts: &[usize],
    xi_grid: &[f64],
) -> Result<Vec<Vec<f64>>, VerifierError> {
    if t == big_t {
        return starts.iter().map(|&m| xi_grid.iter().map(|&x| Ok(field.eval(m, x)?)).collect()).collect();
    }
    let solver = PrimalSolver::new(tree, field, t, big_t, &PrimalOptions::default())?;
    starts.iter().map(|&m| xi_grid.iter().map(|&x| solver.value(m, x)).collect()).collect()
}

/// A minimizing pair `(η̂, Q̂)` for `u(ξ) = min_η (v(η) + ξ η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAttainer {
    pub node: usize,
    pub xi: f64,
    pub eta_hat: f64,
    pub measure: TreeMeasure,
}

#[derive(Debug, Clone)]
pub struct ConjugacyCheck {
    pub report: VerificationReport,
    pub attainers: Vec<DualAttainer>,
}

/// Minimizes a function of `s` over a sorted grid and refines by golden
/// section between the neighbours of the best point, extending the grid
/// outward by its span when the best point is at an end. `None` when the
/// minimum keeps moving outward.
fn refine_min<F>(mut f: F, grid: &[f64]) -> Option<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let mut pts: Vec<f64> = grid.to_vec();
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    if pts.len() < 2 {
        let s = *pts.first()?;
        let step = 1.0;
        pts = vec![s - step, s, s + step];
    }
    for _ in 0..64 {
        let vals: Vec<f64> = pts.iter().map(|&s| f(s)).collect();
        let best =
            vals.iter().enumerate().filter(|(_, v)| !v.is_nan()).min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)?;
        let n = pts.len();
        let span = pts[n - 1] - pts[0];
        if best == 0 {
            let lo = pts[0];
            pts.insert(0, lo - span);
            pts.truncate(3.max(n / 2));
            continue;
        }
        if best == n - 1 {
            let hi = pts[n - 1];
            pts.push(hi + span);
            let drop = pts.len() - 3.max(n / 2);
            pts.drain(..drop);
            continue;
        }
        let (x, v) = golden_section_min(&mut f, pts[best - 1], pts[best + 1], 1e-13, 400);
        return Some(if v <= vals[best] { (x, v) } else { (pts[best], vals[best]) });
    }
    None
}

/// Checks `u(ξ) = min_η (v(η) + ξ η)` and `v(η) = max_ξ (u(ξ) - ξ η)` at
/// every node at `t`, returning the attaining `(η̂, Q̂)` for each `ξ`.
pub fn check_value_conjugacy(
    tree: &EventTree,
    field: &TreeField,
    t: usize,
    big_t: usize,
    xi_grid: &[f64],
    eta_grid: &[f64],
    tol: f64,
) -> Result<ConjugacyCheck, VerifierError> {
    require_times(tree, t, big_t)?;
    if xi_grid.is_empty() || eta_grid.is_empty() {
        return Err(VerifierError::Argument("conjugacy grids must be nonempty".into()));
    }
    if let Some(bad) = eta_grid.iter().find(|e| !(**e > 0.0)) {
        return Err(VerifierError::Domain(format!("dual grid point {bad} is not positive")));
    }
    let starts: Vec<usize> = tree.nodes_at(t).collect();
    let opts = DualOptions::default();
    let solver =
        if t < big_t { Some(PrimalSolver::new(tree, field, t, big_t, &PrimalOptions::default())?) } else { None };
    let u_at = |m: usize, x: f64| -> Result<f64, VerifierError> {
        match &solver {
            Some(s) => s.value(m, x),
            None => Ok(field.eval(m, x)?),
        }
    };
    let v_at = |m: usize, eta: f64| -> Result<f64, VerifierError> {
        let r = dual_value(tree, field, &NodeArg::Const(eta), t, big_t, &opts)?;
        Ok(r.value_at(m).expect("dual value at every start node"))
    };
    let log_eta: Vec<f64> = eta_grid.iter().map(|e| e.ln()).collect();

    let mut rep = VerificationReport::new();
    let mut attainers = Vec::new();
    let mut worst_u = Worst::new();
    let mut worst_v = Worst::new();
    let mut unbounded = false;
    let mut err: Option<VerifierError> = None;
    for &m in &starts {
        for &x in xi_grid {
            let u = u_at(m, x)?;
            let found = refine_min(
                |s| match v_at(m, s.exp()) {
                    Ok(v) => v + x * s.exp(),
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                &log_eta,
            );
            if let Some(e) = err.take() {
                return Err(e);
            }
            match found {
                Some((s, val)) => {
                    worst_u.update(m, x, u, val);
                    let eta_hat = s.exp();
                    let r = dual_value(tree, field, &NodeArg::Const(eta_hat), t, big_t, &opts)?;
                    attainers.push(DualAttainer {
                        node: m,
                        xi: x,
                        eta_hat,
                        measure: r.measure.unwrap_or_else(|| TreeMeasure::reference(tree)),
                    });
                }
                None => unbounded = true,
            }
        }
        for &eta in eta_grid {
            let v = v_at(m, eta)?;
            let found = refine_min(
                |x| match u_at(m, x) {
                    Ok(u) => -(u - x * eta),
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                xi_grid,
            );
            if let Some(e) = err.take() {
                return Err(e);
            }
            match found {
                Some((_, neg)) => worst_v.update(m, eta, v, -neg),
                None => unbounded = true,
            }
        }
    }
    let id_u = format!("conjugacy.primal[{t},{big_t}]");
    let id_v = format!("conjugacy.dual[{t},{big_t}]");
    if unbounded {
        rep.push(CheckEntry::new(id_u, "duality/conjugacy", Verdict::Undetermined).with_detail(OUTSIDE_REGIME));
    } else {
        rep.push(worst_u.entry(tree, id_u, "duality/conjugacy", tol, "xi"));
        rep.push(worst_v.entry(tree, id_v, "duality/conjugacy", tol, "eta"));
    }
    Ok(ConjugacyCheck { report: rep, attainers })
}

/// Outcome of the three checks characterizing exponential forward
/// performances: positivity, the martingale property of `1/γ` under every
/// martingale measure, and the minimum-entropy identity for `A`.
#[derive(Debug, Clone)]
pub struct ExponentialConditions {
    pub report: VerificationReport,
    pub positivity: bool,
    pub inverse_gamma_martingale: bool,
    pub entropy_identity: bool,
}

impl ExponentialConditions {
    pub fn all(&self) -> bool {
        self.positivity && self.inverse_gamma_martingale && self.entropy_identity
    }
}

pub fn check_exponential_conditions(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    pairs: &[TimePair],
    tol: f64,
) -> Result<ExponentialConditions, VerifierError> {
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    let mut rep = VerificationReport::new();
    let positivity =
        params.gammas().iter().all(|g| *g > 0.0 && g.is_finite()) && params.a_shifts().iter().all(|a| a.is_finite());
    rep.push(
        CheckEntry::new("exponential.positivity", "exponential/positive-adapted", Verdict::from_bool(positivity))
            .with_detail("gamma > 0 and finite A at every node; adaptedness is structural and integrability is automatic on a finite tree"),
    );
    let inv = inverse_gammas(params)?;
    let mut martingale = true;
    let mut identity = true;
    for &(t, big_t) in pairs {
        require_times(tree, t, big_t)?;
        let (dev, node) = inverse_gamma_deviation(tree, params, t, big_t)?;
        let ok = dev <= tol;
        martingale &= ok;
        let mut e = CheckEntry::new(
            format!("exponential.inverse_gamma_martingale[{t},{big_t}]"),
            "exponential/inverse-gamma-martingale",
            Verdict::from_bool(ok),
        )
        .with_value(dev)
        .with_target(0.0)
        .with_tolerance(tol)
        .with_detail("largest |E^Q[1/gamma_T | node] - 1/gamma(node)| over polytope vertices");
        if let Some(n) = node {
            e = e.with_node(tree.label(n));
        }
        rep.push(e);

        let hmin = minimum_entropy(tree, params, t, big_t, &DualOptions::default())?;
        let mut worst = Worst::new();
        for (m, h) in &hmin.values {
            let target = h_unchecked(inv[*m]) - inv[*m] * params.a_shifts()[*m];
            worst.update(*m, t as f64, target, *h);
        }
        let entry = worst.entry(
            tree,
            format!("exponential.entropy_identity[{t},{big_t}]"),
            "exponential/entropy-identity",
            tol,
            "t",
        );
        identity &= !entry.verdict.is_failure();
        rep.push(entry);
    }
    Ok(ExponentialConditions {
        report: rep,
        positivity,
        inverse_gamma_martingale: martingale,
        entropy_identity: identity,
    })
}

/// Enumerates product measures built from one polytope vertex per node in
/// `[t, T)`, as conditional-probability vectors.
fn vertex_measures(tree: &EventTree, t: usize, big_t: usize, max_count: usize) -> Result<Vec<Vec<f64>>, VerifierError> {
    let poly = measure_polytope(tree, t, big_t)?;
    let choices: Vec<(usize, &Vec<Vec<f64>>)> =
        poly.nodes.iter().filter(|(_, np)| !np.is_empty()).map(|(&id, np)| (id, &np.vertices)).collect();
    let count = choices.iter().try_fold(1usize, |acc, (_, v)| acc.checked_mul(v.len()));
    match count {
        Some(c) if c <= max_count => {}
        Some(c) => return Err(VerifierError::TooManyVertices(c)),
        None => return Err(VerifierError::TooManyVertices(usize::MAX)),
    }
    let base = TreeMeasure::reference(tree).conds().to_vec();
    let mut out = vec![base];
    for (id, verts) in choices {
        let mut next = Vec::with_capacity(out.len() * verts.len());
        for cond in &out {
            for v in verts {
                let mut c = cond.clone();
                for (&child, &q) in tree.nodes()[id].children.iter().zip(v) {
                    c[child] = q;
                }
                next.push(c);
            }
        }
        out = next;
    }
    Ok(out)
}

/// `E^{Q_γ}[A_T - log(Z_T/Z_s) | m]` where `Q_γ` is the forward measure of
/// `Q` conditioned on `m`; `None` when `Q` does not reach a leaf below `m`.
fn forward_drift(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    inv: &[f64],
    q: &TreeMeasure,
    m: usize,
    big_t: usize,
) -> Option<f64> {
    let leaves = tree.descendants_at(m, big_t);
    let weights: Vec<f64> = leaves.iter().map(|&l| q.mass(tree, m, l) * inv[l]).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut acc = 0.0;
    for (k, &l) in leaves.iter().enumerate() {
        let qg = weights[k] / total;
        if qg > 0.0 {
            acc += qg * (params.a_shifts()[l] - (qg / tree.path_prob(m, l)).ln());
        }
    }
    Some(acc)
}

/// `F = A - log Z^{Q_γ}` is a `Q_γ`-supermartingale for every vertex
/// measure `Q`, and a martingale under the forward measure of the
/// minimum-entropy measure.
pub fn check_forward_supermartingale(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
    tol: f64,
) -> Result<VerificationReport, VerifierError> {
    require_times(tree, t, big_t)?;
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    if !inverse_gamma_is_martingale(tree, params, t, big_t, 1e-10)? {
        let (dev, _) = inverse_gamma_deviation(tree, params, t, big_t)?;
        return Err(VerifierError::InverseGammaNotMartingale(format!("deviation {dev:e} on [{t}, {big_t}]")));
    }
    let inv = inverse_gammas(params)?;
    let poly = measure_polytope(tree, t, big_t)?;
    let reach = reachable(tree, &poly);
    let checked: Vec<usize> = (0..tree.len())
        .filter(|&id| reach[id] && tree.nodes()[id].time >= t && tree.nodes()[id].time < big_t)
        .collect();

    // Supermartingale inequality under every vertex measure.
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_node = None;
    for cond in vertex_measures(tree, t, big_t, 100_000)? {
        let q = TreeMeasure::new(tree, cond)?;
        for &m in &checked {
            let start = tree.ancestor_at(m, t)?;
            if q.mass(tree, start, m) == 0.0 {
                continue;
            }
            if let Some(e) = forward_drift(tree, params, &inv, &q, m, big_t) {
                let excess = e - params.a_shifts()[m];
                if excess > worst_excess {
                    worst_excess = excess;
                    worst_node = Some(m);
                }
            }
        }
    }
    let mut rep = VerificationReport::new();
    let mut e = CheckEntry::new(
        format!("forward.supermartingale[{t},{big_t}]"),
        "forward-measure/supermartingale",
        Verdict::from_bool(worst_excess <= tol),
    )
    .with_value(worst_excess)
    .with_target(0.0)
    .with_tolerance(tol)
    .with_detail("largest E^{Q_gamma}[F_T | node] - F(node) over vertex measures");
    if let Some(n) = worst_node {
        e = e.with_node(tree.label(n));
    }
    rep.push(e);

    // Martingale property under the minimum-entropy measure.
    let table = entropy_dp(tree, params, t, big_t, 200)?;
    let q_hat = table.measure(tree)?;
    let mut worst = Worst::new();
    for &m in &checked {
        let start = tree.ancestor_at(m, t)?;
        if q_hat.mass(tree, start, m) == 0.0 {
            continue;
        }
        if let Some(e) = forward_drift(tree, params, &inv, &q_hat, m, big_t) {
            worst.update(m, tree.nodes()[m].time as f64, e, params.a_shifts()[m]);
        }
    }
    rep.push(worst.entry(tree, format!("forward.martingale[{t},{big_t}]"), "forward-measure/martingale", tol, "time"));
    Ok(rep)
}
