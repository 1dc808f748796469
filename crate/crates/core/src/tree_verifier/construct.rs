use crate::fields::{h_unchecked, ExponentialFieldParams};
use crate::tree_market::{measure_polytope, EventTree, TreeMeasure};

use super::dual::{entropy_dp, reachable};
use super::{inverse_gammas, require_times, VerifierError};

/// Range of `E^Q[1/γ_T | node]` over all martingale measures on `[t, T]`,
/// for every node in `[t, T]` that some measure reaches. The expectation
/// is linear in each one-step law, so the extremes come from a backward
/// recursion over polytope vertices.
pub fn inverse_gamma_martingale_extremes(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
) -> Result<Vec<Option<(f64, f64)>>, VerifierError> {
    require_times(tree, t, big_t)?;
    let inv = inverse_gammas(params)?;
    let poly = measure_polytope(tree, t, big_t)?;
    let reach = reachable(tree, &poly);
    let mut out: Vec<Option<(f64, f64)>> = vec![None; tree.len()];
    for id in (0..tree.len()).rev() {
        let n = &tree.nodes()[id];
        if n.time < t || n.time > big_t || !reach[id] {
            continue;
        }
        if n.time == big_t {
            out[id] = Some((inv[id], inv[id]));
            continue;
        }
        let np = poly.node(id).expect("polytope covers [t, T)");
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &np.vertices {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, &c) in n.children.iter().enumerate() {
                if v[k] > 0.0 {
                    let (cl, ch) = out[c].expect("charged child is reachable");
                    a += v[k] * cl;
                    b += v[k] * ch;
                }
            }
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if lo.is_finite() {
            out[id] = Some((lo, hi));
        }
    }
    Ok(out)
}

/// Largest `|E^Q[1/γ_T | node] - 1/γ(node)|` over measures and reachable
/// nodes in `[t, T]`, with the node attaining it.
pub(crate) fn inverse_gamma_deviation(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
) -> Result<(f64, Option<usize>), VerifierError> {
    let ext = inverse_gamma_martingale_extremes(tree, params, t, big_t)?;
    let inv = inverse_gammas(params)?;
    let mut worst = (0.0, None);
    for (id, e) in ext.iter().enumerate() {
        if let Some((lo, hi)) = e {
            let dev = (lo - inv[id]).abs().max((hi - inv[id]).abs());
            if dev > worst.0 || worst.1.is_none() {
                worst = (dev, Some(id));
            }
        }
    }
    Ok(worst)
}

pub(crate) fn inverse_gamma_is_martingale(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    t: usize,
    big_t: usize,
    tol: f64,
) -> Result<bool, VerifierError> {
    let (dev, _) = inverse_gamma_deviation(tree, params, t, big_t)?;
    let scale = inverse_gammas(params)?.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    Ok(dev <= tol * scale)
}

/// Result of replicating `1/γ` by a self-financing holding in the asset.
#[derive(Debug, Clone, PartialEq)]
pub enum Replication {
    /// Holding per internal node (`None` at the leaves).
    Replicable(Vec<Option<f64>>),
    /// First node (in index order) where no holding matches every branch.
    Infeasible { node: usize, residual: f64 },
}

/// Solves `π ΔS_c = 1/γ_c - 1/γ_node` across the children of every node,
/// in the least-squares sense, and accepts residuals up to `1e-10`.
pub fn replicate_inverse_gamma(
    tree: &EventTree,
    params: &ExponentialFieldParams,
) -> Result<Replication, VerifierError> {
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    let inv = inverse_gammas(params)?;
    let mut pi = vec![None; tree.len()];
    for (id, n) in tree.nodes().iter().enumerate() {
        if n.children.is_empty() {
            continue;
        }
        let (mut sdd, mut sdy) = (0.0, 0.0);
        for &c in &n.children {
            let d = tree.nodes()[c].increment;
            sdd += d * d;
            sdy += d * (inv[c] - inv[id]);
        }
        let p = if sdd > 0.0 { sdy / sdd } else { 0.0 };
        let residual =
            n.children.iter().map(|&c| (p * tree.nodes()[c].increment - (inv[c] - inv[id])).abs()).fold(0.0, f64::max);
        if residual > 1e-10 {
            return Ok(Replication::Infeasible { node: id, residual });
        }
        pi[id] = Some(p);
    }
    Ok(Replication::Replicable(pi))
}

/// The forward measure `dQ_γ/dQ = (γ_0/γ_T)` on `[0, T]`, returned as
/// one-step conditional laws. Fails when the weights do not sum to one.
pub fn forward_measure(
    tree: &EventTree,
    q: &TreeMeasure,
    params: &ExponentialFieldParams,
    big_t: usize,
) -> Result<TreeMeasure, VerifierError> {
    require_times(tree, 0, big_t)?;
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    let inv = inverse_gammas(params)?;
    let root = tree.root();
    let mut weight = vec![0.0; tree.len()];
    let mut total = 0.0;
    for l in tree.descendants_at(root, big_t) {
        let w = q.mass(tree, root, l) * inv[l] / inv[root];
        total += w;
        let mut cur = l;
        loop {
            weight[cur] += w;
            match tree.nodes()[cur].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(VerifierError::InverseGammaNotMartingale(format!("forward-measure weights sum to {total}, not 1")));
    }
    let mut cond = q.conds().to_vec();
    for k in tree.internal_nodes_between(root, big_t) {
        if weight[k] > 0.0 {
            for &c in &tree.nodes()[k].children {
                cond[c] = weight[c] / weight[k];
            }
        }
    }
    // Renormalize away rounding before validation.
    for n in tree.nodes() {
        let s: f64 = n.children.iter().map(|&c| cond[c]).sum();
        if s > 0.0 {
            for &c in &n.children {
                cond[c] /= s;
            }
        }
    }
    Ok(TreeMeasure::new(tree, cond)?)
}

/// Sets `A` at every node before `T` so that the minimum-entropy identity
/// `h(1/γ) - A/γ = min_Q H(Q; ·, T)` holds, keeping `γ` and `A_T`.
/// Refuses fields where `1/γ` is not a martingale under every measure.
pub fn calibrate_a_shift(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    big_t: usize,
) -> Result<ExponentialFieldParams, VerifierError> {
    require_times(tree, 0, big_t)?;
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    if !inverse_gamma_is_martingale(tree, params, 0, big_t, 1e-12)? {
        let (dev, node) = inverse_gamma_deviation(tree, params, 0, big_t)?;
        let at = node.map(|n| tree.label(n).to_string()).unwrap_or_default();
        return Err(VerifierError::InverseGammaNotMartingale(format!("deviation {dev:e} at '{at}'")));
    }
    let table = entropy_dp(tree, params, 0, big_t, 200)?;
    let inv = inverse_gammas(params)?;
    let mut out = params.clone();
    for (id, n) in tree.nodes().iter().enumerate() {
        if n.time < big_t && table.hmin[id].is_finite() {
            out.set_a_shift(id, (h_unchecked(inv[id]) - table.hmin[id]) / inv[id])?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial_gamma(inv_root: f64, inv_leaves: [f64; 2]) -> (EventTree, ExponentialFieldParams) {
        let tree = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        let g = vec![1.0 / inv_root, 1.0 / inv_leaves[0], 1.0 / inv_leaves[1]];
        let p = ExponentialFieldParams::new(g, vec![0.0; 3]).unwrap();
        (tree, p)
    }

    #[test]
    fn binomial_calibrated_initial_value() {
        let tree = EventTree::one_period(&[0.8, 0.2], &[1.0, -1.0]).unwrap();
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
        let solved = calibrate_a_shift(&tree, &f, 1).unwrap();
        assert!((solved.a0() - 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trinomial_calibrated_initial_value() {
        let tree = EventTree::one_period(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
        let solved = calibrate_a_shift(&tree, &f, 1).unwrap();
        let expected = (0.3 + 2.0 * 0.1f64.sqrt()).ln();
        assert!((solved.a0() - expected).abs() < 1e-10, "{} vs {expected}", solved.a0());
    }

    #[test]
    fn replication_examples() {
        let tree = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        let f = ExponentialFieldParams::constant(tree.len(), 2.0, 0.0).unwrap();
        assert_eq!(replicate_inverse_gamma(&tree, &f).unwrap(), Replication::Replicable(vec![Some(0.0), None, None]));

        let (tree, p) = binomial_gamma(2.0, [2.5, 1.5]);
        match replicate_inverse_gamma(&tree, &p).unwrap() {
            Replication::Replicable(pi) => assert!((pi[0].unwrap() - 0.5).abs() < 1e-14),
            other => panic!("{other:?}"),
        }

        let tree = EventTree::one_period(&[0.4, 0.3, 0.3], &[1.0, 0.0, -1.0]).unwrap();
        let g = vec![0.5, 1.0 / 2.5, 1.0 / 2.2, 1.0 / 1.5];
        let p = ExponentialFieldParams::new(g, vec![0.0; 4]).unwrap();
        assert!(matches!(replicate_inverse_gamma(&tree, &p).unwrap(), Replication::Infeasible { node: 0, .. }));
    }

    #[test]
    fn forward_measure_examples() {
        let (tree, p) = binomial_gamma(2.0, [2.5, 1.5]);
        let q = TreeMeasure::new(&tree, vec![1.0, 0.5, 0.5]).unwrap();
        let qg = forward_measure(&tree, &q, &p, 1).unwrap();
        assert!((qg.cond(1) - 0.625).abs() < 1e-15);
        assert!((qg.cond(2) - 0.375).abs() < 1e-15);

        let f = ExponentialFieldParams::constant(tree.len(), 3.0, 1.0).unwrap();
        assert_eq!(forward_measure(&tree, &q, &f, 1).unwrap(), q);

        let (tree, bad) = binomial_gamma(0.5, [2.5, 1.5]);
        assert!(matches!(forward_measure(&tree, &q, &bad, 1), Err(VerifierError::InverseGammaNotMartingale(_))));
    }

    #[test]
    fn inverse_gamma_extremes() {
        // γ_1 = (2, 1) on the leaves: E^Q[1/γ_1] = ¾ under the unique Q.
        let (tree, p) = binomial_gamma(0.75, [0.5, 1.0]);
        let ext = inverse_gamma_martingale_extremes(&tree, &p, 0, 1).unwrap();
        assert_eq!(ext[0], Some((0.75, 0.75)));
        assert!(inverse_gamma_is_martingale(&tree, &p, 0, 1, 1e-12).unwrap());
        let (tree, p) = binomial_gamma(2.0, [0.5, 1.0]);
        assert!(!inverse_gamma_is_martingale(&tree, &p, 0, 1, 1e-12).unwrap());
        assert!(calibrate_a_shift(&tree, &p, 1).is_err());
    }
}
