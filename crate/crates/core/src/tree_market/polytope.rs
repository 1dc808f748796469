use std::collections::{BTreeMap, BTreeSet};

use super::lp::{maximize, LpOutcome};
use super::{EventTree, MarketError};
use crate::report::{CheckEntry, Verdict, VerificationReport};

/// Mass below this is treated as zero when deciding supports.
pub const SUPPORT_TOL: f64 = 1e-12;

/// One-step martingale polytope `{q >= 0, Σ q = 1, Σ q ΔS = 0}` at a node,
/// with `q_c = 0` forced on children that no martingale measure can charge.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePolytope {
    pub node: usize,
    pub children: Vec<usize>,
    pub increments: Vec<f64>,
    /// Children whose subtree admits a martingale measure up to `T`.
    pub allowed: Vec<bool>,
    /// Vertices, indexed like `children`.
    pub vertices: Vec<Vec<f64>>,
}

impl NodePolytope {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Barycentre of the vertices: a point of the relative interior.
    pub fn interior_point(&self) -> Option<Vec<f64>> {
        if self.vertices.is_empty() {
            return None;
        }
        let k = self.vertices.len() as f64;
        let mut q = vec![0.0; self.children.len()];
        for v in &self.vertices {
            for (qi, vi) in q.iter_mut().zip(v) {
                *qi += vi / k;
            }
        }
        Some(q)
    }

    /// Children that some measure of the polytope charges.
    pub fn support(&self) -> Vec<bool> {
        (0..self.children.len()).map(|i| self.vertices.iter().any(|v| v[i] > SUPPORT_TOL)).collect()
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        if q.len() != self.children.len() || self.is_empty() {
            return false;
        }
        let sum: f64 = q.iter().sum();
        let drift: f64 = q.iter().zip(&self.increments).map(|(a, b)| a * b).sum();
        q.iter().zip(&self.allowed).all(|(&qi, &ok)| qi >= -tol && (ok || qi.abs() <= tol))
            && (sum - 1.0).abs() <= tol
            && drift.abs() <= tol
    }

    /// Largest probability any polytope measure puts on child position `k`,
    /// computed by linear programming.
    pub fn max_mass(&self, k: usize) -> Option<f64> {
        one_step_max_mass(&self.increments, &self.allowed, k)
    }
}

/// Per-node one-step polytopes for all nodes with time in `[t, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePolytope {
    pub t: usize,
    pub big_t: usize,
    pub nodes: BTreeMap<usize, NodePolytope>,
}

impl MeasurePolytope {
    pub fn node(&self, id: usize) -> Option<&NodePolytope> {
        self.nodes.get(&id)
    }

    /// Whether a martingale measure on `[t, T]` exists conditionally on `id`.
    pub fn viable(&self, id: usize) -> bool {
        match self.nodes.get(&id) {
            Some(p) => !p.is_empty(),
            None => true,
        }
    }
}

/// Vertex enumeration of `{q >= 0, Σ q = 1, Σ q d = 0, q_c = 0 unless allowed}`.
///
/// With a single asset, basic solutions have at most two nonzero entries:
/// unit vectors on zero-increment branches, and the two-point measures
/// pairing a positive with a negative increment.
pub fn one_step_vertices(increments: &[f64], allowed: &[bool]) -> Vec<Vec<f64>> {
    let n = increments.len();
    let mut out = Vec::new();
    for i in 0..n {
        if allowed[i] && increments[i] == 0.0 {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            out.push(v);
        }
    }
    for i in 0..n {
        for j in 0..n {
            if !allowed[i] || !allowed[j] {
                continue;
            }
            let (di, dj) = (increments[i], increments[j]);
            if di > 0.0 && dj < 0.0 {
                let mut v = vec![0.0; n];
                v[i] = -dj / (di - dj);
                v[j] = di / (di - dj);
                out.push(v);
            }
        }
    }
    out
}

fn one_step_rows(increments: &[f64], allowed: &[bool]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let cols: Vec<usize> = (0..increments.len()).filter(|&i| allowed[i]).collect();
    let a = vec![vec![1.0; cols.len()], cols.iter().map(|&i| increments[i]).collect()];
    (cols, a)
}

/// LP: `max q_k` over the one-step polytope; `None` if it is empty.
pub fn one_step_max_mass(increments: &[f64], allowed: &[bool], k: usize) -> Option<f64> {
    if !allowed[k] {
        let (cols, a) = one_step_rows(increments, allowed);
        return match maximize(&vec![0.0; cols.len()], &a, &[1.0, 0.0]) {
            LpOutcome::Optimal { .. } => Some(0.0),
            _ => None,
        };
    }
    let (cols, a) = one_step_rows(increments, allowed);
    let c: Vec<f64> = cols.iter().map(|&i| if i == k { 1.0 } else { 0.0 }).collect();
    maximize(&c, &a, &[1.0, 0.0]).optimal_value()
}

/// LP: largest `ε` with a martingale `q >= ε` on all branches. `None` when
/// even `ε = 0` is infeasible.
pub fn one_step_positivity_margin(increments: &[f64]) -> Option<f64> {
    // q = s + ε with s >= 0: Σ s + nε = 1, Σ s d + ε Σ d = 0.
    let n = increments.len();
    let mut row_sum = vec![1.0; n + 1];
    row_sum[n] = n as f64;
    let mut row_drift: Vec<f64> = increments.to_vec();
    row_drift.push(increments.iter().sum());
    let mut c = vec![0.0; n + 1];
    c[n] = 1.0;
    maximize(&c, &[row_sum, row_drift], &[1.0, 0.0]).optimal_value()
}

/// Describes all absolutely continuous martingale measures on `[t, T]`,
/// node by node, for nodes with time in `[t, T)`.
pub fn measure_polytope(tree: &EventTree, t: usize, big_t: usize) -> Result<MeasurePolytope, MarketError> {
    tree.check_times(t, big_t)?;
    let mut viable = vec![true; tree.len()];
    let mut nodes = BTreeMap::new();
    for id in (0..tree.len()).rev() {
        let n = &tree.nodes()[id];
        if n.time < t || n.time >= big_t {
            continue;
        }
        let increments: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].increment).collect();
        let allowed: Vec<bool> = n.children.iter().map(|&c| viable[c]).collect();
        let vertices = one_step_vertices(&increments, &allowed);
        viable[id] = !vertices.is_empty();
        nodes.insert(id, NodePolytope { node: id, children: n.children.clone(), increments, allowed, vertices });
    }
    Ok(MeasurePolytope { t, big_t, nodes })
}

/// Absence of arbitrage: every node admits a strictly positive one-step
/// martingale measure (checked by LP), i.e. an equivalent martingale
/// measure exists.
pub fn check_nflvr(tree: &EventTree) -> Result<(bool, VerificationReport), MarketError> {
    tree.ensure_valid().map_err(|e| MarketError::Precondition(e.to_string()))?;
    let mut rep = VerificationReport::new();
    let tag = "no-arbitrage/equivalent-martingale-measure";
    let mut ok = true;
    let mut worst: Option<(usize, f64)> = None;
    for (id, n) in tree.nodes().iter().enumerate() {
        if n.children.is_empty() {
            continue;
        }
        let d: Vec<f64> = n.children.iter().map(|&c| tree.nodes()[c].increment).collect();
        let margin = one_step_positivity_margin(&d).unwrap_or(f64::NEG_INFINITY);
        if !(margin > SUPPORT_TOL) {
            ok = false;
            rep.push(
                CheckEntry::new(format!("nflvr@{}", n.label), tag, Verdict::Fail)
                    .with_node(&n.label)
                    .with_value(margin)
                    .with_detail(if margin.is_finite() {
                        "martingale measures exist but none charges every branch".to_string()
                    } else {
                        "no one-step martingale measure: arbitrage".to_string()
                    }),
            );
        }
        if worst.is_none_or(|(_, m)| margin < m) {
            worst = Some((id, margin));
        }
    }
    let mut summary = CheckEntry::new("nflvr", tag, Verdict::from_bool(ok));
    if let Some((id, m)) = worst {
        summary = summary.with_node(tree.label(id)).with_value(m).with_detail("smallest strict-positivity margin");
    }
    rep.push(summary);
    Ok((ok, rep))
}

/// Nodes at time `T` charged by some martingale measure on `[t, T]`, started
/// from any node at time `t`. Each leaf's maximal probability is the product
/// of the one-step LP maxima along its path.
pub fn maximal_support(tree: &EventTree, t: usize, big_t: usize) -> Result<BTreeSet<usize>, MarketError> {
    let poly = measure_polytope(tree, t, big_t)?;
    let mut out = BTreeSet::new();
    for start in tree.nodes_at(t) {
        if !poly.viable(start) {
            return Err(MarketError::NoMartingaleMeasure(tree.label(start).to_string()));
        }
        for leaf in tree.descendants_at(start, big_t) {
            if max_leaf_mass(tree, &poly, start, leaf) > SUPPORT_TOL {
                out.insert(leaf);
            }
        }
    }
    Ok(out)
}

/// `max { Q(leaf | start) : Q martingale on [t, T] }`.
pub fn max_leaf_mass(tree: &EventTree, poly: &MeasurePolytope, start: usize, leaf: usize) -> f64 {
    let mut mass = 1.0;
    let mut cur = leaf;
    while cur != start {
        let Some(parent) = tree.nodes()[cur].parent else {
            return 0.0;
        };
        let Some(np) = poly.node(parent) else {
            return 0.0;
        };
        let k = np.children.iter().position(|&c| c == cur).expect("child listed at parent");
        mass *= np.max_mass(k).unwrap_or(0.0);
        cur = parent;
    }
    mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_market::TreeBuilder;

    fn approx_vec(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14)
    }

    #[test]
    fn nflvr_examples() {
        let bin = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert!(check_nflvr(&bin).unwrap().0);
        let arb = EventTree::one_period(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        assert!(!check_nflvr(&arb).unwrap().0);
        let tri = EventTree::one_period(&[0.3, 0.4, 0.3], &[1.0, 0.0, -1.0]).unwrap();
        let (ok, _) = check_nflvr(&tri).unwrap();
        assert!(ok);
        // family (α/2, 1-α, α/2): the max-min point is α = 2/3.
        let m = one_step_positivity_margin(&[1.0, 0.0, -1.0]).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn nflvr_requires_valid_tree() {
        let bad = EventTree::one_period(&[0.6, 0.6], &[1.0, -1.0]).unwrap();
        assert!(matches!(check_nflvr(&bad), Err(MarketError::Precondition(_))));
    }

    #[test]
    fn polytope_examples() {
        let bin = EventTree::one_period(&[0.8, 0.2], &[1.0, -1.0]).unwrap();
        let p = measure_polytope(&bin, 0, 1).unwrap();
        assert_eq!(p.node(0).unwrap().vertices, vec![vec![0.5, 0.5]]);

        let tri = EventTree::one_period(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        let p = measure_polytope(&tri, 0, 1).unwrap();
        let v = &p.node(0).unwrap().vertices;
        assert_eq!(v.len(), 2);
        assert!(approx_vec(&v[0], &[0.0, 1.0, 0.0]));
        assert!(approx_vec(&v[1], &[0.5, 0.0, 0.5]));

        let arb = EventTree::one_period(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        assert!(measure_polytope(&arb, 0, 1).unwrap().node(0).unwrap().is_empty());
        assert!(measure_polytope(&arb, 1, 0).is_err());
    }

    #[test]
    fn support_examples() {
        let tri = EventTree::one_period(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(maximal_support(&tri, 0, 1).unwrap().len(), 3);
        let bin = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert_eq!(maximal_support(&bin, 0, 1).unwrap().len(), 2);
    }

    #[test]
    fn arbitrage_subtree_is_excluded_from_support() {
        // Root {+1, 0, -1}; the middle child then has increments {+1, +2}.
        let mut b = TreeBuilder::new();
        let k = b.branch(0, &[[0.3, 1.0], [0.4, 0.0], [0.3, -1.0]]);
        b.branch(k[0], &[[0.5, 1.0], [0.5, -1.0]]);
        b.branch(k[1], &[[0.5, 1.0], [0.5, 2.0]]);
        b.branch(k[2], &[[0.5, 1.0], [0.5, -1.0]]);
        let t = b.build().unwrap();
        let sup = maximal_support(&t, 0, 2).unwrap();
        assert_eq!(sup.len(), 4);
        let mid = t.find("r1").unwrap();
        for leaf in t.descendants_at(mid, 2) {
            assert!(!sup.contains(&leaf));
        }
        assert!(!check_nflvr(&t).unwrap().0);

        // Same, but the root only has {+1, -1} and the +1 child is the
        // arbitrage node: no martingale measure at all.
        let mut b = TreeBuilder::new();
        let k = b.branch(0, &[[0.5, 1.0], [0.5, -1.0]]);
        b.branch(k[0], &[[0.5, 1.0], [0.5, 2.0]]);
        b.branch(k[1], &[[0.5, 1.0], [0.5, -1.0]]);
        let t = b.build().unwrap();
        assert!(matches!(maximal_support(&t, 0, 2), Err(MarketError::NoMartingaleMeasure(_))));
    }

    #[test]
    fn lp_max_mass_matches_vertices() {
        let d = [2.0, 0.5, 0.0, -1.0, -3.0];
        let allowed = [true; 5];
        let verts = one_step_vertices(&d, &allowed);
        for k in 0..5 {
            let by_vertex = verts.iter().map(|v| v[k]).fold(0.0, f64::max);
            let by_lp = one_step_max_mass(&d, &allowed, k).unwrap();
            assert!((by_vertex - by_lp).abs() < 1e-12, "child {k}: {by_vertex} vs {by_lp}");
        }
    }
}
