use super::{EventTree, MarketError, MeasurePolytope};

/// A probability on the tree given by one-step conditional probabilities.
/// `cond[id]` is the probability of the edge into `id`; the root holds 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeMeasure {
    cond: Vec<f64>,
}

impl TreeMeasure {
    /// The reference measure `P`.
    pub fn reference(tree: &EventTree) -> Self {
        let mut cond: Vec<f64> = tree.nodes().iter().map(|n| n.prob).collect();
        cond[0] = 1.0;
        Self { cond }
    }

    /// Checks nonnegativity and per-node normalization.
    pub fn new(tree: &EventTree, cond: Vec<f64>) -> Result<Self, MarketError> {
        if cond.len() != tree.len() {
            return Err(MarketError::Argument(format!("measure has {} entries for {} nodes", cond.len(), tree.len())));
        }
        for (id, n) in tree.nodes().iter().enumerate() {
            if !(cond[id] >= 0.0) {
                return Err(MarketError::Argument(format!("negative probability into '{}'", n.label)));
            }
            if !n.children.is_empty() {
                let s: f64 = n.children.iter().map(|&c| cond[c]).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(MarketError::Argument(format!("probabilities out of '{}' sum to {s}", n.label)));
                }
            }
        }
        let mut cond = cond;
        cond[0] = 1.0;
        Ok(Self { cond })
    }

    /// Builds a measure node by node; `choose(node)` returns the one-step
    /// probabilities for that node's children. Nodes not covered keep the
    /// reference probabilities.
    pub fn from_choices<F>(tree: &EventTree, mut choose: F) -> Result<Self, MarketError>
    where
        F: FnMut(usize) -> Option<Vec<f64>>,
    {
        let mut cond = Self::reference(tree).cond;
        for (id, n) in tree.nodes().iter().enumerate() {
            if let Some(q) = choose(id) {
                if q.len() != n.children.len() {
                    return Err(MarketError::Argument(format!("wrong branch count at '{}'", n.label)));
                }
                for (&c, qc) in n.children.iter().zip(q) {
                    cond[c] = qc;
                }
            }
        }
        Self::new(tree, cond)
    }

    pub fn cond(&self, id: usize) -> f64 {
        self.cond[id]
    }

    pub fn conds(&self) -> &[f64] {
        &self.cond
    }

    /// One-step probabilities out of `id`.
    pub fn one_step(&self, tree: &EventTree, id: usize) -> Vec<f64> {
        tree.nodes()[id].children.iter().map(|&c| self.cond[c]).collect()
    }

    /// `Q(node | from)`.
    pub fn mass(&self, tree: &EventTree, from: usize, id: usize) -> f64 {
        let mut m = 1.0;
        let mut cur = id;
        while cur != from {
            m *= self.cond[cur];
            match tree.nodes()[cur].parent {
                Some(p) => cur = p,
                None => return 0.0,
            }
        }
        m
    }

    /// Largest martingale residual `|Σ q ΔS|` over nodes before `until` that
    /// the measure charges.
    pub fn martingale_residual(&self, tree: &EventTree, until: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for (id, n) in tree.nodes().iter().enumerate() {
            if n.time >= until || n.children.is_empty() || self.mass(tree, 0, id) == 0.0 {
                continue;
            }
            let drift: f64 = n.children.iter().map(|&c| self.cond[c] * tree.nodes()[c].increment).sum();
            worst = worst.max(drift.abs());
        }
        worst
    }

    /// Whether every one-step conditional law between `t` and `T` lies in
    /// the polytope (zero-mass nodes included).
    pub fn in_polytope(&self, tree: &EventTree, poly: &MeasurePolytope, tol: f64) -> bool {
        poly.nodes.iter().all(|(&id, np)| np.contains(&self.one_step(tree, id), tol))
    }
}

/// Density process `Z^Q` on the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPath {
    pub z: Vec<f64>,
}

/// `z(node) = Π (q_edge / p_edge)` along the path from the root.
pub fn density_process(tree: &EventTree, q: &TreeMeasure) -> Result<DensityPath, MarketError> {
    let mut z = vec![1.0; tree.len()];
    for (id, n) in tree.nodes().iter().enumerate().skip(1) {
        let p = n.parent.expect("non-root node has a parent");
        if !(n.prob > 0.0) {
            return Err(MarketError::InvalidTree(format!("zero reference probability into '{}'", n.label)));
        }
        z[id] = z[p] * q.cond(id) / n.prob;
    }
    Ok(DensityPath { z })
}

/// `Z_t / Z_s` at `node` (time `t`) over its ancestor at time `s`, with the
/// convention `Z_t / Z_s = 1` on `{Z_s = 0}`.
pub fn density_quotient(tree: &EventTree, z: &DensityPath, s: usize, node: usize) -> Result<f64, MarketError> {
    let anc = tree.ancestor_at(node, s)?;
    let zs = z.z[anc];
    if zs == 0.0 {
        Ok(1.0)
    } else {
        Ok(z.z[node] / zs)
    }
}

/// Largest `|Σ_children p z(child) - z(parent)|`: zero for a P-martingale.
pub fn density_martingale_residual(tree: &EventTree, z: &DensityPath) -> f64 {
    tree.nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.children.is_empty())
        .map(|(id, n)| {
            let m: f64 = n.children.iter().map(|&c| tree.nodes()[c].prob * z.z[c]).sum();
            (m - z.z[id]).abs()
        })
        .fold(0.0, f64::max)
}
