use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MarketError;
use crate::report::{CheckEntry, Verdict, VerificationReport};

const PROB_TOL: f64 = 1e-12;

/// A node of an [`EventTree`]. Edge data (`prob`, `increment`) describe the
/// branch from the parent into this node; the root carries `prob = 1`,
/// `increment = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub label: String,
    pub parent: Option<usize>,
    pub time: usize,
    pub children: Vec<usize>,
    pub prob: f64,
    pub increment: f64,
}

/// Finite filtered probability space as a rooted, non-recombining tree.
///
/// Nodes are stored in breadth-first order: the root is node 0 and every
/// child has a larger index than its parent, so a reverse scan is a valid
/// backward-induction order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTree {
    nodes: Vec<Node>,
    horizon: usize,
}

/// One node as it appears in a tree file. Children are matched to the
/// parent's `branches` in the order the children appear in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub time: usize,
    #[serde(default)]
    pub branches: Vec<[f64; 2]>,
}

/// Top-level tree document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFile {
    pub version: u32,
    pub horizon: usize,
    pub nodes: Vec<NodeSpec>,
}

pub const TREE_FILE_VERSION: u32 = 1;

impl EventTree {
    /// Builds a tree from node specifications. Structural problems (missing
    /// or duplicate ids, unreachable nodes, branch/child count mismatch,
    /// non-finite numbers) are errors; semantic invariants are left to
    /// [`validate_tree`].
    pub fn from_specs(specs: &[NodeSpec], horizon: usize) -> Result<Self, MarketError> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if index.insert(s.id.as_str(), i).is_some() {
                return Err(MarketError::Structure(format!("duplicate node id '{}'", s.id)));
            }
            for br in &s.branches {
                if !br[0].is_finite() || !br[1].is_finite() {
                    return Err(MarketError::Structure(format!("non-finite branch entry at node '{}'", s.id)));
                }
            }
        }
        let roots: Vec<usize> = (0..specs.len()).filter(|&i| specs[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(MarketError::Structure(format!("expected exactly one root, found {}", roots.len())));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        for (i, s) in specs.iter().enumerate() {
            if let Some(p) = &s.parent {
                let &pi = index
                    .get(p.as_str())
                    .ok_or_else(|| MarketError::Structure(format!("node '{}' has unknown parent '{p}'", s.id)))?;
                kids[pi].push(i);
            }
        }
        for (i, s) in specs.iter().enumerate() {
            if kids[i].len() != s.branches.len() {
                return Err(MarketError::Structure(format!(
                    "node '{}' lists {} branches but has {} children",
                    s.id,
                    s.branches.len(),
                    kids[i].len()
                )));
            }
        }
        // Breadth-first relabelling from the root.
        let mut order = vec![roots[0]];
        let mut new_id = vec![usize::MAX; specs.len()];
        new_id[roots[0]] = 0;
        let mut head = 0;
        while head < order.len() {
            let cur = order[head];
            head += 1;
            for &k in &kids[cur] {
                if new_id[k] != usize::MAX {
                    return Err(MarketError::Structure("cycle in parent links".into()));
                }
                new_id[k] = order.len();
                order.push(k);
            }
        }
        if order.len() != specs.len() {
            return Err(MarketError::Structure("some nodes are not reachable from the root".into()));
        }
        let mut nodes: Vec<Node> = order
            .iter()
            .map(|&old| Node {
                label: specs[old].id.clone(),
                parent: specs[old].parent.as_ref().map(|p| new_id[index[p.as_str()]]),
                time: specs[old].time,
                children: kids[old].iter().map(|&k| new_id[k]).collect(),
                prob: 1.0,
                increment: 0.0,
            })
            .collect();
        for &old in &order {
            for (pos, &k) in kids[old].iter().enumerate() {
                let [p, ds] = specs[old].branches[pos];
                nodes[new_id[k]].prob = p;
                nodes[new_id[k]].increment = ds;
            }
        }
        Ok(Self { nodes, horizon })
    }

    pub fn from_file_doc(doc: &TreeFile) -> Result<Self, MarketError> {
        if doc.version != TREE_FILE_VERSION {
            return Err(MarketError::Structure(format!("unsupported tree file version {}", doc.version)));
        }
        Self::from_specs(&doc.nodes, doc.horizon)
    }

    pub fn from_json_str(text: &str) -> Result<Self, MarketError> {
        let doc: TreeFile = serde_json::from_str(text).map_err(|e| MarketError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file_doc(&doc)
    }

    pub fn load(path: &Path) -> Result<Self, MarketError> {
        let text = std::fs::read_to_string(path).map_err(|e| MarketError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_file_doc(&self) -> TreeFile {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.label.clone(),
                parent: n.parent.map(|p| self.nodes[p].label.clone()),
                time: n.time,
                branches: n.children.iter().map(|&c| [self.nodes[c].prob, self.nodes[c].increment]).collect(),
            })
            .collect();
        TreeFile { version: TREE_FILE_VERSION, horizon: self.horizon, nodes }
    }

    /// Tree of the given depth where every node branches with the same
    /// probabilities and increments.
    pub fn uniform(periods: usize, probs: &[f64], increments: &[f64]) -> Result<Self, MarketError> {
        if probs.len() != increments.len() || probs.is_empty() {
            return Err(MarketError::Structure("branch probability/increment lists differ in length".into()));
        }
        let branches: Vec<[f64; 2]> = probs.iter().zip(increments).map(|(&p, &d)| [p, d]).collect();
        let mut b = TreeBuilder::new();
        let mut frontier = vec![0];
        for _ in 0..periods {
            let mut next = Vec::new();
            for &n in &frontier {
                next.extend(b.branch(n, &branches));
            }
            frontier = next;
        }
        b.build()
    }

    pub fn one_period(probs: &[f64], increments: &[f64]) -> Result<Self, MarketError> {
        Self::uniform(1, probs, increments)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&Node, MarketError> {
        self.nodes.get(id).ok_or(MarketError::UnknownNode(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn nodes_at(&self, time: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(move |(_, n)| n.time == time).map(|(i, _)| i)
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Ancestor of `id` at time `s` (the node itself when `s` is its time).
    pub fn ancestor_at(&self, id: usize, s: usize) -> Result<usize, MarketError> {
        let mut cur = id;
        let node = self.node(id)?;
        if s > node.time {
            return Err(MarketError::Argument(format!("time {s} is after node '{}' (time {})", node.label, node.time)));
        }
        while self.nodes[cur].time > s {
            cur = self.nodes[cur]
                .parent
                .ok_or_else(|| MarketError::Argument("node has no ancestor at that time".into()))?;
        }
        if self.nodes[cur].time != s {
            return Err(MarketError::Argument(format!("no ancestor of '{}' at time {s}", node.label)));
        }
        Ok(cur)
    }

    /// Descendants of `id` at time `time` (in index order).
    pub fn descendants_at(&self, id: usize, time: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.nodes[n].time == time {
                out.push(n);
            } else if self.nodes[n].time < time {
                stack.extend(self.nodes[n].children.iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    /// Nodes of the subtree rooted at `id` with time `< until`, in index order.
    pub fn internal_nodes_between(&self, id: usize, until: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.nodes[n].time < until {
                out.push(n);
                stack.extend(self.nodes[n].children.iter().copied());
            }
        }
        out.sort_unstable();
        out
    }

    /// Reference probability of reaching `id` from `from` (product of branch
    /// probabilities along the path).
    pub fn path_prob(&self, from: usize, id: usize) -> f64 {
        let mut p = 1.0;
        let mut cur = id;
        while cur != from {
            p *= self.nodes[cur].prob;
            match self.nodes[cur].parent {
                Some(par) => cur = par,
                None => return 0.0,
            }
        }
        p
    }

    /// Cumulative price `S(node) - S(root)`.
    pub fn price(&self, id: usize) -> f64 {
        let mut s = 0.0;
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            s += self.nodes[cur].increment;
            cur = p;
        }
        s
    }

    /// Errors unless [`validate_tree`] passes.
    pub fn ensure_valid(&self) -> Result<(), MarketError> {
        let rep = validate_tree(self);
        if rep.passed() {
            Ok(())
        } else {
            let msgs: Vec<String> = rep.failures().map(|e| format!("{}: {}", e.check_id, e.detail)).collect();
            Err(MarketError::InvalidTree(msgs.join("; ")))
        }
    }

    pub fn check_times(&self, t: usize, big_t: usize) -> Result<(), MarketError> {
        if t > big_t {
            return Err(MarketError::Argument(format!("t = {t} exceeds T = {big_t}")));
        }
        if big_t > self.horizon {
            return Err(MarketError::Argument(format!("T = {big_t} exceeds the horizon {}", self.horizon)));
        }
        Ok(())
    }
}

/// Incremental construction of an [`EventTree`].
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    specs: Vec<NodeSpec>,
}

impl Default for TreeBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self { specs: vec![NodeSpec { id: "r".into(), parent: None, time: 0, branches: Vec::new() }] }
    }

    /// Adds children under `node` with the given `[probability, increment]`
    /// pairs. Returns the builder indices of the new children. Child labels
    /// extend the parent label with the branch position.
    pub fn branch(&mut self, node: usize, branches: &[[f64; 2]]) -> Vec<usize> {
        let parent_id = self.specs[node].id.clone();
        let time = self.specs[node].time + 1;
        self.specs[node].branches.extend_from_slice(branches);
        let mut out = Vec::with_capacity(branches.len());
        for k in 0..branches.len() {
            out.push(self.specs.len());
            self.specs.push(NodeSpec {
                id: format!("{parent_id}{k}"),
                parent: Some(parent_id.clone()),
                time,
                branches: Vec::new(),
            });
        }
        out
    }

    pub fn build(self) -> Result<EventTree, MarketError> {
        let horizon = self.specs.iter().map(|s| s.time).max().unwrap_or(0);
        EventTree::from_specs(&self.specs, horizon)
    }
}

/// Checks every [`EventTree`] invariant; each violation becomes a failed
/// entry naming the offending node.
pub fn validate_tree(tree: &EventTree) -> VerificationReport {
    let mut rep = VerificationReport::new();
    let tag = "event-tree";
    for (i, n) in tree.nodes.iter().enumerate() {
        if let Some(p) = n.parent {
            let pt = tree.nodes[p].time;
            if n.time != pt + 1 {
                rep.push(
                    CheckEntry::new(format!("tree.time@{}", n.label), tag, Verdict::Fail)
                        .with_node(&n.label)
                        .with_detail(format!("time {} but parent time {pt}", n.time)),
                );
            }
            if !(n.prob > 0.0) {
                rep.push(
                    CheckEntry::new(format!("tree.positive_prob@{}", n.label), tag, Verdict::Fail)
                        .with_node(&n.label)
                        .with_value(n.prob)
                        .with_detail("branch probability not strictly positive: P not equivalent"),
                );
            }
        } else if n.time != 0 {
            rep.push(
                CheckEntry::new("tree.root_time", tag, Verdict::Fail)
                    .with_node(&n.label)
                    .with_detail("root must be at time 0"),
            );
        }
        if n.children.is_empty() {
            if n.time != tree.horizon {
                rep.push(
                    CheckEntry::new(format!("tree.leaf_horizon@{}", n.label), tag, Verdict::Fail)
                        .with_node(&n.label)
                        .with_detail(format!("leaf at time {} but horizon is {}", n.time, tree.horizon)),
                );
            }
        } else {
            let s: f64 = n.children.iter().map(|&c| tree.nodes[c].prob).sum();
            if (s - 1.0).abs() > PROB_TOL {
                rep.push(
                    CheckEntry::compare(format!("tree.prob_sum@{}", n.label), tag, s, 1.0, PROB_TOL)
                        .with_node(&n.label)
                        .with_detail(format!("branch probabilities sum to {s}")),
                );
            }
        }
        let _ = i;
    }
    rep.push(CheckEntry::new("tree.valid", tag, Verdict::from_bool(rep.is_empty())).with_detail(format!(
        "{} nodes, horizon {}",
        tree.len(),
        tree.horizon
    )));
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_binomial_is_valid() {
        let t = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        assert!(validate_tree(&t).passed());
        assert_eq!(t.len(), 3);
        assert_eq!(t.horizon(), 1);
    }

    #[test]
    fn probabilities_summing_above_one_fail() {
        let t = EventTree::one_period(&[0.6, 0.6], &[1.0, -1.0]).unwrap();
        let rep = validate_tree(&t);
        assert!(!rep.passed());
        let e = rep.get("tree.prob_sum@r").unwrap();
        assert!((e.value.unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_branch_fails() {
        let t = EventTree::one_period(&[1.0, 0.0], &[1.0, -1.0]).unwrap();
        let rep = validate_tree(&t);
        assert!(!rep.passed());
        assert!(rep.failures().any(|e| e.check_id.starts_with("tree.positive_prob")));
    }

    #[test]
    fn leaves_must_sit_at_horizon() {
        let mut b = TreeBuilder::new();
        let kids = b.branch(0, &[[0.5, 1.0], [0.5, -1.0]]);
        b.branch(kids[0], &[[0.5, 1.0], [0.5, -1.0]]);
        let t = b.build().unwrap();
        assert!(!validate_tree(&t).passed());
    }

    #[test]
    fn file_round_trip_preserves_tree() {
        let t = EventTree::uniform(2, &[0.2, 0.3, 0.5], &[1.0, 0.0, -2.0]).unwrap();
        let text = serde_json::to_string(&t.to_file_doc()).unwrap();
        let back = EventTree::from_json_str(&text).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn structural_errors_are_rejected() {
        let bad = r#"{"version":1,"horizon":1,"nodes":[
            {"id":"r","parent":null,"time":0,"branches":[[0.5,1.0],[0.5,-1.0]]},
            {"id":"a","parent":"r","time":1}]}"#;
        assert!(matches!(EventTree::from_json_str(bad), Err(MarketError::Structure(_))));
        let unknown_key = r#"{"version":1,"horizon":0,"nodes":[{"id":"r","parent":null,"time":0,"colour":1}]}"#;
        assert!(matches!(EventTree::from_json_str(unknown_key), Err(MarketError::Parse { .. })));
        let huge = r#"{"version":1,"horizon":1,"nodes":[
            {"id":"r","parent":null,"time":0,"branches":[[0.5,1e999],[0.5,-1.0]]},
            {"id":"a","parent":"r","time":1},{"id":"b","parent":"r","time":1}]}"#;
        assert!(EventTree::from_json_str(huge).is_err());
    }

    #[test]
    fn navigation_helpers() {
        let t = EventTree::uniform(2, &[0.5, 0.5], &[1.0, -1.0]).unwrap();
        let leaves = t.descendants_at(0, 2);
        assert_eq!(leaves.len(), 4);
        for &l in &leaves {
            assert_eq!(t.ancestor_at(l, 0).unwrap(), 0);
            assert!((t.path_prob(0, l) - 0.25).abs() < 1e-15);
        }
        assert_eq!(t.price(leaves[0]), 2.0);
        assert!(t.ancestor_at(0, 1).is_err());
    }
}
