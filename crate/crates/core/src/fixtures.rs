//! Reproducible trees and fields for tests, examples and the command line.
//!
//! Random trees have at most three branches per node and at most two
//! periods. Every node has an up and a down move, so each tree is
//! arbitrage-free, and `1/γ` is built as a self-financing wealth process
//! so that it is a martingale under every martingale measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fields::ExponentialFieldParams;
use crate::tree_market::{EventTree, MarketError, TreeBuilder};

/// Binomial one-period tree with `p = (0.8, 0.2)` and moves `±1`.
pub fn skewed_binomial() -> EventTree {
    EventTree::one_period(&[0.8, 0.2], &[1.0, -1.0]).expect("valid fixture")
}

/// Trinomial one-period tree with `p = (0.5, 0.3, 0.2)` and moves `1, 0, -1`.
pub fn trinomial() -> EventTree {
    EventTree::one_period(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]).expect("valid fixture")
}

/// A random tree together with a field whose `1/γ` is replicable.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub seed: u64,
    pub tree: EventTree,
    /// `γ` at every node, random `A_T` at the leaves and `A = 0` elsewhere.
    pub params: ExponentialFieldParams,
}

/// Random tree of one or two periods with two or three branches per node.
pub fn random_tree(rng: &mut impl Rng) -> Result<EventTree, MarketError> {
    let periods = rng.random_range(1..=2);
    let mut b = TreeBuilder::new();
    let mut frontier = vec![0usize];
    for _ in 0..periods {
        let mut next = Vec::new();
        for &node in &frontier {
            next.extend(b.branch(node, &random_branches(rng)));
        }
        frontier = next;
    }
    b.build()
}

fn random_branches(rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let k = rng.random_range(2..=3);
    let mut incs = vec![rng.random_range(0.2..2.0), -rng.random_range(0.2..2.0)];
    if k == 3 {
        incs.push(rng.random_range(-2.0..2.0));
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().zip(&incs).map(|(p, d)| [p / total, *d]).collect()
}

/// Random `1/γ` obtained by trading from `1/γ_0 = 1`: at each node a holding
/// is drawn so that every child keeps at least 60% of the parent value.
pub fn random_replicable_field(tree: &EventTree, rng: &mut impl Rng) -> ExponentialFieldParams {
    let mut inv = vec![1.0; tree.len()];
    for (id, n) in tree.nodes().iter().enumerate() {
        if n.children.is_empty() {
            continue;
        }
        let up = n.children.iter().map(|&c| tree.nodes()[c].increment).fold(0.0, f64::max);
        let down = n.children.iter().map(|&c| -tree.nodes()[c].increment).fold(0.0, f64::max);
        let hi = if down > 0.0 { 0.4 * inv[id] / down } else { 0.0 };
        let lo = if up > 0.0 { -0.4 * inv[id] / up } else { 0.0 };
        let pi = if hi > lo { rng.random_range(lo..hi) } else { 0.0 };
        for &c in &n.children {
            inv[c] = inv[id] + pi * tree.nodes()[c].increment;
        }
    }
    let gamma: Vec<f64> = inv.iter().map(|v| 1.0 / v).collect();
    let a: Vec<f64> =
        tree.nodes().iter().map(|n| if n.time == tree.horizon() { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    ExponentialFieldParams::new(gamma, a).expect("positive gamma by construction")
}

/// Deterministic random case for a seed.
pub fn random_case(seed: u64) -> RandomCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = random_tree(&mut rng).expect("generated trees are valid");
    let params = random_replicable_field(&tree, &mut rng);
    RandomCase { seed, tree, params }
}

/// Random case forced to two periods.
pub fn random_two_period_case(seed: u64) -> RandomCase {
    let mut s = seed;
    loop {
        let c = random_case(s);
        if c.tree.horizon() == 2 {
            return RandomCase { seed, ..c };
        }
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15);
    }
}
