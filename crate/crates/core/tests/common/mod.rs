//! Oracles that share no code with the library's solvers.

#![allow(dead_code)]

use forwardperf::fields::ExponentialFieldParams;
use forwardperf::tree_market::EventTree;
use nalgebra::{DMatrix, DVector};

/// Ternary search for the minimum of a unimodal function on `[a, b]`.
pub fn ternary_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    for _ in 0..300 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// One-period exponential problem with `γ = 1`, `A_T = 0`:
/// `min_π Σ p_i exp(-π Δ_i)`, the factor with `u(ξ) = -factor e^{-ξ}`.
pub fn one_period_factor(probs: &[f64], incs: &[f64]) -> f64 {
    let f = |pi: f64| probs.iter().zip(incs).map(|(p, d)| p * (-pi * d).exp()).sum::<f64>();
    ternary_min(f, -20.0, 20.0).1
}

/// Relative entropy of `q` with respect to `p`.
pub fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(q, _)| **q > 0.0).map(|(q, p)| q * (q / p).ln()).sum()
}

/// Minimum entropy over martingale measures of the trinomial with moves
/// `1, 0, -1`: `q = (s, 1 - 2s, s)`.
pub fn trinomial_min_entropy(p: &[f64; 3]) -> f64 {
    ternary_min(|s| kl(&[s, 1.0 - 2.0 * s, s], p), 1e-12, 0.5 - 1e-12).1
}

/// Nodes before the horizon, each owning one holding variable.
fn trading_nodes(tree: &EventTree) -> Vec<usize> {
    (0..tree.len()).filter(|&i| !tree.nodes()[i].children.is_empty()).collect()
}

/// Direct joint optimization over the holdings at every trading node of
/// `E[-exp(-γ_T (ξ + Σ π ΔS) + A_T)]` from the root, by damped Newton on the
/// convex cost `Σ_leaves p exp(-γ_T (ξ + G) + A_T)`.
pub fn brute_force_root_value(tree: &EventTree, params: &ExponentialFieldParams, xi: f64) -> f64 {
    let vars = trading_nodes(tree);
    let index = |node: usize| vars.iter().position(|&v| v == node);
    let leaves: Vec<usize> = (0..tree.len()).filter(|&i| tree.nodes()[i].time == tree.horizon()).collect();
    // For each leaf: probability, γ, A and the (variable, increment) pairs on its path.
    type LeafPath = (f64, f64, f64, Vec<(usize, f64)>);
    let paths: Vec<LeafPath> = leaves
        .iter()
        .map(|&l| {
            let mut prob = 1.0;
            let mut moves = Vec::new();
            let mut cur = l;
            while let Some(parent) = tree.nodes()[cur].parent {
                prob *= tree.nodes()[cur].prob;
                moves.push((index(parent).unwrap(), tree.nodes()[cur].increment));
                cur = parent;
            }
            (prob, params.gammas()[l], params.a_shifts()[l], moves)
        })
        .collect();
    let n = vars.len();
    let cost = |pi: &DVector<f64>| -> f64 {
        paths
            .iter()
            .map(|(p, g, a, mv)| {
                let gain: f64 = mv.iter().map(|(k, d)| pi[*k] * d).sum();
                p * (-g * (xi + gain) + a).exp()
            })
            .sum()
    };
    let mut pi = DVector::zeros(n);
    for _ in 0..200 {
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (p, g, a, mv) in &paths {
            let gain: f64 = mv.iter().map(|(k, d)| pi[*k] * d).sum();
            let w = p * (-g * (xi + gain) + a).exp();
            for &(k, dk) in mv {
                grad[k] += -g * dk * w;
                for &(j, dj) in mv {
                    hess[(k, j)] += g * g * dk * dj * w;
                }
            }
        }
        if grad.norm() < 1e-15 {
            break;
        }
        // Zero increments leave a variable unidentified; regularize lightly.
        for k in 0..n {
            hess[(k, k)] += 1e-14;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&(-&grad)),
            None => -&grad,
        };
        let c0 = cost(&pi);
        let mut t = 1.0;
        while cost(&(&pi + &step * t)) > c0 + 1e-4 * t * grad.dot(&step) && t > 1e-12 {
            t *= 0.5;
        }
        let applied = step * t;
        pi += &applied;
        if applied.norm() < 1e-15 {
            break;
        }
    }
    -cost(&pi)
}
