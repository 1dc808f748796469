use crate::fields::{h_unchecked, ExponentialFieldParams};
use crate::tree_market::{density_process, density_quotient, EventTree, TreeMeasure};

use super::{inverse_gammas, require_times, VerifierError};

/// Conditional `(γ, A)`-entropy of a measure, one value per node at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyResult {
    pub t: usize,
    pub big_t: usize,
    pub values: Vec<(usize, f64)>,
    /// The minimizing measure, for infimum queries.
    pub measure: Option<TreeMeasure>,
}

impl EntropyResult {
    pub fn value_at(&self, node: usize) -> Option<f64> {
        self.values.iter().find(|(n, _)| *n == node).map(|(_, v)| *v)
    }
}

/// `H(Q; t, T) = E[h(ζ/γ_T) - ζ A_T/γ_T | node]` with `ζ = Z_T/Z_t`,
/// summed exactly over the subtree below each node at `t`.
pub fn entropy(
    tree: &EventTree,
    params: &ExponentialFieldParams,
    q: &TreeMeasure,
    t: usize,
    big_t: usize,
) -> Result<EntropyResult, VerifierError> {
    require_times(tree, t, big_t)?;
    if params.len() != tree.len() {
        return Err(VerifierError::Argument("field and tree sizes differ".into()));
    }
    let inv = inverse_gammas(params)?;
    let z = density_process(tree, q)?;
    let mut values = Vec::new();
    for m in tree.nodes_at(t) {
        let mut acc = 0.0;
        for leaf in tree.descendants_at(m, big_t) {
            let zeta = density_quotient(tree, &z, t, leaf)?;
            let r = inv[leaf];
            acc += tree.path_prob(m, leaf) * (h_unchecked(r * zeta) - zeta * r * params.a_shifts()[leaf]);
        }
        values.push((m, acc));
    }
    Ok(EntropyResult { t, big_t, values, measure: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_measure_entropy() {
        let tree = EventTree::uniform(2, &[0.3, 0.7], &[1.0, -0.5]).unwrap();
        let p = TreeMeasure::reference(&tree);
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
        let r = entropy(&tree, &f, &p, 0, 2).unwrap();
        assert!((r.value_at(0).unwrap() + 1.0).abs() < 1e-14);
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.4).unwrap();
        let r = entropy(&tree, &f, &p, 0, 2).unwrap();
        assert!((r.value_at(0).unwrap() + 1.4).abs() < 1e-14);
    }

    #[test]
    fn trinomial_vertex_entropy() {
        let tree = EventTree::one_period(&[1.0 / 3.0; 3], &[1.0, 0.0, -1.0]).unwrap();
        let q = TreeMeasure::new(&tree, vec![1.0, 0.5, 0.0, 0.5]).unwrap();
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
        let v = entropy(&tree, &f, &q, 0, 1).unwrap().value_at(0).unwrap();
        let expected = (2.0 / 3.0) * (1.5 * 1.5f64.ln() - 1.5);
        assert!((v - expected).abs() < 1e-14);
        assert!((v + 0.594535).abs() < 1e-6);
    }

    #[test]
    fn nonpositive_gamma_rejected() {
        let tree = EventTree::one_period(&[0.5, 0.5], &[1.0, -1.0]).unwrap();
        let f = ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
        let mut g = f.gammas().to_vec();
        g[1] = -1.0;
        // The constructor already refuses; entropy never sees such a field.
        assert!(ExponentialFieldParams::new(g, f.a_shifts().to_vec()).is_err());
    }
}
