//! Dense two-phase simplex for the small per-node linear programs of the
//! tree market. Bland's rule picks entering and leaving variables, so the
//! method terminates and is deterministic; speed is not a concern at the
//! sizes involved (a handful of rows, a few dozen columns).

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal_value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

/// Maximizes `c·x` subject to `A x = b`, `x >= 0`.
pub fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let m = a.len();
    let n = c.len();
    assert_eq!(b.len(), m, "rhs length must match row count");
    assert!(a.iter().all(|r| r.len() == n), "constraint rows must match objective length");

    // Columns: n structural, m artificial, then rhs.
    let width = n + m + 1;
    let rhs = n + m;
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        let mut row = vec![0.0; width];
        for j in 0..n {
            row[j] = sign * a[i][j];
        }
        row[n + i] = 1.0;
        row[rhs] = sign * b[i];
        t.push(row);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: maximize -(sum of artificials).
    let mut c1 = vec![0.0; n + m];
    for v in c1.iter_mut().skip(n) {
        *v = -1.0;
    }
    if run_simplex(&mut t, &mut basis, &c1, n + m).is_err() {
        // Phase 1 is bounded by construction.
        unreachable!("phase-one objective is bounded above by zero");
    }
    let infeasibility: f64 = basis.iter().zip(&t).filter(|(&bv, _)| bv >= n).map(|(_, row)| row[rhs]).sum();
    if infeasibility > 1e-9 {
        return LpOutcome::Infeasible;
    }

    // Drive remaining (zero-level) artificials out of the basis; drop
    // redundant rows.
    let mut i = 0;
    while i < t.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
                i += 1;
            } else {
                t.remove(i);
                basis.remove(i);
            }
        } else {
            i += 1;
        }
    }

    // Phase 2 over structural columns only.
    let mut c2 = vec![0.0; n + m];
    c2[..n].copy_from_slice(c);
    if run_simplex(&mut t, &mut basis, &c2, n).is_err() {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (row, &bv) in t.iter().zip(&basis) {
        if bv < n {
            x[bv] = row[rhs].max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    LpOutcome::Optimal { x, value }
}

struct Unbounded;

/// Primal simplex on a tableau that is already in canonical form for
/// `basis`. Only columns `< n_enter` may enter.
fn run_simplex(t: &mut [Vec<f64>], basis: &mut [usize], c: &[f64], n_enter: usize) -> Result<(), Unbounded> {
    let rhs = t.first().map(|r| r.len() - 1).unwrap_or(0);
    loop {
        // Reduced cost z_j - c_j; a negative value improves the objective.
        let entering = (0..n_enter).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let z: f64 = basis.iter().zip(t.iter()).map(|(&bv, row)| c[bv] * row[j]).sum();
            z - c[j] < -EPS
        });
        let Some(j) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[j] > EPS {
                let ratio = row[rhs] / row[j];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, r)) => {
                        if ratio < r - EPS || ((ratio - r).abs() <= EPS && basis[i] < basis[k]) {
                            Some((i, ratio))
                        } else {
                            Some((k, r))
                        }
                    }
                };
            }
        }
        let Some((i, _)) = leave else {
            return Err(Unbounded);
        };
        pivot(t, basis, i, j);
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], i: usize, j: usize) {
    let p = t[i][j];
    for v in t[i].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[i].clone();
    for (k, row) in t.iter_mut().enumerate() {
        if k != i {
            let f = row[j];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[i] = j;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_optimum() {
        // max x + y s.t. x + 2y + s1 = 4, 3x + y + s2 = 6
        let c = [1.0, 1.0, 0.0, 0.0];
        let a = vec![vec![1.0, 2.0, 1.0, 0.0], vec![3.0, 1.0, 0.0, 1.0]];
        let out = maximize(&c, &a, &[4.0, 6.0]);
        let v = out.optimal_value().unwrap();
        assert!((v - 2.8).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x1 + x2 = 1, x1 + x2 = 2
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(maximize(&[0.0, 0.0], &a, &[1.0, 2.0]), LpOutcome::Infeasible);
        // x1 - x2 = 0, maximize x1
        let a = vec![vec![1.0, -1.0]];
        assert_eq!(maximize(&[1.0, 0.0], &a, &[0.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let a = vec![vec![1.0, 1.0, 1.0], vec![2.0, 2.0, 2.0], vec![1.0, 0.0, -1.0]];
        let out = maximize(&[0.0, 1.0, 0.0], &a, &[1.0, 2.0, 0.0]);
        assert!((out.optimal_value().unwrap() - 1.0).abs() < 1e-12);
    }
}
