use rayon::prelude::*;

use crate::fields::conjugate_exponential;
use crate::ito_engine::{exponential_integrability, log_density, FieldPaths, PathBundle, PiecewiseConstant};
use crate::report::Verdict;

use super::harness::{test_weighted_mean_grouped, Sided, TestResult};
use super::McError;

pub const TAG_SUBMARTINGALE: &str = "duality/dual-submartingale";
pub const TAG_MARTINGALE_AT_OPTIMUM: &str = "duality/dual-martingale-at-optimum";
pub const TAG_INVERSE_GAMMA: &str = "exponential/inverse-gamma-martingale";
pub const TAG_FORWARD_DRIFT: &str = "forward-measure/drift";

/// Short label for a market price of unhedgeable risk `ν`.
pub fn nu_label(nu: &PiecewiseConstant) -> String {
    if nu.values.len() == 1 {
        format!("nu={}", nu.values[0])
    } else {
        let v: Vec<String> = nu.values.iter().map(|x| x.to_string()).collect();
        let b: Vec<String> = nu.breakpoints.iter().map(|x| x.to_string()).collect();
        format!("nu=[{}]@[{}]", v.join(";"), b.join(";"))
    }
}

fn ensure_matching(bundle: &PathBundle, field: &FieldPaths) -> Result<(), McError> {
    if field.n_paths != bundle.n_paths || field.n_steps != bundle.n_steps() {
        return Err(McError::Argument("field paths were not built from this bundle".into()));
    }
    Ok(())
}

/// Grid indices of `times`, sorted, without duplicates and without 0.
fn grid_indices(bundle: &PathBundle, times: &[f64]) -> Result<Vec<usize>, McError> {
    let mut ks: Vec<usize> = times.iter().map(|&t| bundle.grid.index_of(t)).collect::<Result<_, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    ks.retain(|&k| k > 0);
    if ks.is_empty() {
        return Err(McError::Argument("no positive test times".into()));
    }
    Ok(ks)
}

/// `V(t_k, y Z_{t_k})` on every path.
fn dual_values(field: &FieldPaths, log_z: &[f64], n_steps: usize, y: f64, k: usize) -> Result<Vec<f64>, McError> {
    (0..field.n_paths)
        .into_par_iter()
        .map(|p| {
            let z = log_z[p * (n_steps + 1) + k].exp();
            Ok(conjugate_exponential(field.gamma(p, k), field.a(p)[k], y * z)?)
        })
        .collect()
}

fn refuse_unless(bundle: &PathBundle, allowed: &[Verdict], what: &str) -> Result<(), McError> {
    let v = exponential_integrability(&bundle.spec);
    if !allowed.contains(&v) {
        return Err(McError::Refused(format!("{what} needs exponential integrability of the field, classified {v}")));
    }
    Ok(())
}

/// For each `ν` and each pair of times `t1 < t2` from `{0} ∪ times`, a
/// one-sided test of `E[V(t2, y Z_{t2}^{θ,ν})] >= E[V(t1, y Z_{t1}^{θ,ν})]`.
/// At `t1 = 0` the exact `V(0, y)` is used. This tests the increasing
/// expectation implied by the submartingale property, not the full
/// conditional statement.
pub fn check_dual_submartingale(
    bundle: &PathBundle,
    field: &FieldPaths,
    y: f64,
    nus: &[PiecewiseConstant],
    times: &[f64],
    confidence: f64,
) -> Result<Vec<TestResult>, McError> {
    ensure_matching(bundle, field)?;
    refuse_unless(bundle, &[Verdict::Pass, Verdict::Undetermined], "the dual submartingale test")?;
    let ks = grid_indices(bundle, times)?;
    let n = bundle.n_steps();
    let v0 = conjugate_exponential(field.gamma0, field.a0, y)?;
    let theta = bundle.spec.theta();
    let ones = vec![1.0; bundle.n_paths];
    let mut out = Vec::new();
    for nu in nus {
        let log_z = log_density(bundle, &theta, nu)?;
        let vals: Vec<Vec<f64>> = ks.iter().map(|&k| dual_values(field, &log_z, n, y, k)).collect::<Result<_, _>>()?;
        for j in 0..ks.len() {
            let t2 = bundle.grid.time(ks[j]);
            let r = test_weighted_mean_grouped(&vals[j], &ones, bundle.group_size(), v0, Sided::AtLeast, confidence)?;
            out.push(r.with_label(TAG_SUBMARTINGALE, format!("y={y},{},t1=0,t2={t2}", nu_label(nu))));
            for i in 0..j {
                let t1 = bundle.grid.time(ks[i]);
                let diff: Vec<f64> = vals[j].iter().zip(&vals[i]).map(|(b, a)| b - a).collect();
                let r = test_weighted_mean_grouped(&diff, &ones, bundle.group_size(), 0.0, Sided::AtLeast, confidence)?;
                out.push(r.with_label(TAG_SUBMARTINGALE, format!("y={y},{},t1={t1},t2={t2}", nu_label(nu))));
            }
        }
    }
    Ok(out)
}

/// Two-sided test of `E[V(t, y Z_t^{θ,φ})] = V(0, y)` at every time: the
/// dual value process is a martingale under the optimal `ν = φ`.
pub fn check_dual_martingale_at_optimum(
    bundle: &PathBundle,
    field: &FieldPaths,
    y: f64,
    times: &[f64],
    confidence: f64,
) -> Result<Vec<TestResult>, McError> {
    ensure_matching(bundle, field)?;
    refuse_unless(bundle, &[Verdict::Pass], "the dual martingale test")?;
    let ks = grid_indices(bundle, times)?;
    let n = bundle.n_steps();
    let v0 = conjugate_exponential(field.gamma0, field.a0, y)?;
    let log_z = log_density(bundle, &bundle.spec.theta(), &bundle.spec.phi())?;
    let ones = vec![1.0; bundle.n_paths];
    let mut out = Vec::new();
    for &k in &ks {
        let vals = dual_values(field, &log_z, n, y, k)?;
        let r = test_weighted_mean_grouped(&vals, &ones, bundle.group_size(), v0, Sided::TwoSided, confidence)?;
        out.push(r.with_label(TAG_MARTINGALE_AT_OPTIMUM, format!("y={y},t={}", bundle.grid.time(k))));
    }
    Ok(out)
}

/// Two-sided test of `E[Z_T^{θ,ν} / γ_T] = 1/γ_0` for each `ν`.
pub fn check_inverse_gamma_mc(
    bundle: &PathBundle,
    field: &FieldPaths,
    nus: &[PiecewiseConstant],
    confidence: f64,
) -> Result<Vec<TestResult>, McError> {
    ensure_matching(bundle, field)?;
    let n = bundle.n_steps();
    let theta = bundle.spec.theta();
    let mut out = Vec::new();
    for nu in nus {
        let log_z = log_density(bundle, &theta, nu)?;
        let z: Vec<f64> = (0..bundle.n_paths).map(|p| log_z[p * (n + 1) + n].exp()).collect();
        let inv: Vec<f64> = (0..bundle.n_paths).map(|p| field.inv_gamma(p)[n]).collect();
        let r =
            test_weighted_mean_grouped(&inv, &z, bundle.group_size(), 1.0 / field.gamma0, Sided::TwoSided, confidence)?;
        out.push(r.with_label(TAG_INVERSE_GAMMA, nu_label(nu)));
    }
    Ok(out)
}

/// Predicted drift `-½ ∫_0^T (ν - φ)² du` of the forward-measure process.
pub fn forward_drift_target(nu: &PiecewiseConstant, phi: &PiecewiseConstant) -> Result<f64, McError> {
    let d = nu.combine(phi, |a, b| a - b)?;
    Ok(-0.5 * d.integral_sq(0.0, d.horizon()))
}

/// For each `ν`, two-sided test of `E^{Q̃}[F_T] - F_0 = -½ ∫(ν - φ)² du`
/// where `F_t = A_t - log Z_t^{θ-δ,ν}` and `Q̃` has density
/// `(γ_0/γ_T) Z_T^{θ,ν}`. Refused for a `ν` whose inverse-gamma test fails.
pub fn check_forward_drift_mc(
    bundle: &PathBundle,
    field: &FieldPaths,
    nus: &[PiecewiseConstant],
    confidence: f64,
) -> Result<Vec<TestResult>, McError> {
    ensure_matching(bundle, field)?;
    let n = bundle.n_steps();
    let theta = bundle.spec.theta();
    let theta_tilde = theta.combine(&bundle.spec.delta(), |a, b| a - b)?;
    let phi = bundle.spec.phi();
    let mut out = Vec::new();
    for nu in nus {
        let pre = check_inverse_gamma_mc(bundle, field, std::slice::from_ref(nu), confidence)?;
        if !pre[0].passed() {
            return Err(McError::Refused(format!(
                "forward drift for {} needs E[Z_T/gamma_T] = 1/gamma0, which failed (z = {:.3})",
                nu_label(nu),
                pre[0].z_score
            )));
        }
        let log_z = log_density(bundle, &theta, nu)?;
        let log_zt = log_density(bundle, &theta_tilde, nu)?;
        let weights: Vec<f64> =
            (0..bundle.n_paths).map(|p| field.gamma0 * field.inv_gamma(p)[n] * log_z[p * (n + 1) + n].exp()).collect();
        let values: Vec<f64> =
            (0..bundle.n_paths).map(|p| field.a(p)[n] - log_zt[p * (n + 1) + n] - field.a0).collect();
        let target = forward_drift_target(nu, &phi)?;
        let r =
            test_weighted_mean_grouped(&values, &weights, bundle.group_size(), target, Sided::TwoSided, confidence)?;
        out.push(r.with_label(TAG_FORWARD_DRIFT, nu_label(nu)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ito_engine::{build_forward_exponential, simulate_paths, CoefficientSpec};

    fn pc(v: f64) -> PiecewiseConstant {
        PiecewiseConstant::constant(1.0, v).unwrap()
    }

    #[test]
    fn drift_target_is_additive() {
        let phi = pc(0.3);
        assert!((forward_drift_target(&pc(0.7), &phi).unwrap() + 0.08).abs() < 1e-15);
        let half = PiecewiseConstant::new(vec![0.0, 0.5, 1.0], vec![0.7, 0.3]).unwrap();
        assert!((forward_drift_target(&half, &phi).unwrap() + 0.04).abs() < 1e-15);
    }

    #[test]
    fn classical_field_martingale_case() {
        // δ = ρ = φ = 0, θ = 0.5: E[V(t, Z_t^{θ,0})] = -1 for all t.
        let spec = CoefficientSpec::constant(1.0, 0.5, 0.0, 0.0, 0.0).unwrap();
        let b = simulate_paths(&spec, 16, 20_000, 1).unwrap();
        let f = build_forward_exponential(&b, 1.0, 0.0).unwrap();
        let res = check_dual_martingale_at_optimum(&b, &f, 1.0, &[0.25, 0.5, 1.0], 0.997).unwrap();
        assert_eq!(res.len(), 3);
        assert!(res.iter().all(|r| r.passed() && r.target == -1.0), "{res:?}");
        let sub = check_dual_submartingale(&b, &f, 1.0, &[pc(0.8)], &[0.5, 1.0], 0.997).unwrap();
        assert_eq!(sub.len(), 3);
        assert!(sub.iter().all(|r| r.passed()));
        // The drift (y/γ) ½ ν² t is visible against V(0, 1) = -1.
        assert!(sub[0].estimate > -1.0 + 0.1);
    }

    #[test]
    fn refusals() {
        let spec = CoefficientSpec::constant(1.0, 0.5, 0.2, 0.0, 0.0).unwrap();
        let b = simulate_paths(&spec, 8, 200, 4).unwrap();
        let f = build_forward_exponential(&b, 1.0, 0.0).unwrap();
        assert!(matches!(check_dual_submartingale(&b, &f, 1.0, &[pc(0.0)], &[1.0], 0.997), Err(McError::Refused(_))));
        assert!(matches!(check_dual_martingale_at_optimum(&b, &f, 1.0, &[1.0], 0.997), Err(McError::Refused(_))));
        assert!(check_inverse_gamma_mc(&b, &f, &[pc(0.0)], 0.997).is_ok());
    }

    #[test]
    fn baseline_dual_value() {
        assert!((conjugate_exponential(1.0, 2.0, 1.0).unwrap() + 3.0).abs() < 1e-15);
        assert!((conjugate_exponential(1.0, 0.0, 2.0).unwrap() - (2.0 * 2f64.ln() - 2.0)).abs() < 1e-15);
    }
}
