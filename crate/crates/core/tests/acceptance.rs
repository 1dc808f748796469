//! Acceptance run: one PASS/FAIL line per criterion, then a single
//! assertion that every criterion passed.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use forwardperf::fields::{
    conjugate_exponential, conjugate_numeric, log_grid, ConjugateOptions, ExponentialFieldParams, ExponentialSlice,
};
use forwardperf::fixtures::{random_case, random_two_period_case, skewed_binomial, trinomial};
use forwardperf::ito_engine::{CoefficientSpec, PiecewiseConstant};
use forwardperf::mc_verifier::{harness_false_rejection_rate, run_mc_suite, McCheck, McSuiteConfig};
use forwardperf::report::{Verdict, VerificationReport};
use forwardperf::tree_market::{check_nflvr, EventTree};
use forwardperf::tree_verifier::{
    calibrate_a_shift, check_exponential_conditions, check_forward_supermartingale, check_self_generation_dual,
    check_self_generation_primal, check_weak_duality, minimum_entropy, primal_value, DualOptions, NodeArg,
    PrimalOptions, TimePair, TreeField,
};

const XI: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
const ETA: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const ETA7: [f64; 7] = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 10.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    if let Some(l) = limit {
        if took > l {
            o.pass = false;
            o.detail.push_str(&format!("; exceeded time limit {l:?}"));
        }
    }
    (o, took)
}

fn all_pairs(tree: &EventTree) -> Vec<TimePair> {
    let n = tree.horizon();
    (0..n).flat_map(|t| (t + 1..=n).map(move |u| (t, u))).collect()
}

fn root_value(r: &forwardperf::tree_verifier::ValueFieldResult) -> f64 {
    r.value_at(0).expect("value at the root")
}

fn conjugacy_grid() -> Outcome {
    let ys = log_grid(1e-3, 1e3, 20);
    let mut worst = 0.0f64;
    for gamma in [0.5, 1.0, 2.0] {
        for a in [-1.0, 0.0, 1.0] {
            let slice = ExponentialSlice::new(gamma, a).unwrap();
            for &y in &ys {
                let n = conjugate_numeric(&slice, y, &ConjugateOptions::default()).unwrap().value;
                let c = conjugate_exponential(gamma, a, y).unwrap();
                worst = worst.max((n - c).abs());
            }
        }
    }
    outcome(worst <= 1e-8, format!("max |numeric - closed form| = {worst:.3e} over 180 points"))
}

fn one_period_oracles() -> Outcome {
    let unit = |tree: &EventTree| ExponentialFieldParams::constant(tree.len(), 1.0, 0.0).unwrap();
    let bin = skewed_binomial();
    let bin_f = unit(&bin);
    let bin_factor = -root_value(
        &primal_value(&bin, &bin_f.clone().into(), &NodeArg::Const(0.0), 0, 1, &PrimalOptions::default()).unwrap(),
    );
    let bin_oracle = common::one_period_factor(&[0.8, 0.2], &[1.0, -1.0]);
    let bin_a0 = calibrate_a_shift(&bin, &bin_f, 1).unwrap().a0();

    let tri = trinomial();
    let tri_f = unit(&tri);
    let tri_factor = -root_value(
        &primal_value(&tri, &tri_f.clone().into(), &NodeArg::Const(0.0), 0, 1, &PrimalOptions::default()).unwrap(),
    );
    let tri_oracle = common::one_period_factor(&[0.5, 0.3, 0.2], &[1.0, 0.0, -1.0]);
    // With γ = 1 and A_T = 0 the (γ, A)-entropy is the relative entropy minus one.
    let tri_entropy = minimum_entropy(&tri, &tri_f, 0, 1, &DualOptions::default()).unwrap().value_at(0).unwrap() + 1.0;
    let entropy_oracle = common::trinomial_min_entropy(&[0.5, 0.3, 0.2]);
    let a0_primal = tri_factor.ln();
    let a0_dual = calibrate_a_shift(&tri, &tri_f, 1).unwrap().a0();

    let checks = [
        (
            (bin_factor - 0.8).abs() <= 1e-8 && (bin_oracle - 0.8).abs() <= 1e-8,
            format!("binomial factor {bin_factor:.10}"),
        ),
        ((bin_a0 - 0.8f64.ln()).abs() <= 1e-8, format!("binomial A0 {bin_a0:.10}")),
        (
            (tri_factor - 0.9324555).abs() <= 1e-6 && (tri_factor - tri_oracle).abs() <= 1e-8,
            format!("trinomial factor {tri_factor:.10} (oracle {tri_oracle:.10})"),
        ),
        (
            (tri_entropy - 0.069934).abs() <= 1e-5 && (tri_entropy - entropy_oracle).abs() <= 1e-8,
            format!("min entropy {tri_entropy:.8} (oracle {entropy_oracle:.8})"),
        ),
        ((a0_primal - a0_dual).abs() <= 1e-6, format!("|A0 primal - A0 dual| = {:.2e}", (a0_primal - a0_dual).abs())),
    ];
    let pass = checks.iter().all(|(ok, _)| *ok);
    outcome(pass, checks.iter().map(|(_, d)| d.as_str()).collect::<Vec<_>>().join(", "))
}

struct FourChecks {
    primal: VerificationReport,
    dual: VerificationReport,
    exponential: VerificationReport,
    forward: VerificationReport,
}

fn four_checks(tree: &EventTree, params: &ExponentialFieldParams, tol: f64) -> FourChecks {
    let pairs = all_pairs(tree);
    let field: TreeField = params.clone().into();
    FourChecks {
        primal: check_self_generation_primal(tree, &field, &pairs, &XI, tol, &PrimalOptions::default()).unwrap(),
        dual: check_self_generation_dual(tree, &field, &pairs, &ETA, tol, &DualOptions::default()).unwrap(),
        exponential: check_exponential_conditions(tree, params, &pairs, tol).unwrap().report,
        forward: check_forward_supermartingale(tree, params, 0, tree.horizon(), tol).unwrap(),
    }
}

fn equivalence_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_gap_error = 0.0f64;
    for seed in 0..50 {
        let case = random_case(seed);
        let tree = &case.tree;
        if !check_nflvr(tree).unwrap().0 {
            failures.push(format!("seed {seed}: arbitrage"));
            continue;
        }
        let calibrated = calibrate_a_shift(tree, &case.params, tree.horizon()).unwrap();
        let ok = four_checks(tree, &calibrated, 1e-6);
        if ![&ok.primal, &ok.dual, &ok.exponential, &ok.forward].iter().all(|r| r.passed()) {
            failures.push(format!("seed {seed}: calibrated field rejected"));
        }
        let mut bumped = calibrated.clone();
        bumped.set_a_shift(0, calibrated.a0() + 0.1).unwrap();
        let bad = four_checks(tree, &bumped, 1e-6);
        if [&bad.primal, &bad.dual, &bad.exponential, &bad.forward].iter().any(|r| r.passed()) {
            failures.push(format!("seed {seed}: perturbed field accepted"));
        }
        let big_t = tree.horizon();
        let gap =
            check_self_generation_dual(tree, &bumped.into(), &[(0, big_t)], &[1.0], 1e-6, &DualOptions::default())
                .unwrap()
                .get(&format!("self_generation.dual[0,{big_t}]"))
                .and_then(|e| e.value)
                .unwrap_or(f64::NAN);
        let err = (gap - 0.1).abs();
        if !(err <= 1e-6) {
            failures.push(format!("seed {seed}: dual gap {gap}"));
        }
        worst_gap_error = worst_gap_error.max(err);
    }
    let detail = if failures.is_empty() {
        format!("50 trees; perturbed dual gap within {worst_gap_error:.2e} of 0.1")
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn weak_duality_suite() -> Outcome {
    let mut min_slack = f64::INFINITY;
    let mut errors = Vec::new();
    for seed in 0..50 {
        let case = random_case(seed);
        let calibrated = calibrate_a_shift(&case.tree, &case.params, case.tree.horizon()).unwrap();
        let field: TreeField = calibrated.into();
        for (t, u) in all_pairs(&case.tree) {
            match check_weak_duality(&case.tree, &field, t, u, &XI, &ETA7, 1e-9) {
                Ok(r) => {
                    let e = r.get(&format!("weak_duality[{t},{u}]")).unwrap();
                    min_slack = min_slack.min(e.value.unwrap());
                }
                Err(e) => errors.push(format!("seed {seed}: {e}")),
            }
        }
    }
    outcome(
        errors.is_empty() && min_slack >= -1e-9,
        format!("smallest slack {min_slack:.3e} on 50 trees{}", errors.join("; ")),
    )
}

fn brute_force_cross_check() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let case = random_two_period_case(100 + seed);
        let field: TreeField = case.params.clone().into();
        for xi in [-1.0, 0.0, 1.5] {
            let dp = root_value(
                &primal_value(&case.tree, &field, &NodeArg::Const(xi), 0, 2, &PrimalOptions::default()).unwrap(),
            );
            let direct = common::brute_force_root_value(&case.tree, &case.params, xi);
            worst = worst.max((dp - direct).abs());
        }
    }
    outcome(worst <= 1e-6, format!("max |dynamic programming - joint optimization| = {worst:.3e}"))
}

fn mc_spec(delta: f64) -> CoefficientSpec {
    CoefficientSpec::constant(1.0, 0.5, delta, 0.3, 0.1).unwrap()
}

fn constant_nus(values: &[f64]) -> Vec<PiecewiseConstant> {
    values.iter().map(|v| PiecewiseConstant::constant(1.0, *v).unwrap()).collect()
}

/// Runs the three Monte Carlo parts and returns the combined report.
fn mc_reports() -> (VerificationReport, VerificationReport) {
    let base = McSuiteConfig::default();
    let optimum = McSuiteConfig {
        nus: Some(constant_nus(&[0.0, 0.7])),
        checks: vec![McCheck::Regularity, McCheck::MartingaleAtOptimum, McCheck::ForwardDrift],
        ..base.clone()
    };
    let a = run_mc_suite(&mc_spec(0.0), &optimum).unwrap().report;
    let inverse = McSuiteConfig {
        nus: Some(constant_nus(&[0.0, 0.4])),
        checks: vec![McCheck::Regularity, McCheck::InverseGamma],
        ..base
    };
    let c = run_mc_suite(&mc_spec(0.2), &inverse).unwrap().report;
    (a, c)
}

fn monte_carlo_suite() -> Outcome {
    let (a, c) = mc_reports();
    let mut missing = Vec::new();
    let mut failed = Vec::new();
    let mut expect = |rep: &VerificationReport, id: String, target: Option<f64>| match rep.get(&id) {
        None => missing.push(id),
        Some(e) => {
            let target_ok = target.is_none_or(|t| e.target.is_some_and(|v| (v - t).abs() <= 1e-12));
            if e.verdict != Verdict::Pass || !target_ok {
                failed.push(format!("{id} ({}: {})", e.verdict, e.detail));
            }
        }
    };
    for y in ["1", "2"] {
        for t in ["0.25", "0.5", "1"] {
            expect(&a, format!("mc.martingale_at_optimum[y={y},t={t}]"), None);
        }
    }
    expect(&a, "mc.forward_drift[nu=0]".into(), Some(-0.045));
    expect(&a, "mc.forward_drift[nu=0.7]".into(), Some(-0.08));
    expect(&c, "mc.inverse_gamma[nu=0]".into(), None);
    expect(&c, "mc.inverse_gamma[nu=0.4]".into(), None);
    let regularity = c.get("ito.exponential_integrability").map(|e| e.verdict.to_string()).unwrap_or_default();
    let pass = missing.is_empty() && failed.is_empty();
    let detail = if pass {
        format!("10 tests pass; integrability with delta = 0.2 is {regularity}")
    } else {
        format!("missing {missing:?}, failed {failed:?}")
    };
    outcome(pass, detail)
}

fn harness_calibration() -> Outcome {
    let rate = harness_false_rejection_rate(10_000, 1_000, 0.997, 7).unwrap();
    outcome((0.0..=0.01).contains(&rate), format!("false rejection rate {rate:.4} over 10000 trials"))
}

fn reproducibility() -> Outcome {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let (a, c) = mc_reports();
            format!("{}\n{}", a.to_json(), c.to_json())
        })
    };
    let one = run(1);
    let four = run(4);
    outcome(
        one == four,
        format!(
            "reports with 1 and 4 threads are {} ({} bytes)",
            if one == four { "identical" } else { "different" },
            one.len()
        ),
    )
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: Vec<Criterion> = vec![
        ("conjugacy agreement", Some(Duration::from_secs(1)), conjugacy_grid),
        ("one-period oracles", Some(Duration::from_secs(1)), one_period_oracles),
        ("equivalence suite", Some(Duration::from_secs(10)), equivalence_suite),
        ("weak duality", None, weak_duality_suite),
        ("dynamic programming vs joint optimization", None, brute_force_cross_check),
        ("Monte Carlo suite", Some(Duration::from_secs(60)), monte_carlo_suite),
        ("harness calibration", Some(Duration::from_secs(30)), harness_calibration),
        ("reproducibility across thread counts", None, reproducibility),
    ];
    let mut all = true;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let (o, took) = timed(limit, f);
        all &= o.pass;
        // Written to stderr directly so the lines survive test output capture.
        writeln!(
            std::io::stderr(),
            "criterion {} {:<4} {name} [{:.2}s]: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        )
        .unwrap();
    }
    assert!(all, "some acceptance criteria failed");
}
