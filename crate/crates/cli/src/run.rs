//! Scenario execution.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use forwardperf::fields::{
    adjoined_value, conjugate_exponential, conjugate_numeric, ConjugateOptions, ExponentialSlice, SupValue,
};
use forwardperf::fixtures;
use forwardperf::ito_engine::{
    build_forward_exponential, density_path, simulate_paths_with, write_paths_csv, PiecewiseConstant,
};
use forwardperf::mc_verifier::{run_mc_suite, McCheck, McSuiteConfig};
use forwardperf::report::{CheckEntry, Verdict, VerificationReport};
use forwardperf::tree_market::{check_nflvr, EventTree, MarketError};
use forwardperf::tree_verifier::{
    calibrate_a_shift, check_exponential_conditions, check_forward_supermartingale, check_self_generation_dual,
    check_self_generation_primal, check_value_conjugacy, check_weak_duality, DualOptions, PrimalOptions, TimePair,
    TreeField, VerifierError,
};
use forwardperf::{fields::log_grid, fields::ExponentialFieldParams};
use serde::Serialize;

use crate::scenario::{ASpec, CheckName, CheckSpec, ConfigError, GammaSpec, LoadedScenario, ScenarioKind, TreePreset};

pub const SEED_ENV: &str = "FORWARDPERF_SEED";
pub const DEFAULT_SEED: u64 = 20_240_611;

const DEFAULT_XI: [f64; 7] = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
const DEFAULT_ETA: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Outcome of a scenario that ran to completion.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: VerificationReport,
    pub report_path: Option<PathBuf>,
}

/// Errors that stop a scenario before it produces a verdict (exit code 2).
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Other(anyhow::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        RunError::Other(e)
    }
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    scenario: String,
    kind: ScenarioKind,
    seed: u64,
    passed: bool,
    #[serde(flatten)]
    report: &'a VerificationReport,
}

/// Master seed: the environment override, then the scenario, then the default.
pub fn resolve_seed(scenario_seed: Option<u64>) -> Result<u64, String> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(scenario_seed.unwrap_or(DEFAULT_SEED)),
    }
}

pub fn run_scenario(l: &LoadedScenario, report_override: Option<&Path>) -> Result<RunOutcome, RunError> {
    let s = &l.scenario;
    let seed = resolve_seed(s.seed).map_err(|m| l.error(m))?;
    let report = match s.kind {
        ScenarioKind::TreeVerify => run_tree(l, seed)?,
        ScenarioKind::ItoVerify => run_ito(l, seed)?,
        ScenarioKind::ConjugateTable => {
            let c = s.conjugate.as_ref().expect("validated");
            let table = conjugate_table(&c.gamma, &c.a, &c.y).map_err(|m| l.error(m))?;
            print!("{table}");
            return Ok(RunOutcome { report: VerificationReport::new(), report_path: None });
        }
        ScenarioKind::ExportPaths => {
            let out = export_target(l, None)?;
            export_paths(l, seed, &out)?;
            println!("wrote {}", out.display());
            return Ok(RunOutcome { report: VerificationReport::new(), report_path: None });
        }
    };
    let path = match (report_override, &s.report) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(r)) => l.resolve(r),
        (None, None) => l.path.with_extension("report.json"),
    };
    let doc = ReportDocument {
        scenario: l.path.display().to_string(),
        kind: s.kind,
        seed,
        passed: report.passed(),
        report: &report,
    };
    let text = serde_json::to_string_pretty(&doc).context("serializing report")?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing report {}", path.display()))?;
    Ok(RunOutcome { report, report_path: Some(path) })
}

/// Adds one summary entry `check:<name>` for the entries a check produced.
fn summarize(rep: &mut VerificationReport, name: &str, tag: &str, part: VerificationReport) {
    let failed = part.entries.values().filter(|e| e.verdict.is_failure()).count();
    let analytic_only = failed > 0 && part.entries.values().all(|e| e.verdict != Verdict::Fail);
    let undetermined = part.entries.values().filter(|e| e.verdict == Verdict::Undetermined).count();
    let all_undetermined = !part.is_empty() && undetermined == part.len();
    let verdict = if failed > 0 {
        if analytic_only {
            Verdict::FailAnalytic
        } else {
            Verdict::Fail
        }
    } else if all_undetermined {
        Verdict::Undetermined
    } else {
        Verdict::Pass
    };
    rep.push(
        CheckEntry::new(format!("check:{name}"), tag, verdict)
            .with_detail(format!("{} entries, {failed} failing, {undetermined} undetermined", part.len())),
    );
    rep.merge(part);
}

fn check_label(name: CheckName) -> &'static str {
    match name {
        CheckName::Nflvr => "nflvr",
        CheckName::SelfGenerationPrimal => "self-generation-primal",
        CheckName::SelfGenerationDual => "self-generation-dual",
        CheckName::WeakDuality => "weak-duality",
        CheckName::Conjugacy => "conjugacy",
        CheckName::ExponentialConditions => "exponential-conditions",
        CheckName::ForwardSupermartingale => "forward-supermartingale",
        CheckName::Regularity => "regularity",
        CheckName::MartingaleAtOptimum => "martingale-at-optimum",
        CheckName::Submartingale => "submartingale",
        CheckName::InverseGamma => "inverse-gamma",
        CheckName::ForwardDrift => "forward-drift",
    }
}

fn check_tag(name: CheckName) -> &'static str {
    match name {
        CheckName::Nflvr => "no-arbitrage/equivalent-martingale-measure",
        CheckName::SelfGenerationPrimal => "self-generation/primal",
        CheckName::SelfGenerationDual => "self-generation/dual",
        CheckName::WeakDuality => "duality/weak",
        CheckName::Conjugacy => "duality/conjugacy",
        CheckName::ExponentialConditions => "exponential/entropy-identity",
        CheckName::ForwardSupermartingale => "forward-measure/supermartingale",
        CheckName::Regularity => forwardperf::ito_engine::TAG_EXP_INTEGRABLE,
        CheckName::MartingaleAtOptimum => forwardperf::mc_verifier::TAG_MARTINGALE_AT_OPTIMUM,
        CheckName::Submartingale => forwardperf::mc_verifier::TAG_SUBMARTINGALE,
        CheckName::InverseGamma => forwardperf::mc_verifier::TAG_INVERSE_GAMMA,
        CheckName::ForwardDrift => forwardperf::mc_verifier::TAG_FORWARD_DRIFT,
    }
}

const TREE_CHECKS: [CheckName; 7] = [
    CheckName::Nflvr,
    CheckName::SelfGenerationPrimal,
    CheckName::SelfGenerationDual,
    CheckName::WeakDuality,
    CheckName::Conjugacy,
    CheckName::ExponentialConditions,
    CheckName::ForwardSupermartingale,
];

fn load_tree(l: &LoadedScenario, seed: u64) -> Result<(EventTree, Option<ExponentialFieldParams>), ConfigError> {
    let src = l.scenario.tree.as_ref().expect("validated");
    if let Some(f) = &src.file {
        let path = l.resolve(f);
        let tree = EventTree::load(&path).map_err(|e| match e {
            MarketError::Parse { line, column, message } => {
                ConfigError { file: path.clone(), line: Some(line), column: Some(column), message }
            }
            other => ConfigError::new(&path, other.to_string()),
        })?;
        return Ok((tree, None));
    }
    Ok(match src.preset.expect("validated") {
        TreePreset::SkewedBinomial => (fixtures::skewed_binomial(), None),
        TreePreset::Trinomial => (fixtures::trinomial(), None),
        TreePreset::Random => {
            let c = fixtures::random_case(seed);
            (c.tree, Some(c.params))
        }
    })
}

fn node_id(l: &LoadedScenario, tree: &EventTree, label: &str) -> Result<usize, ConfigError> {
    tree.find(label).ok_or_else(|| l.error(format!("unknown node label '{label}'")))
}

fn per_node(
    l: &LoadedScenario,
    tree: &EventTree,
    values: &BTreeMap<String, f64>,
    what: &str,
) -> Result<Vec<f64>, ConfigError> {
    let mut out = vec![f64::NAN; tree.len()];
    for (k, v) in values {
        out[node_id(l, tree, k)?] = *v;
    }
    if let Some(i) = out.iter().position(|v| v.is_nan()) {
        return Err(l.error(format!("{what} missing for node '{}'", tree.label(i))));
    }
    Ok(out)
}

fn build_gamma(
    l: &LoadedScenario,
    tree: &EventTree,
    spec: &GammaSpec,
    random: Option<&ExponentialFieldParams>,
) -> Result<Vec<f64>, ConfigError> {
    match spec {
        GammaSpec::Constant { value } => Ok(vec![*value; tree.len()]),
        GammaSpec::ByNode { values } => per_node(l, tree, values, "gamma"),
        GammaSpec::Replicate { inv_gamma0, holdings } => {
            let mut pi = vec![0.0; tree.len()];
            for (k, v) in holdings {
                pi[node_id(l, tree, k)?] = *v;
            }
            let mut inv = vec![*inv_gamma0; tree.len()];
            for (id, n) in tree.nodes().iter().enumerate() {
                for &c in &n.children {
                    inv[c] = inv[id] + pi[id] * tree.nodes()[c].increment;
                    if !(inv[c] > 0.0) {
                        return Err(l.error(format!(
                            "replicated 1/gamma = {} at node '{}' is not positive",
                            inv[c],
                            tree.label(c)
                        )));
                    }
                }
            }
            Ok(inv.iter().map(|v| 1.0 / v).collect())
        }
        GammaSpec::Random => Ok(random.expect("validated").gammas().to_vec()),
    }
}

/// Builds the field; a calibration refusal becomes a failed report entry.
fn build_field(
    l: &LoadedScenario,
    tree: &EventTree,
    random: Option<&ExponentialFieldParams>,
) -> Result<Result<ExponentialFieldParams, CheckEntry>, ConfigError> {
    let spec = l.scenario.field.as_ref().expect("validated");
    let gamma = build_gamma(l, tree, spec.gamma.get_ref(), random)?;
    match spec.a.get_ref() {
        ASpec::ByNode { values } => {
            let a = per_node(l, tree, values, "A")?;
            Ok(Ok(ExponentialFieldParams::new(gamma, a).map_err(|e| l.error(e.to_string()))?))
        }
        ASpec::Calibrate { terminal, terminal_by_node, root_offset } => {
            let mut a = vec![0.0; tree.len()];
            match (terminal, terminal_by_node) {
                (_, Some(m)) => {
                    for (k, v) in m {
                        let id = node_id(l, tree, k)?;
                        if !tree.is_leaf(id) || tree.nodes()[id].time != tree.horizon() {
                            return Err(l.error(format!("'{k}' is not a terminal node")));
                        }
                        a[id] = *v;
                    }
                }
                (Some(v), None) => a.iter_mut().for_each(|x| *x = *v),
                (None, None) => {
                    if let Some(r) = random {
                        a.copy_from_slice(r.a_shifts());
                    }
                }
            }
            let params = ExponentialFieldParams::new(gamma, a).map_err(|e| l.error(e.to_string()))?;
            match calibrate_a_shift(tree, &params, tree.horizon()) {
                Ok(mut p) => {
                    let a0 = p.a0() + root_offset;
                    p.set_a_shift(tree.root(), a0).map_err(|e| l.error(e.to_string()))?;
                    Ok(Ok(p))
                }
                Err(VerifierError::InverseGammaNotMartingale(why)) => {
                    Ok(Err(CheckEntry::new("field.calibration", "exponential/inverse-gamma-martingale", Verdict::Fail)
                        .with_detail(format!("calibration refused: 1/gamma is not a martingale ({why})"))))
                }
                Err(e) => Err(l.error(format!("calibration failed: {e}"))),
            }
        }
    }
}

fn all_pairs(horizon: usize) -> Vec<TimePair> {
    (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |u| (t, u))).collect()
}

fn run_tree(l: &LoadedScenario, seed: u64) -> Result<VerificationReport, RunError> {
    let (tree, random) = load_tree(l, seed)?;
    let mut rep = VerificationReport::new();
    let params = match build_field(l, &tree, random.as_ref())? {
        Ok(p) => p,
        Err(entry) => {
            rep.push(entry);
            return Ok(rep);
        }
    };
    let field: TreeField = params.clone().into();
    let pairs = all_pairs(tree.horizon());
    let requested: Vec<CheckSpec> = if l.scenario.checks.is_empty() {
        TREE_CHECKS
            .iter()
            .map(|&n| CheckSpec { name: toml::Spanned::new(0..0, n), tolerance: None, xi: None, eta: None })
            .collect()
    } else {
        l.scenario.checks.clone()
    };
    for c in &requested {
        let name = *c.name.get_ref();
        let tol = c.tolerance.as_ref().map(|t| *t.get_ref());
        let xi = c.xi.clone().unwrap_or_else(|| DEFAULT_XI.to_vec());
        let eta = c.eta.clone().unwrap_or_else(|| DEFAULT_ETA.to_vec());
        let result: Result<VerificationReport, VerifierError> = (|| {
            Ok(match name {
                CheckName::Nflvr => check_nflvr(&tree)?.1,
                CheckName::SelfGenerationPrimal => check_self_generation_primal(
                    &tree,
                    &field,
                    &pairs,
                    &xi,
                    tol.unwrap_or(1e-6),
                    &PrimalOptions::default(),
                )?,
                CheckName::SelfGenerationDual => check_self_generation_dual(
                    &tree,
                    &field,
                    &pairs,
                    &eta,
                    tol.unwrap_or(1e-6),
                    &DualOptions::default(),
                )?,
                CheckName::WeakDuality => {
                    let mut r = VerificationReport::new();
                    for &(t, u) in &pairs {
                        r.merge(check_weak_duality(&tree, &field, t, u, &xi, &eta, tol.unwrap_or(1e-9))?);
                    }
                    r
                }
                CheckName::Conjugacy => {
                    let grid = c.eta.clone().unwrap_or_else(|| log_grid(0.02, 50.0, 25));
                    let mut r = VerificationReport::new();
                    for &(t, u) in &pairs {
                        r.merge(check_value_conjugacy(&tree, &field, t, u, &xi, &grid, tol.unwrap_or(1e-6))?.report);
                    }
                    r
                }
                CheckName::ExponentialConditions => {
                    check_exponential_conditions(&tree, &params, &pairs, tol.unwrap_or(1e-6))?.report
                }
                CheckName::ForwardSupermartingale => {
                    let mut r = VerificationReport::new();
                    for &(t, u) in &pairs {
                        r.merge(check_forward_supermartingale(&tree, &params, t, u, tol.unwrap_or(1e-6))?);
                    }
                    r
                }
                _ => unreachable!("validated as a tree check"),
            })
        })();
        let part = result.unwrap_or_else(|e| {
            let mut r = VerificationReport::new();
            r.push(
                CheckEntry::new(format!("{}.error", check_label(name)), check_tag(name), Verdict::Fail)
                    .with_detail(e.to_string()),
            );
            r
        });
        summarize(&mut rep, check_label(name), check_tag(name), part);
    }
    Ok(rep)
}

fn mc_check(name: CheckName) -> McCheck {
    match name {
        CheckName::Regularity => McCheck::Regularity,
        CheckName::MartingaleAtOptimum => McCheck::MartingaleAtOptimum,
        CheckName::Submartingale => McCheck::Submartingale,
        CheckName::InverseGamma => McCheck::InverseGamma,
        CheckName::ForwardDrift => McCheck::ForwardDrift,
        _ => unreachable!("validated as a Monte Carlo check"),
    }
}

fn mc_config(l: &LoadedScenario, seed: u64) -> Result<McSuiteConfig, ConfigError> {
    let s = &l.scenario;
    let ito = s.ito.as_ref().expect("validated");
    let horizon = s.market.as_ref().expect("validated").horizon;
    let nus = match &ito.nus {
        Some(v) => Some(
            v.iter()
                .map(|&x| PiecewiseConstant::constant(horizon, x))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| l.error(e.to_string()))?,
        ),
        None => None,
    };
    Ok(McSuiteConfig {
        gamma0: *ito.gamma0.get_ref(),
        a0: ito.a0,
        n_steps: ito.n_steps,
        n_paths: ito.n_paths,
        seed,
        antithetic: ito.antithetic,
        confidence: *ito.confidence.get_ref(),
        ys: ito.ys.clone(),
        times: ito.times.clone(),
        nus,
        checks: Vec::new(),
    })
}

fn run_ito(l: &LoadedScenario, seed: u64) -> Result<VerificationReport, RunError> {
    let spec = l.scenario.market.as_ref().expect("validated");
    let base = mc_config(l, seed)?;
    let names: Vec<CheckName> = if l.scenario.checks.is_empty() {
        vec![
            CheckName::Regularity,
            CheckName::MartingaleAtOptimum,
            CheckName::Submartingale,
            CheckName::InverseGamma,
            CheckName::ForwardDrift,
        ]
    } else {
        l.scenario.checks.iter().map(|c| *c.name.get_ref()).collect()
    };
    let mut rep = VerificationReport::new();
    for name in names {
        let cfg = McSuiteConfig { checks: vec![mc_check(name)], ..base.clone() };
        let out = run_mc_suite(spec, &cfg).map_err(|e| l.error(e.to_string()))?;
        let notes = out.report.notes.clone();
        let mut part = out.report;
        part.notes.clear();
        summarize(&mut rep, check_label(name), check_tag(name), part);
        for n in notes {
            rep.note(n);
        }
    }
    Ok(rep)
}

fn export_target(l: &LoadedScenario, out: Option<&Path>) -> Result<PathBuf, ConfigError> {
    if let Some(p) = out {
        return Ok(p.to_path_buf());
    }
    match l.scenario.export.as_ref().and_then(|e| e.out.as_ref()) {
        Some(o) => Ok(l.resolve(o)),
        None => Err(l.error("no output file: pass --out or set out in [export]")),
    }
}

/// Simulates the scenario's market and writes the path CSV.
pub fn export_paths(l: &LoadedScenario, seed: u64, out: &Path) -> Result<(), RunError> {
    let s = &l.scenario;
    let spec = s.market.as_ref().ok_or_else(|| l.error("export needs a [market] section"))?;
    let ito = s.ito.as_ref().ok_or_else(|| l.error("export needs an [ito] section"))?;
    let settings = s.export.clone();
    let bundle = simulate_paths_with(spec, ito.n_steps, ito.n_paths, seed, ito.antithetic)
        .map_err(|e| l.error(e.to_string()))?;
    let field =
        build_forward_exponential(&bundle, *ito.gamma0.get_ref(), ito.a0).map_err(|e| l.error(e.to_string()))?;
    let theta = spec.theta();
    let mut densities = Vec::new();
    for nu in settings.as_ref().map(|e| e.nus.clone()).unwrap_or_default() {
        let nu_pc = PiecewiseConstant::constant(spec.horizon, nu).map_err(|e| l.error(e.to_string()))?;
        let z = density_path(&bundle, &theta, &nu_pc).map_err(|e| l.error(e.to_string()))?;
        densities.push((format!("nu{nu}"), z));
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    write_paths_csv(&mut w, &bundle, &field, &densities, settings.and_then(|e| e.max_paths))
        .map_err(|e| RunError::Other(anyhow::anyhow!(e)))?;
    w.flush().context("flushing path export")?;
    Ok(())
}

pub fn run_export(l: &LoadedScenario, out: Option<&Path>) -> Result<PathBuf, RunError> {
    let seed = resolve_seed(l.scenario.seed).map_err(|m| l.error(m))?;
    let target = export_target(l, out)?;
    export_paths(l, seed, &target)?;
    Ok(target)
}

/// Table of `V(y)` from the numeric conjugate and the closed form, one row
/// per `(γ, A, y)`. At `y = 0` the numeric column is the adjoined value
/// `sup_x U(x)`.
pub fn conjugate_table(gammas: &[f64], shifts: &[f64], ys: &[f64]) -> Result<String, String> {
    if gammas.is_empty() || shifts.is_empty() || ys.is_empty() {
        return Err("gamma, a and y lists must be non-empty".into());
    }
    let mut out = String::from("gamma,a,y,numeric,closed,diff\n");
    for &g in gammas {
        for &a in shifts {
            let slice = ExponentialSlice::new(g, a).map_err(|e| e.to_string())?;
            for &y in ys {
                let closed = conjugate_exponential(g, a, y).map_err(|e| e.to_string())?;
                let numeric = if y == 0.0 {
                    match adjoined_value(&slice, 1e-15) {
                        SupValue::Finite(v) => v,
                        SupValue::Unbounded => f64::INFINITY,
                    }
                } else {
                    conjugate_numeric(&slice, y, &ConjugateOptions::default()).map_err(|e| e.to_string())?.value
                };
                out.push_str(&format!("{g},{a},{y},{numeric:.12},{closed:.12},{:.3e}\n", numeric - closed));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_rows() {
        let t = conjugate_table(&[1.0], &[0.0, 2.0], &[1.0, 0.0]).unwrap();
        let rows: Vec<Vec<f64>> =
            t.lines().skip(1).map(|r| r.split(',').map(|x| x.parse().unwrap()).collect()).collect();
        assert!((rows[0][3] + 1.0).abs() < 1e-10 && (rows[0][4] + 1.0).abs() < 1e-15);
        assert_eq!(rows[1][4], 0.0);
        assert!(rows[1][3].abs() < 1e-10);
        assert!((rows[2][4] + 3.0).abs() < 1e-15);
        assert!(conjugate_table(&[-1.0], &[0.0], &[1.0]).is_err());
        assert!(conjugate_table(&[1.0], &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn pairs_cover_all_times() {
        assert_eq!(all_pairs(2), vec![(0, 1), (0, 2), (1, 2)]);
    }
}
