//! Scenario files: a versioned TOML schema that rejects unknown keys.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use forwardperf::ito_engine::CoefficientSpec;
use serde::{Deserialize, Serialize};
use toml::Spanned;

pub const SCENARIO_VERSION: u32 = 1;

/// A configuration problem, anchored to a line of the scenario file when
/// the location is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(file: &Path, message: impl Into<String>) -> Self {
        Self { file: file.to_path_buf(), line: None, column: None, message: message.into() }
    }

    pub fn at(file: &Path, text: &str, offset: usize, message: impl Into<String>) -> Self {
        let (line, column) = line_column(text, offset);
        Self { file: file.to_path_buf(), line: Some(line), column: Some(column), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.file.display(), self.message),
            (Some(l), None) => write!(f, "{}:{l}: {}", self.file.display(), self.message),
            _ => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, column)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    TreeVerify,
    ItoVerify,
    ConjugateTable,
    ExportPaths,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: Spanned<u32>,
    pub kind: ScenarioKind,
    pub seed: Option<u64>,
    /// Report destination, relative to the scenario file.
    pub report: Option<String>,
    pub tree: Option<TreeSource>,
    pub field: Option<TreeFieldSpec>,
    pub market: Option<CoefficientSpec>,
    pub ito: Option<ItoSettings>,
    pub conjugate: Option<ConjugateSettings>,
    pub export: Option<ExportSettings>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreePreset {
    SkewedBinomial,
    Trinomial,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSource {
    /// JSON tree file, relative to the scenario file.
    pub file: Option<String>,
    pub preset: Option<TreePreset>,
}

/// How `γ` is given on the tree.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaSpec {
    Constant {
        value: f64,
    },
    ByNode {
        values: BTreeMap<String, f64>,
    },
    /// `1/γ` is the wealth of a self-financing holding started at
    /// `inv_gamma0`; missing nodes hold nothing.
    Replicate {
        inv_gamma0: f64,
        holdings: BTreeMap<String, f64>,
    },
    /// `1/γ` drawn by the random-case generator (requires the random preset).
    Random,
}

/// How `A` is given on the tree.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ASpec {
    ByNode {
        values: BTreeMap<String, f64>,
    },
    /// Terminal values are given (constant or per leaf); every earlier node
    /// is set from the minimum-entropy identity. `root_offset` is then
    /// added to `A` at the root.
    Calibrate {
        #[serde(default)]
        terminal: Option<f64>,
        #[serde(default)]
        terminal_by_node: Option<BTreeMap<String, f64>>,
        #[serde(default)]
        root_offset: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeFieldSpec {
    pub gamma: Spanned<GammaSpec>,
    pub a: Spanned<ASpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoSettings {
    #[serde(default = "one")]
    pub gamma0: Spanned<f64>,
    #[serde(default)]
    pub a0: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_true")]
    pub antithetic: bool,
    #[serde(default = "default_confidence")]
    pub confidence: Spanned<f64>,
    #[serde(default = "default_ys")]
    pub ys: Vec<f64>,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Constant `ν` values; the default family is used when absent.
    pub nus: Option<Vec<f64>>,
}

fn one() -> Spanned<f64> {
    Spanned::new(0..0, 1.0)
}
fn default_steps() -> usize {
    64
}
fn default_paths() -> usize {
    100_000
}
fn default_true() -> bool {
    true
}
fn default_confidence() -> Spanned<f64> {
    Spanned::new(0..0, 0.997)
}
fn default_ys() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_times() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateSettings {
    pub gamma: Vec<f64>,
    pub a: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSettings {
    /// Output file, relative to the scenario file; `--out` overrides it.
    pub out: Option<String>,
    pub max_paths: Option<usize>,
    /// Constant `ν` values whose densities `Z^{θ,ν}` are exported.
    #[serde(default)]
    pub nus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Nflvr,
    SelfGenerationPrimal,
    SelfGenerationDual,
    WeakDuality,
    Conjugacy,
    ExponentialConditions,
    ForwardSupermartingale,
    Regularity,
    MartingaleAtOptimum,
    Submartingale,
    InverseGamma,
    ForwardDrift,
}

impl CheckName {
    pub fn is_tree_check(self) -> bool {
        !matches!(
            self,
            CheckName::Regularity
                | CheckName::MartingaleAtOptimum
                | CheckName::Submartingale
                | CheckName::InverseGamma
                | CheckName::ForwardDrift
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: Spanned<CheckName>,
    pub tolerance: Option<Spanned<f64>>,
    pub xi: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
}

/// A parsed scenario together with its source, for anchored diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub path: PathBuf,
    pub text: String,
    pub scenario: Scenario,
}

impl LoadedScenario {
    pub fn error_at<T>(&self, span: &Spanned<T>, message: impl Into<String>) -> ConfigError {
        if span.span() == (0..0) {
            ConfigError::new(&self.path, message)
        } else {
            ConfigError::at(&self.path, &self.text, span.span().start, message)
        }
    }

    pub fn error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::new(&self.path, message)
    }

    /// Resolves a path given in the scenario against its directory.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

pub fn load(path: &Path) -> Result<LoadedScenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path, format!("cannot read: {e}")))?;
    parse(path, text)
}

pub fn parse(path: &Path, text: String) -> Result<LoadedScenario, ConfigError> {
    let scenario: Scenario = toml::from_str(&text).map_err(|e| {
        let msg = e.message().to_string();
        match e.span() {
            Some(s) => ConfigError::at(path, &text, s.start, msg),
            None => ConfigError::new(path, msg),
        }
    })?;
    let loaded = LoadedScenario { path: path.to_path_buf(), text, scenario };
    validate(&loaded)?;
    Ok(loaded)
}

fn validate(l: &LoadedScenario) -> Result<(), ConfigError> {
    let s = &l.scenario;
    if *s.version.get_ref() != SCENARIO_VERSION {
        return Err(l.error_at(&s.version, format!("unsupported scenario version {}", s.version.get_ref())));
    }
    let tree_kind = s.kind == ScenarioKind::TreeVerify;
    for c in &s.checks {
        let name = *c.name.get_ref();
        if s.kind != ScenarioKind::TreeVerify && s.kind != ScenarioKind::ItoVerify {
            return Err(l.error_at(&c.name, "checks are only allowed in tree-verify and ito-verify scenarios"));
        }
        if name.is_tree_check() != tree_kind {
            return Err(l.error_at(&c.name, format!("check {name:?} does not apply to a {:?} scenario", s.kind)));
        }
        if let Some(t) = &c.tolerance {
            if !(*t.get_ref() > 0.0) {
                return Err(l.error_at(t, "tolerance must be positive"));
            }
            if !tree_kind {
                return Err(l.error_at(t, "Monte Carlo checks take a confidence in [ito], not a tolerance"));
            }
        }
        if !tree_kind && (c.xi.is_some() || c.eta.is_some()) {
            return Err(l.error_at(&c.name, "xi/eta grids only apply to tree checks"));
        }
        if let Some(eta) = &c.eta {
            if eta.iter().any(|e| !(*e > 0.0)) {
                return Err(l.error_at(&c.name, "eta grid values must be positive"));
            }
        }
    }
    let mut names: Vec<_> = s.checks.iter().map(|c| *c.name.get_ref()).collect();
    names.sort_by_key(|n| *n as u8);
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(l.error("a check is listed more than once"));
    }
    let need = |present: bool, what: &str| -> Result<(), ConfigError> {
        if present {
            Ok(())
        } else {
            Err(l.error(format!("{:?} scenario needs a [{what}] section", s.kind)))
        }
    };
    match s.kind {
        ScenarioKind::TreeVerify => {
            need(s.tree.is_some(), "tree")?;
            need(s.field.is_some(), "field")?;
            let t = s.tree.as_ref().unwrap();
            if t.file.is_some() == t.preset.is_some() {
                return Err(l.error("[tree] needs exactly one of 'file' or 'preset'"));
            }
            if let Some(f) = &s.field {
                let bad = match f.gamma.get_ref() {
                    GammaSpec::Constant { value } if !(*value > 0.0) => Some("gamma must be positive"),
                    GammaSpec::ByNode { values } if values.values().any(|v| !(*v > 0.0)) => {
                        Some("gamma must be positive")
                    }
                    GammaSpec::Replicate { inv_gamma0, .. } if !(*inv_gamma0 > 0.0) => {
                        Some("inv_gamma0 must be positive")
                    }
                    GammaSpec::Random if t.preset != Some(TreePreset::Random) => {
                        Some("gamma mode 'random' needs the random tree preset")
                    }
                    _ => None,
                };
                if let Some(msg) = bad {
                    return Err(l.error_at(&f.gamma, msg));
                }
                if let ASpec::Calibrate { terminal: Some(_), terminal_by_node: Some(_), .. } = f.a.get_ref() {
                    return Err(l.error_at(&f.a, "give either 'terminal' or 'terminal_by_node', not both"));
                }
            }
        }
        ScenarioKind::ItoVerify | ScenarioKind::ExportPaths => {
            need(s.market.is_some(), "market")?;
            need(s.ito.is_some(), "ito")?;
            if let Err(e) = s.market.as_ref().unwrap().validate() {
                return Err(l.error(format!("[market]: {e}")));
            }
            let ito = s.ito.as_ref().unwrap();
            let c = *ito.confidence.get_ref();
            if !(c > 0.5 && c < 1.0) {
                return Err(l.error_at(&ito.confidence, "confidence must lie in (0.5, 1)"));
            }
            if !(*ito.gamma0.get_ref() > 0.0) {
                return Err(l.error_at(&ito.gamma0, "gamma0 must be positive"));
            }
            if s.kind == ScenarioKind::ExportPaths {
                need(s.export.is_some(), "export")?;
            }
        }
        ScenarioKind::ConjugateTable => need(s.conjugate.is_some(), "conjugate")?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_str(text: &str) -> Result<LoadedScenario, ConfigError> {
        parse(Path::new("s.toml"), text.to_string())
    }

    #[test]
    fn unknown_key_is_anchored() {
        let err = parse_str("version = 1\nkind = \"conjugate-table\"\nbogus = 3\n").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.to_string().starts_with("s.toml:3:"), "{err}");
    }

    #[test]
    fn bad_tolerance_is_anchored() {
        let text = "version = 1\nkind = \"tree-verify\"\n[tree]\npreset = \"trinomial\"\n[field]\ngamma = { mode = \"constant\", value = 1.0 }\na = { mode = \"calibrate\", terminal = 0.0 }\n[[checks]]\nname = \"nflvr\"\ntolerance = -1.0\n";
        let err = parse_str(text).unwrap_err();
        assert_eq!(err.line, Some(10));
    }

    #[test]
    fn unknown_check_rejected() {
        let text = "version = 1\nkind = \"tree-verify\"\n[[checks]]\nname = \"nope\"\n";
        assert_eq!(parse_str(text).unwrap_err().line, Some(4));
    }

    #[test]
    fn version_checked() {
        assert_eq!(parse_str("version = 2\nkind = \"conjugate-table\"\n").unwrap_err().line, Some(1));
    }

    #[test]
    fn line_column_offsets() {
        assert_eq!(line_column("ab\ncd", 0), (1, 1));
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
    }
}
