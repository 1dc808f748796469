//! Structured verification reports.
//!
//! Every check produces one [`CheckEntry`] keyed by a unique id. Entries are
//! held in a sorted map so that merging reports from independent checks
//! gives the same document whatever order the checks finished in.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// An analytic classifier proved the property false.
    FailAnalytic,
    /// Neither proved nor refuted; informational only.
    Undetermined,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::Fail | Verdict::FailAnalytic)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::FailAnalytic => "FAIL-ANALYTIC",
            Verdict::Undetermined => "UNDETERMINED",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub check_id: String,
    /// Stable tag naming the property being verified.
    pub check_tag: String,
    pub value: Option<f64>,
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_node: Option<String>,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub detail: String,
}

impl CheckEntry {
    pub fn new(check_id: impl Into<String>, check_tag: impl Into<String>, verdict: Verdict) -> Self {
        Self {
            check_id: check_id.into(),
            check_tag: check_tag.into(),
            value: None,
            target: None,
            tolerance: None,
            std_error: None,
            verdict,
            worst_node: None,
            detail: String::new(),
        }
    }

    /// Entry for a deterministic comparison `|value - target| <= tol`.
    pub fn compare(
        check_id: impl Into<String>,
        check_tag: impl Into<String>,
        value: f64,
        target: f64,
        tol: f64,
    ) -> Self {
        let ok = (value - target).abs() <= tol;
        let mut e = Self::new(check_id, check_tag, Verdict::from_bool(ok));
        e.value = Some(value);
        e.target = Some(target);
        e.tolerance = Some(tol);
        e
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }

    pub fn with_node(mut self, node: impl Into<String>) -> Self {
        self.worst_node = Some(node.into());
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: BTreeMap<String, CheckEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry. A later entry with the same id replaces the earlier one.
    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.insert(entry.check_id.clone(), entry);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        let note = note.into();
        if !self.notes.contains(&note) {
            self.notes.push(note);
        }
    }

    pub fn merge(&mut self, other: VerificationReport) {
        for (_, e) in other.entries {
            self.push(e);
        }
        for n in other.notes {
            self.note(n);
        }
    }

    pub fn passed(&self) -> bool {
        !self.entries.values().any(|e| e.verdict.is_failure())
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.values().filter(|e| e.verdict.is_failure())
    }

    pub fn get(&self, id: &str) -> Option<&CheckEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_order_independent() {
        let a = CheckEntry::compare("a", "t", 1.0, 1.0, 1e-9);
        let b = CheckEntry::compare("b", "t", 1.0, 2.0, 1e-9);
        let mut r1 = VerificationReport::new();
        r1.push(a.clone());
        r1.push(b.clone());
        let mut r2 = VerificationReport::new();
        r2.push(b);
        r2.push(a);
        assert_eq!(r1.to_json(), r2.to_json());
        assert!(!r1.passed());
        assert_eq!(r1.failures().count(), 1);
    }

    #[test]
    fn undetermined_is_not_a_failure() {
        let mut r = VerificationReport::new();
        r.push(CheckEntry::new("x", "t", Verdict::Undetermined));
        assert!(r.passed());
        r.push(CheckEntry::new("y", "t", Verdict::FailAnalytic));
        assert!(!r.passed());
    }
}
