use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::numeric::{pairwise_mean, pairwise_sum};
use crate::report::Verdict;

use super::McError;

/// Minimum number of paths a test accepts.
pub const MIN_PATHS: usize = 100;

/// Direction of the hypothesis on the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sided {
    /// `E = target`.
    TwoSided,
    /// `E <= target`.
    AtMost,
    /// `E >= target`.
    AtLeast,
}

/// Outcome of one confidence-interval test on a mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub check_tag: String,
    /// Identifies the instance within a check, e.g. `y=1,t=0.5`.
    pub label: String,
    pub estimate: f64,
    pub target: f64,
    pub sided: Sided,
    pub std_error: f64,
    pub z_score: f64,
    pub confidence: f64,
    pub verdict: Verdict,
    pub n_paths: usize,
    /// Independent sampling units behind the standard error: antithetic
    /// pairs, or paths when unpaired.
    pub n_samples: usize,
    #[serde(skip_serializing_if = "String::is_empty", default)]
    pub diagnostic: String,
}

impl TestResult {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn with_label(mut self, tag: &str, label: impl Into<String>) -> Self {
        self.check_tag = tag.to_string();
        self.label = label.into();
        self
    }
}

/// Two-sided standard normal quantile `z` with `P(|N| <= z) = confidence`.
/// One-sided tests use the same critical value.
pub fn z_quantile(confidence: f64) -> Result<f64, McError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(McError::Argument(format!("confidence {confidence} is not in (0, 1)")));
    }
    let n = Normal::standard();
    Ok(n.inverse_cdf(1.0 - 0.5 * (1.0 - confidence)))
}

/// Tests `E[w X] = target` (or a one-sided version) on i.i.d. paths.
pub fn test_weighted_mean(
    values: &[f64],
    weights: &[f64],
    target: f64,
    sided: Sided,
    confidence: f64,
) -> Result<TestResult, McError> {
    test_weighted_mean_grouped(values, weights, 1, target, sided, confidence)
}

/// As [`test_weighted_mean`], but consecutive blocks of `group` paths (an
/// antithetic pair for `group = 2`) are averaged into one sample before
/// the standard error is computed.
pub fn test_weighted_mean_grouped(
    values: &[f64],
    weights: &[f64],
    group: usize,
    target: f64,
    sided: Sided,
    confidence: f64,
) -> Result<TestResult, McError> {
    if values.len() != weights.len() {
        return Err(McError::Argument(format!("{} values but {} weights", values.len(), weights.len())));
    }
    if values.len() < MIN_PATHS {
        return Err(McError::TooFewPaths(values.len()));
    }
    if group == 0 || !values.len().is_multiple_of(group) {
        return Err(McError::Argument(format!("{} paths do not split into groups of {group}", values.len())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(McError::Argument("weights must be nonnegative".into()));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(McError::Argument("all weights are zero".into()));
    }
    let z = z_quantile(confidence)?;
    let samples: Vec<f64> = values
        .chunks(group)
        .zip(weights.chunks(group))
        .map(|(v, w)| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / group as f64)
        .collect();
    let n = samples.len();
    let mean = pairwise_mean(&samples);
    let dev: Vec<f64> = samples.iter().map(|s| (s - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let mut out = TestResult {
        check_tag: String::new(),
        label: String::new(),
        estimate: mean,
        target,
        sided,
        std_error: se,
        z_score: 0.0,
        confidence,
        verdict: Verdict::Pass,
        n_paths: values.len(),
        n_samples: n,
        diagnostic: String::new(),
    };
    if !mean.is_finite() || !se.is_finite() {
        out.verdict = Verdict::Fail;
        out.diagnostic = "non-finite estimate or standard error".into();
        return Ok(out);
    }
    if se == 0.0 {
        let equal = (mean - target).abs() <= 1e-12 * (1.0 + target.abs());
        let ok = equal
            || match sided {
                Sided::TwoSided => false,
                Sided::AtMost => mean <= target,
                Sided::AtLeast => mean >= target,
            };
        if !ok {
            out.verdict = Verdict::Fail;
            out.z_score = if mean > target { f64::INFINITY } else { f64::NEG_INFINITY };
            out.diagnostic = "degenerate sample: zero variance and the estimate differs from the target".into();
        }
        return Ok(out);
    }
    let zs = (mean - target) / se;
    out.z_score = zs;
    let ok = match sided {
        Sided::TwoSided => zs.abs() <= z,
        Sided::AtMost => zs <= z,
        Sided::AtLeast => zs >= -z,
    };
    out.verdict = Verdict::from_bool(ok);
    Ok(out)
}

/// Fraction of `trials` two-sided tests on `n` i.i.d. standard normal
/// values with true mean 0 that reject at `confidence`.
pub fn harness_false_rejection_rate(trials: usize, n: usize, confidence: f64, seed: u64) -> Result<f64, McError> {
    if trials == 0 {
        return Err(McError::Argument("need at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = vec![1.0; n];
    let mut values = vec![0.0; n];
    let mut rejected = 0usize;
    for _ in 0..trials {
        for v in values.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        if !test_weighted_mean(&values, &weights, 0.0, Sided::TwoSided, confidence)?.passed() {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_matches_target() {
        let ones = vec![1.0; 200];
        let r = test_weighted_mean(&ones, &ones, 1.0, Sided::TwoSided, 0.997).unwrap();
        assert!(r.passed());
        assert_eq!(r.z_score, 0.0);
        let r = test_weighted_mean(&ones, &ones, 0.0, Sided::TwoSided, 0.997).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.diagnostic.contains("zero variance"));
    }

    #[test]
    fn preconditions() {
        let ones = vec![1.0; 50];
        assert!(matches!(test_weighted_mean(&ones, &ones, 1.0, Sided::TwoSided, 0.9), Err(McError::TooFewPaths(50))));
        let v = vec![1.0; 200];
        assert!(test_weighted_mean(&v, &vec![0.0; 200], 1.0, Sided::TwoSided, 0.9).is_err());
        assert!(test_weighted_mean(&v, &v, 1.0, Sided::TwoSided, 1.0).is_err());
    }

    #[test]
    fn quantile_and_sides() {
        assert!((z_quantile(0.997).unwrap() - 2.967737925).abs() < 1e-8);
        let v: Vec<f64> = (0..1000).map(|i| (i % 10) as f64).collect();
        let w = vec![1.0; 1000];
        // mean 4.5, se = sqrt(8.25 * 1000 / 999 / 1000)
        let r = test_weighted_mean(&v, &w, 4.0, Sided::AtMost, 0.997).unwrap();
        assert!(!r.passed());
        assert!(test_weighted_mean(&v, &w, 4.0, Sided::AtLeast, 0.997).unwrap().passed());
        assert!(test_weighted_mean(&v, &w, 4.5, Sided::TwoSided, 0.997).unwrap().passed());
    }

    #[test]
    fn grouping_averages_pairs() {
        let v: Vec<f64> = (0..200).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let w = vec![1.0; 200];
        let r = test_weighted_mean_grouped(&v, &w, 2, 0.0, Sided::TwoSided, 0.997).unwrap();
        assert_eq!(r.n_samples, 100);
        assert_eq!(r.std_error, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn calibration_rate_small() {
        let rate = harness_false_rejection_rate(2000, 200, 0.997, 1).unwrap();
        assert!(rate <= 0.01, "{rate}");
    }
}
