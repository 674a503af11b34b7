//! Recovery and detection metrics.

use nalgebra::{ComplexField, DMatrix};
use serde::{Deserialize, Serialize, Serializer};

use crate::{Error, RMat, Result};

/// NMSE in dB, `10 log10(Σ‖X - X♮‖² / Σ‖X♮‖²)`.
///
/// Summing over all samples of a stacked batch realizes the ratio of
/// expectations. An exact match yields `-∞`.
pub fn nmse(estimate: &RMat, truth: &RMat) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            context: "nmse",
            expected: truth.shape(),
            actual: estimate.shape(),
        });
    }
    let denom = truth.norm_squared();
    if denom == 0.0 {
        return Err(Error::invalid("nmse is undefined for an all-zero ground truth"));
    }
    let num = (estimate - truth).norm_squared();
    Ok(if num == 0.0 { f64::NEG_INFINITY } else { 10.0 * (num / denom).log10() })
}

/// `10 log10(‖clean‖²_F / ‖noise‖²_F)`.
pub fn snr_empirical<T: ComplexField<RealField = f64>>(clean: &DMatrix<T>, noise: &DMatrix<T>) -> Result<f64> {
    let pn = noise.norm_squared();
    if pn == 0.0 {
        return Err(Error::invalid("empirical SNR is undefined for zero noise"));
    }
    Ok(10.0 * (clean.norm_squared() / pn).log10())
}

/// How the activity threshold is chosen from the per-device scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ThresholdRule {
    /// `τ = ratio · max_n r_n`.
    RelativeToMax(f64),
    /// Fixed `τ`.
    Absolute(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::RelativeToMax(0.1)
    }
}

/// Per-device score `r_n = sqrt(‖row n‖² + ‖row N+n‖²)`.
pub fn device_scores(estimate: &RMat, n_complex: usize) -> Result<Vec<f64>> {
    if estimate.nrows() != 2 * n_complex {
        return Err(Error::invalid(format!(
            "estimate has {} rows, expected 2N = {}",
            estimate.nrows(),
            2 * n_complex
        )));
    }
    Ok((0..n_complex)
        .map(|n| (estimate.row(n).norm_squared() + estimate.row(n_complex + n).norm_squared()).sqrt())
        .collect())
}

/// Declares device `n` active iff `r_n > τ`.
pub fn detect_activity(estimate: &RMat, n_complex: usize, rule: ThresholdRule) -> Result<Vec<bool>> {
    let scores = device_scores(estimate, n_complex)?;
    let tau = match rule {
        ThresholdRule::RelativeToMax(ratio) => ratio * scores.iter().copied().fold(0.0, f64::max),
        ThresholdRule::Absolute(t) => t,
    };
    Ok(scores.iter().map(|r| *r > tau).collect())
}

/// Threshold minimizing the detection error for known ground truth.
///
/// Candidates are zero and every score; the smallest error wins, ties go
/// to the lowest threshold.
pub fn oracle_threshold(scores: &[f64], truth: &[bool]) -> f64 {
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.push(0.0);
    candidates.sort_by(|a, b| a.total_cmp(b));
    let mut best = (usize::MAX, 0.0);
    for tau in candidates {
        let errors = scores.iter().zip(truth).filter(|(r, t)| (**r > tau) != **t).count();
        if errors < best.0 {
            best = (errors, tau);
        }
    }
    best.1
}

/// Detection outcome against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub misses: usize,
    pub false_alarms: usize,
    pub devices: usize,
}

impl DetectionCounts {
    pub fn compare(detected: &[bool], truth: &[bool]) -> Self {
        let misses = detected.iter().zip(truth).filter(|(d, t)| !**d && **t).count();
        let false_alarms = detected.iter().zip(truth).filter(|(d, t)| **d && !**t).count();
        Self {
            misses,
            false_alarms,
            devices: truth.len(),
        }
    }

    pub fn error_prob(&self) -> f64 {
        if self.devices == 0 {
            0.0
        } else {
            (self.misses + self.false_alarms) as f64 / self.devices as f64
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            misses: self.misses + other.misses,
            false_alarms: self.false_alarms + other.false_alarms,
            devices: self.devices + other.devices,
        }
    }
}

/// Serializes `-∞` dB as `null`.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// Summary of one method on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    #[serde(serialize_with = "serialize_db")]
    pub nmse_db: f64,
    /// Set when `nmse_db` is the exact-recovery sentinel.
    pub exact_recovery: bool,
    pub detection_error_prob: f64,
    pub miss_count: usize,
    pub false_alarm_count: usize,
    pub per_layer_nmse: Option<Vec<f64>>,
}

impl EvalSummary {
    pub fn new(nmse_db: f64, counts: DetectionCounts, per_layer_nmse: Option<Vec<f64>>) -> Self {
        Self {
            nmse_db,
            exact_recovery: nmse_db == f64::NEG_INFINITY,
            detection_error_prob: counts.error_prob(),
            miss_count: counts.misses,
            false_alarm_count: counts.false_alarms,
            per_layer_nmse,
        }
    }
}

/// Detection counts summed over the samples of a stacked estimate.
pub fn detection_counts_blocked(
    estimate: &RMat,
    m: usize,
    n_complex: usize,
    truth: &[Vec<bool>],
    rule: ThresholdRule,
) -> Result<DetectionCounts> {
    let mut total = DetectionCounts {
        misses: 0,
        false_alarms: 0,
        devices: 0,
    };
    for (b, t) in truth.iter().enumerate() {
        let block = estimate.columns(b * m, m).into_owned();
        let detected = detect_activity(&block, n_complex, rule)?;
        total = total.merge(DetectionCounts::compare(&detected, t));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::signal_model::gen_noise_for_snr;
    use proptest::prelude::*;

    #[test]
    fn nmse_identities() {
        let mut r = rng::stream(1);
        let x = rng::real_normal_matrix(&mut r, 6, 3);
        assert_eq!(nmse(&x, &x).unwrap(), f64::NEG_INFINITY);
        assert_eq!(nmse(&RMat::zeros(6, 3), &x).unwrap(), 0.0);
        assert_eq!(nmse(&(&x * 2.0), &x).unwrap(), 0.0);
        assert!(nmse(&x, &RMat::zeros(6, 3)).is_err());
        assert!(nmse(&RMat::zeros(2, 2), &x).is_err());
    }

    #[test]
    fn sentinel_serializes_as_null() {
        let counts = DetectionCounts::compare(&[true, false], &[true, false]);
        let s = EvalSummary::new(f64::NEG_INFINITY, counts, None);
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["nmse_db"].is_null());
        assert_eq!(json["exact_recovery"], true);
    }

    #[test]
    fn snr_values() {
        let mut r = rng::stream(2);
        let noise = rng::real_normal_matrix(&mut r, 4, 4);
        let clean = &noise * 10f64.sqrt();
        assert!((snr_empirical(&clean, &noise).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(snr_empirical(&noise, &noise).unwrap(), 0.0);
        assert!(snr_empirical(&noise, &RMat::zeros(4, 4)).is_err());
        let c = rng::complex_normal_matrix(&mut r, 5, 3);
        let z = gen_noise_for_snr(&c, Some(15.0), 7).unwrap();
        assert!((snr_empirical(&c, &z).unwrap() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn detection_basics() {
        let n = 5;
        let zero = RMat::zeros(2 * n, 3);
        assert_eq!(detect_activity(&zero, n, ThresholdRule::default()).unwrap(), vec![false; n]);
        let mut one = RMat::zeros(2 * n, 3);
        one[(n + 2, 1)] = 0.7;
        one[(2, 0)] = -0.2;
        let det = detect_activity(&one, n, ThresholdRule::default()).unwrap();
        assert_eq!(det, vec![false, false, true, false, false]);
        assert!(detect_activity(&RMat::zeros(3, 1), 2, ThresholdRule::default()).is_err());
    }

    #[test]
    fn oracle_threshold_is_optimal() {
        let scores = [0.1, 0.9, 0.2, 0.8, 0.5];
        let truth = [false, true, false, true, false];
        let tau = oracle_threshold(&scores, &truth);
        let det: Vec<bool> = scores.iter().map(|s| *s > tau).collect();
        assert_eq!(det, truth);
    }

    #[test]
    fn counts_and_probability() {
        let c = DetectionCounts::compare(&[true, true, false, false], &[true, false, true, false]);
        assert_eq!((c.misses, c.false_alarms), (1, 1));
        assert_eq!(c.error_prob(), 0.5);
    }

    proptest! {
        #[test]
        fn scaled_truth_nmse(alpha in -3.0..3.0f64, seed in 0u64..100) {
            prop_assume!((alpha - 1.0).abs() > 1e-3);
            let x = rng::real_normal_matrix(&mut rng::stream(seed), 4, 3);
            let got = nmse(&(&x * alpha), &x).unwrap();
            let expected = 10.0 * ((alpha - 1.0) * (alpha - 1.0)).log10();
            prop_assert!((got - expected).abs() < 1e-9);
        }

        #[test]
        fn detection_scale_invariant(scale in 0.01..100.0f64, seed in 0u64..100) {
            let x = rng::real_normal_matrix(&mut rng::stream(seed), 8, 2);
            let a = detect_activity(&x, 4, ThresholdRule::default()).unwrap();
            let b = detect_activity(&(&x * scale), 4, ThresholdRule::default()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn error_prob_in_unit_interval(d in proptest::collection::vec(any::<bool>(), 1..50), seed in 0u64..10) {
            let mut r = rng::stream(seed);
            let t: Vec<bool> = d.iter().map(|_| rand::Rng::random::<bool>(&mut r)).collect();
            let p = DetectionCounts::compare(&d, &t).error_prob();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
