use serde::{Deserialize, Serialize};

use crate::handshake::Phase;

/// Linear interpolation between closest ranks on sorted data, `p` in [0, 1].
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Distribution of one phase's duration across runs, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: Phase,
    pub n: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub min_ms: f64,
    pub q1_ms: f64,
    pub median_ms: f64,
    pub q3_ms: f64,
    pub max_ms: f64,
    /// Values outside [q1 - 1.5 IQR, q3 + 1.5 IQR], in sample order.
    pub outliers: Vec<f64>,
}

impl PhaseStats {
    pub fn from_samples(phase: Phase, samples: &[f64]) -> Option<PhaseStats> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile(&sorted, 0.25);
        let q3 = quantile(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(PhaseStats {
            phase,
            n: samples.len(),
            mean_ms: mean(samples),
            sd_ms: sample_sd(samples),
            min_ms: sorted[0],
            q1_ms: q1,
            median_ms: quantile(&sorted, 0.5),
            q3_ms: q3,
            max_ms: sorted[sorted.len() - 1],
            outliers: samples
                .iter()
                .copied()
                .filter(|v| *v < lo || *v > hi)
                .collect(),
        })
    }

    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }

    /// Whisker ends: the most extreme samples within 1.5 IQR of the box.
    pub fn whiskers(&self, samples: &[f64]) -> (f64, f64) {
        let (lo, hi) = (
            self.q1_ms - 1.5 * self.iqr_ms(),
            self.q3_ms + 1.5 * self.iqr_ms(),
        );
        let inside = samples.iter().copied().filter(|v| *v >= lo && *v <= hi);
        inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate_between_ranks() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.25), 1.75);
        assert_eq!(quantile(&s, 0.5), 2.5);
        assert_eq!(quantile(&s, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.9), 5.0);
    }

    #[test]
    fn sample_sd_uses_n_minus_one() {
        let v = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert!((sample_sd(&v) - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(sample_sd(&[3.0]), 0.0);
    }

    #[test]
    fn outliers_beyond_one_and_a_half_iqr() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let s = PhaseStats::from_samples(Phase::Init, &v).unwrap();
        assert_eq!(s.outliers, [100.0]);
        assert_eq!(s.whiskers(&v), (1.0, 9.0));
        assert!(s.min_ms <= s.mean_ms && s.mean_ms <= s.max_ms);
    }

    #[test]
    fn empty_or_non_finite_samples_have_no_stats() {
        assert!(PhaseStats::from_samples(Phase::Auth, &[]).is_none());
        assert!(PhaseStats::from_samples(Phase::Auth, &[1.0, f64::NAN]).is_none());
    }
}
