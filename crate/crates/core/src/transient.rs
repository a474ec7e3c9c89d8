//! Turn-on transient detection (moving variance) and cross-correlation alignment.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::signal::BurstRecord;

/// A fixed-length transient slice cut from a burst.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientSegment {
    pub samples: Vec<Complex64>,
    /// Offset of the first sample in the source burst.
    pub start_index: usize,
    pub device_id: usize,
    pub source_burst: usize,
    /// Zero samples appended because the burst ended early.
    pub padding: usize,
    /// Set when the burst showed no amplitude variability at all.
    pub flat: bool,
}

impl TransientSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransientParams {
    pub var_window: usize,
    pub threshold_ratio: f64,
    pub segment_len: usize,
    pub max_lag: usize,
    pub reference_index: usize,
}

impl Default for TransientParams {
    fn default() -> Self {
        Self { var_window: 32, threshold_ratio: 0.2, segment_len: 1024, max_lag: 64, reference_index: 0 }
    }
}

impl TransientParams {
    pub fn validate(&self) -> Result<()> {
        if self.var_window == 0 {
            return param_err("var_window must be at least 1");
        }
        if !(self.threshold_ratio > 0.0 && self.threshold_ratio < 1.0) {
            return param_err(format!("threshold_ratio {} outside (0, 1)", self.threshold_ratio));
        }
        if self.segment_len == 0 || self.max_lag >= self.segment_len {
            return param_err("need segment_len > max_lag");
        }
        Ok(())
    }
}

/// Population variance over each length-`window_len` window.
pub fn moving_variance(x: &[f64], window_len: usize) -> Result<Vec<f64>> {
    if window_len == 0 || window_len > x.len() {
        return param_err(format!("window_len {window_len} outside [1, {}]", x.len()));
    }
    let w = window_len as f64;
    Ok(x.windows(window_len)
        .map(|win| {
            let mean = win.iter().sum::<f64>() / w;
            win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w
        })
        .collect())
}

/// Cuts the turn-on transient out of `burst`: the segment starts where the
/// moving variance of |IQ| first reaches `threshold_ratio` of its maximum.
pub fn detect_transient(
    burst: &BurstRecord,
    var_window: usize,
    threshold_ratio: f64,
    segment_len: usize,
) -> Result<TransientSegment> {
    let samples = burst.signal.samples();
    if segment_len == 0 || segment_len > samples.len() {
        return param_err(format!("segment_len {segment_len} outside [1, {}]", samples.len()));
    }
    if !(threshold_ratio > 0.0 && threshold_ratio < 1.0) {
        return param_err(format!("threshold_ratio {threshold_ratio} outside (0, 1)"));
    }
    let mags = burst.signal.magnitudes();
    let mean_sq = mags.iter().map(|m| m * m).sum::<f64>() / mags.len() as f64;
    if mean_sq == 0.0 {
        return Err(Error::DegenerateSignal(format!(
            "burst {} of device {} is all zeros",
            burst.burst_index, burst.device_id
        )));
    }
    let mv = moving_variance(&mags, var_window.min(mags.len()))?;
    let max_var = mv.iter().cloned().fold(0.0, f64::max);
    let flat = max_var <= 1e-14 * mean_sq;
    let start = if flat {
        0
    } else {
        let threshold = threshold_ratio * max_var;
        mv.iter().position(|&v| v >= threshold).unwrap_or(0)
    };

    let end = (start + segment_len).min(samples.len());
    let mut seg = samples[start..end].to_vec();
    let padding = segment_len - seg.len();
    seg.resize(segment_len, Complex64::new(0.0, 0.0));
    Ok(TransientSegment {
        samples: seg,
        start_index: start,
        device_id: burst.device_id,
        source_burst: burst.burst_index,
        padding,
        flat,
    })
}

/// Magnitude of the circular cross-correlation between `reference` and
/// `segment` shifted by `lag` (positive lag delays the segment).
fn xcorr_at(reference: &[Complex64], segment: &[Complex64], lag: isize) -> f64 {
    let n = segment.len() as isize;
    reference
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let j = (i as isize - lag).rem_euclid(n) as usize;
            r * segment[j].conj()
        })
        .sum::<Complex64>()
        .norm()
}

/// Lag in [-max_lag, max_lag] maximizing |xcorr|; ties go to the smallest
/// |lag|, then to the negative lag.
pub fn best_lag(reference: &[Complex64], segment: &[Complex64], max_lag: usize) -> isize {
    let mut best = (0isize, xcorr_at(reference, segment, 0));
    for m in 1..=max_lag as isize {
        for lag in [-m, m] {
            let c = xcorr_at(reference, segment, lag);
            if c > best.1 {
                best = (lag, c);
            }
        }
    }
    best.0
}

pub fn circular_shift(samples: &[Complex64], lag: isize) -> Vec<Complex64> {
    let n = samples.len() as isize;
    (0..n).map(|i| samples[(i - lag).rem_euclid(n) as usize]).collect()
}

/// Circularly shifts every segment onto the reference by the lag of peak
/// complex cross-correlation.
pub fn align_by_xcorr(
    segments: &[TransientSegment],
    reference_index: usize,
    max_lag: usize,
) -> Result<Vec<TransientSegment>> {
    let (lags, _) = alignment_lags(segments, reference_index, max_lag)?;
    Ok(segments
        .iter()
        .zip(lags)
        .map(|(seg, lag)| TransientSegment { samples: circular_shift(&seg.samples, lag), ..seg.clone() })
        .collect())
}

/// The per-segment lags `align_by_xcorr` applies, plus the reference length.
pub fn alignment_lags(
    segments: &[TransientSegment],
    reference_index: usize,
    max_lag: usize,
) -> Result<(Vec<isize>, usize)> {
    let Some(reference) = segments.get(reference_index) else {
        if segments.is_empty() {
            return param_err("cannot align an empty segment list");
        }
        return param_err(format!("reference_index {reference_index} >= {}", segments.len()));
    };
    let len = reference.len();
    if segments.iter().any(|s| s.len() != len) {
        return param_err("all segments must have equal length");
    }
    if max_lag >= len {
        return param_err(format!("max_lag {max_lag} must be below segment length {len}"));
    }
    let lags = segments
        .iter()
        .enumerate()
        .map(|(i, s)| if i == reference_index { 0 } else { best_lag(&reference.samples, &s.samples, max_lag) })
        .collect();
    Ok((lags, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use crate::signal::{IqSequence, SnrDb};
    use rand::Rng;

    fn burst(mags: &[f64]) -> BurstRecord {
        let s = mags.iter().map(|&m| Complex64::new(m, 0.0)).collect();
        BurstRecord::new(IqSequence::new(s, 1e7).unwrap(), 2, 5, SnrDb::Clean).unwrap()
    }

    fn brute_variance(x: &[f64]) -> f64 {
        // Pairwise form: var = Σ_{i<j} (x_i - x_j)² / n²
        let n = x.len() as f64;
        let mut acc = 0.0;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                acc += (x[i] - x[j]).powi(2);
            }
        }
        acc / (n * n)
    }

    #[test]
    fn moving_variance_examples() {
        assert_eq!(moving_variance(&[3.0; 10], 4).unwrap(), vec![0.0; 7]);
        assert_eq!(moving_variance(&[0.0, 0.0, 2.0, 2.0], 2).unwrap(), vec![0.0, 1.0, 0.0]);
        let x = [1.0, 4.0, -2.0, 0.5, 7.0];
        let full = moving_variance(&x, 5).unwrap();
        assert_eq!(full.len(), 1);
        assert!((full[0] - brute_variance(&x)).abs() < 1e-12);
        assert!(moving_variance(&x, 0).is_err());
        assert!(moving_variance(&x, 6).is_err());
    }

    #[test]
    fn step_detection_window() {
        let mut mags = vec![0.0; 2000];
        for m in &mut mags[500..] {
            *m = 1.0;
        }
        let seg = detect_transient(&burst(&mags), 32, 0.5, 256).unwrap();
        // brute force: first window whose variance reaches half of the peak
        let mv: Vec<f64> = mags.windows(32).map(brute_variance).collect();
        let peak = mv.iter().cloned().fold(0.0, f64::max);
        let expect = mv.iter().position(|&v| v >= 0.5 * peak - 1e-15).unwrap();
        assert_eq!(seg.start_index, expect);
        assert!((469..=500).contains(&seg.start_index), "{}", seg.start_index);
        assert_eq!(seg.len(), 256);
        assert_eq!(seg.padding, 0);
        assert!(!seg.flat);
    }

    #[test]
    fn transient_at_origin_and_padding() {
        let mags: Vec<f64> = (0..300).map(|i| 1.0 - (-(i as f64) / 5.0).exp()).collect();
        let seg = detect_transient(&burst(&mags), 32, 0.2, 300).unwrap();
        assert_eq!(seg.start_index, 0);

        let mut late = vec![0.0; 300];
        for m in &mut late[250..] {
            *m = 1.0;
        }
        let seg = detect_transient(&burst(&late), 16, 0.2, 100).unwrap();
        assert!(seg.padding > 0);
        assert_eq!(seg.start_index + seg.len() - seg.padding, 300);
    }

    #[test]
    fn flat_and_zero_bursts() {
        let seg = detect_transient(&burst(&[0.7; 200]), 32, 0.2, 64).unwrap();
        assert!(seg.flat);
        assert!(matches!(detect_transient(&burst(&[0.0; 200]), 32, 0.2, 64), Err(Error::DegenerateSignal(_))));
    }

    fn random_segment(seed: u64, len: usize) -> TransientSegment {
        let mut r = rng::substream(seed, Domain::Test, &[]);
        TransientSegment {
            samples: (0..len).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect(),
            start_index: 0,
            device_id: 0,
            source_burst: 0,
            padding: 0,
            flat: false,
        }
    }

    #[test]
    fn self_alignment_is_identity() {
        let a = random_segment(1, 128);
        let out = align_by_xcorr(&[a.clone(), a.clone()], 0, 16).unwrap();
        assert_eq!(out[0], a);
        assert_eq!(out[1], a);
    }

    #[test]
    fn recovers_seven_sample_delay() {
        let reference = random_segment(2, 128);
        let delayed = TransientSegment { samples: circular_shift(&reference.samples, 7), ..reference.clone() };
        // brute-force scan over every circular lag
        let lag = (-64isize..64)
            .max_by(|&a, &b| {
                let ca = xcorr_at(&reference.samples, &delayed.samples, a);
                let cb = xcorr_at(&reference.samples, &delayed.samples, b);
                ca.partial_cmp(&cb).unwrap()
            })
            .unwrap();
        assert_eq!(lag, -7);
        let (lags, _) = alignment_lags(&[reference.clone(), delayed.clone()], 0, 16).unwrap();
        assert_eq!(lags, vec![0, -7]);
        let out = align_by_xcorr(&[reference.clone(), delayed], 0, 16).unwrap();
        for (a, b) in out[1].samples.iter().zip(&reference.samples) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn alignment_errors() {
        assert!(align_by_xcorr(&[], 0, 4).is_err());
        let a = random_segment(3, 32);
        let b = random_segment(4, 16);
        assert!(align_by_xcorr(&[a.clone(), b], 0, 4).is_err());
        assert!(align_by_xcorr(std::slice::from_ref(&a), 1, 4).is_err());
        assert!(align_by_xcorr(&[a], 0, 32).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn variance_nonnegative_and_shift_invariant(
                x in proptest::collection::vec(-10.0f64..10.0, 2..80),
                c in -100.0f64..100.0,
                w in 1usize..20,
            ) {
                let w = w.min(x.len());
                let a = moving_variance(&x, w).unwrap();
                let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
                let b = moving_variance(&shifted, w).unwrap();
                for (p, q) in a.iter().zip(&b) {
                    prop_assert!(*p >= 0.0);
                    prop_assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()));
                }
            }

            #[test]
            fn detection_scale_invariant(onset in 50usize..400, a in 0.05f64..20.0, rise in 1.0f64..30.0) {
                let mags: Vec<f64> = (0..600)
                    .map(|i| if i < onset { 0.0 } else { 1.0 - (-((i - onset) as f64) / rise).exp() })
                    .collect();
                let scaled: Vec<f64> = mags.iter().map(|m| m * a).collect();
                let s1 = detect_transient(&burst(&mags), 32, 0.2, 128).unwrap();
                let s2 = detect_transient(&burst(&scaled), 32, 0.2, 128).unwrap();
                prop_assert_eq!(s1.start_index, s2.start_index);
            }

            #[test]
            fn alignment_lags_bounded_and_energy_kept(seed in 0u64..500, shift in -20isize..20, max_lag in 1usize..24) {
                let reference = random_segment(seed, 64);
                let other = TransientSegment { samples: circular_shift(&random_segment(seed + 1, 64).samples, shift), ..reference.clone() };
                let moved = TransientSegment { samples: circular_shift(&reference.samples, shift), ..reference.clone() };
                let segs = vec![reference, other, moved];
                let (lags, _) = alignment_lags(&segs, 0, max_lag).unwrap();
                let out = align_by_xcorr(&segs, 0, max_lag).unwrap();
                for (lag, (a, b)) in lags.iter().zip(segs.iter().zip(&out)) {
                    prop_assert!(lag.unsigned_abs() <= max_lag);
                    prop_assert!((a.energy() - b.energy()).abs() < 1e-12 * a.energy().max(1.0));
                }
            }
        }
    }
}
