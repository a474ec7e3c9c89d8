//! Window-size selection for the chirplet transform.
//!
//! Amplitude envelopes are smoothed with an equal-weight moving average, the
//! population standard deviation is taken over every window position of a
//! candidate size, and the size whose per-transient maximum SD is largest on
//! average wins.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::transient::TransientSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub window_size: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowOptConfig {
    pub enabled: bool,
    pub candidates: Vec<usize>,
    pub smooth_k: usize,
    /// Defaults to w/4 rounded up for each candidate.
    pub stride: Option<usize>,
}

impl Default for WindowOptConfig {
    fn default() -> Self {
        Self { enabled: true, candidates: vec![16, 32, 64, 128, 256], smooth_k: 9, stride: None }
    }
}

impl WindowOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return param_err("window candidates must not be empty");
        }
        if self.candidates.iter().any(|&w| w < 2) {
            return param_err("window candidates must be at least 2");
        }
        if self.smooth_k == 0 || self.stride == Some(0) {
            return param_err("smooth_k and stride must be at least 1");
        }
        Ok(())
    }
}

pub fn moving_average(x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > x.len() {
        return param_err(format!("moving-average length {k} outside [1, {}]", x.len()));
    }
    Ok(x.windows(k).map(|w| w.iter().sum::<f64>() / k as f64).collect())
}

/// Population standard deviation of each length-`w` window, stepping by `stride`.
pub fn windowed_std(x: &[f64], w: usize, stride: usize) -> Result<Vec<f64>> {
    if w < 2 || w > x.len() {
        return param_err(format!("window {w} outside [2, {}]", x.len()));
    }
    if stride == 0 {
        return param_err("stride must be at least 1");
    }
    let n = w as f64;
    Ok((0..=x.len() - w)
        .step_by(stride)
        .map(|i| {
            let win = &x[i..i + w];
            let mean = win.iter().sum::<f64>() / n;
            (win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

fn default_stride(w: usize) -> usize {
    w.div_ceil(4).max(1)
}

/// Score of every candidate, in candidate order.
pub fn window_sweep(
    transients: &[TransientSegment],
    candidate_ws: &[usize],
    smooth_k: usize,
    stride: Option<usize>,
) -> Result<Vec<WindowScore>> {
    if transients.is_empty() {
        return param_err("no transients to score");
    }
    if candidate_ws.is_empty() {
        return param_err("no candidate window sizes");
    }
    let smoothed: Vec<Vec<f64>> = transients
        .par_iter()
        .map(|t| moving_average(&t.magnitudes(), smooth_k))
        .collect::<Result<_>>()?;
    candidate_ws
        .iter()
        .map(|&w| {
            let s = stride.unwrap_or_else(|| default_stride(w));
            let maxima: Vec<f64> = smoothed
                .par_iter()
                .map(|x| Ok(windowed_std(x, w, s)?.into_iter().fold(0.0, f64::max)))
                .collect::<Result<_>>()?;
            // fixed summation order keeps scores bit-reproducible
            let score = maxima.iter().sum::<f64>() / maxima.len() as f64;
            Ok(WindowScore { window_size: w, score })
        })
        .collect()
}

/// Picks the candidate with the highest mean per-transient max SD; ties go
/// to the smallest window.
pub fn optimize_window(
    transients: &[TransientSegment],
    candidate_ws: &[usize],
    smooth_k: usize,
    stride: Option<usize>,
) -> Result<WindowScore> {
    let sweep = window_sweep(transients, candidate_ws, smooth_k, stride)?;
    Ok(best_of(&sweep))
}

pub(crate) fn best_of(sweep: &[WindowScore]) -> WindowScore {
    let mut best = sweep[0];
    for s in &sweep[1..] {
        if s.score > best.score || (s.score == best.score && s.window_size < best.window_size) {
            best = *s;
        }
    }
    best
}

pub fn sweep_csv(sweep: &[WindowScore]) -> String {
    let mut out = String::from("window_size,score\n");
    for s in sweep {
        let _ = writeln!(out, "{},{:.12e}", s.window_size, s.score);
    }
    out
}
