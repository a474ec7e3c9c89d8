//! Short-time Fourier transform and the general linear chirplet transform.
//!
//! The chirplet transform evaluates, for every frame, one STFT per rotation
//! angle α on a fixed symmetric grid. Each candidate demodulates the windowed
//! frame by `exp(-i·c·τ²)` with `c = tan(α)·f_s/(2·T_s)` and τ the time from
//! the frame center. Per cell the candidate of largest magnitude is kept.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::signal::IqSequence;

/// Window, hop, FFT length and chirplet count of a transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ChirpletParams {
    pub n_chirplets: usize,
    pub window: Vec<f64>,
    pub hop: usize,
    pub fft_bins: usize,
}

impl ChirpletParams {
    pub fn new(n_chirplets: usize, window: Vec<f64>, hop: usize, fft_bins: usize) -> Result<Self> {
        let p = Self { n_chirplets, window, hop, fft_bins };
        p.validate()?;
        Ok(p)
    }

    /// Hann window of `w` taps with hop `w/4` and an FFT of `w` bins.
    pub fn hann(window_size: usize, n_chirplets: usize) -> Result<Self> {
        Self::new(n_chirplets, hann_window(window_size), window_size.div_ceil(4).max(1), window_size)
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n_chirplets < 1 {
            return param_err("n_chirplets must be at least 1");
        }
        if self.window.is_empty() {
            return param_err("window must have at least one tap");
        }
        if self.window.iter().any(|w| !w.is_finite()) || self.window.iter().all(|&w| w == 0.0) {
            return param_err("window taps must be finite and not all zero");
        }
        if self.hop < 1 {
            return param_err("hop must be at least 1");
        }
        if self.fft_bins < self.window.len() {
            return param_err(format!("fft_bins {} shorter than window {}", self.fft_bins, self.window.len()));
        }
        Ok(())
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos()).collect()
}

/// Complex time-frequency map, frames × bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyGrid {
    pub values: Array2<Complex64>,
    pub frame_times_s: Vec<f64>,
    pub bin_freqs_hz: Vec<f64>,
    /// Winning rotation angle per cell, radians.
    pub selected_alpha: Array2<f64>,
}

impl TimeFrequencyGrid {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.magnitudes().rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn metadata_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Meta<'a> {
            frames: usize,
            bins: usize,
            frame_times_s: &'a [f64],
            bin_freqs_hz: &'a [f64],
        }
        Ok(serde_json::to_string_pretty(&Meta {
            frames: self.frames(),
            bins: self.bins(),
            frame_times_s: &self.frame_times_s,
            bin_freqs_hz: &self.bin_freqs_hz,
        })?)
    }

    /// Writes `<stem>.csv` (magnitudes) and `<stem>.json` (axes).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.metadata_json()?).map_err(|e| Error::io(&json, e))
    }
}

/// Rotation angles `-π/2 + kπ/(N+1)`, k = 1..N.
///
/// Evaluated as `π(2k - N - 1) / (2(N+1))` so the grid is exactly symmetric
/// and the middle angle of an odd grid is exactly zero.
pub fn alpha_grid(n_chirplets: usize) -> Result<Vec<f64>> {
    if n_chirplets < 1 {
        return param_err("n_chirplets must be at least 1");
    }
    let n = n_chirplets as i64;
    Ok((1..=n).map(|k| PI * (2 * k - n - 1) as f64 / (2 * (n + 1)) as f64).collect())
}

/// Maps a chirp rate (rad/s²) to its rotation angle `atan(2·T_s·c / f_s)`.
pub fn alpha_from_chirp_rate(chirp_rate: f64, sample_rate_hz: f64) -> f64 {
    let ts = 1.0 / sample_rate_hz;
    (2.0 * ts * chirp_rate / sample_rate_hz).atan()
}

/// Inverse of [`alpha_from_chirp_rate`]: `tan(α)·f_s / (2·T_s)`.
pub fn chirp_rate_from_alpha(alpha: f64, sample_rate_hz: f64) -> f64 {
    let ts = 1.0 / sample_rate_hz;
    alpha.tan() * sample_rate_hz / (2.0 * ts)
}

/// Rényi entropy (bits) of a non-negative energy distribution.
pub fn renyi_entropy(energy: &Array2<f64>, order: f64) -> f64 {
    let total: f64 = energy.sum();
    let moment: f64 = energy.iter().map(|e| (e / total).powf(order)).sum();
    moment.log2() / (1.0 - order)
}

/// Precomputed FFT and demodulation chirps for one (params, sample rate).
pub struct ChirpletPlan {
    params: ChirpletParams,
    sample_rate_hz: f64,
    fft: Arc<dyn Fft<f64>>,
    /// (alpha, demodulator) in selection-priority order; `None` for α = 0.
    candidates: Vec<(f64, Option<Vec<Complex64>>)>,
}

impl ChirpletPlan {
    pub fn new(params: &ChirpletParams, sample_rate_hz: f64) -> Result<Self> {
        params.validate()?;
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return param_err("sample rate must be positive");
        }
        let grid = alpha_grid(params.n_chirplets)?;
        let w = params.window_len();
        let ts = 1.0 / sample_rate_hz;
        let mut order: Vec<usize> = (0..grid.len()).collect();
        // nearest to zero first, negative before positive
        order.sort_by(|&a, &b| {
            let (x, y) = (grid[a], grid[b]);
            x.abs().partial_cmp(&y.abs()).unwrap().then(x.partial_cmp(&y).unwrap())
        });
        let candidates = order
            .into_iter()
            .map(|i| {
                let alpha = grid[i];
                if alpha == 0.0 {
                    return (alpha, None);
                }
                let rate = chirp_rate_from_alpha(alpha, sample_rate_hz);
                let chirp = (0..w)
                    .map(|u| {
                        let tau = (u as f64 - w as f64 / 2.0) * ts;
                        Complex64::from_polar(1.0, -rate * tau * tau)
                    })
                    .collect();
                (alpha, Some(chirp))
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(params.fft_bins);
        Ok(Self { params: params.clone(), sample_rate_hz, fft, candidates })
    }

    pub fn params(&self) -> &ChirpletParams {
        &self.params
    }

    fn frame_count(&self, len: usize) -> Result<usize> {
        let w = self.params.window_len();
        if len < w {
            return param_err(format!("signal of {len} samples shorter than window {w}"));
        }
        Ok((len - w) / self.params.hop + 1)
    }

    fn axes(&self, frames: usize) -> (Vec<f64>, Vec<f64>) {
        let ts = 1.0 / self.sample_rate_hz;
        let w = self.params.window_len() as f64;
        let times = (0..frames).map(|f| ((f * self.params.hop) as f64 + w / 2.0) * ts).collect();
        let n = self.params.fft_bins;
        let freqs = (0..n)
            .map(|k| {
                let k = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
                k * self.sample_rate_hz / n as f64
            })
            .collect();
        (times, freqs)
    }

    /// One frame's windowed spectrum, optionally demodulated.
    fn candidate(&self, frame: &[Complex64], demod: Option<&[Complex64]>, buf: &mut Vec<Complex64>) {
        buf.clear();
        buf.resize(self.params.fft_bins, Complex64::new(0.0, 0.0));
        match demod {
            None => {
                for ((b, s), w) in buf.iter_mut().zip(frame).zip(&self.params.window) {
                    *b = s * w;
                }
            }
            Some(chirp) => {
                for (((b, s), w), c) in buf.iter_mut().zip(frame).zip(&self.params.window).zip(chirp) {
                    *b = s * w * c;
                }
            }
        }
        self.fft.process(buf);
    }

    pub fn stft(&self, signal: &[Complex64]) -> Result<TimeFrequencyGrid> {
        let frames = self.frame_count(signal.len())?;
        let (w, bins) = (self.params.window_len(), self.params.fft_bins);
        let mut values = Array2::zeros((frames, bins));
        let mut buf = Vec::with_capacity(bins);
        for f in 0..frames {
            let start = f * self.params.hop;
            self.candidate(&signal[start..start + w], None, &mut buf);
            values.row_mut(f).iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
        }
        let (frame_times_s, bin_freqs_hz) = self.axes(frames);
        Ok(TimeFrequencyGrid { values, frame_times_s, bin_freqs_hz, selected_alpha: Array2::zeros((frames, bins)) })
    }

    /// Spectrum of every candidate angle for one frame, in grid order.
    pub fn frame_candidates(&self, signal: &[Complex64], frame: usize) -> Result<Vec<(f64, Vec<Complex64>)>> {
        let frames = self.frame_count(signal.len())?;
        if frame >= frames {
            return param_err(format!("frame {frame} >= {frames}"));
        }
        let start = frame * self.params.hop;
        let w = self.params.window_len();
        let mut out: Vec<(f64, Vec<Complex64>)> = self
            .candidates
            .iter()
            .map(|(alpha, demod)| {
                let mut buf = Vec::new();
                self.candidate(&signal[start..start + w], demod.as_deref(), &mut buf);
                (*alpha, buf)
            })
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(out)
    }

    pub fn glct(&self, signal: &[Complex64]) -> Result<TimeFrequencyGrid> {
        if self.params.n_chirplets.is_multiple_of(2) {
            return param_err(format!("n_chirplets must be odd, got {}", self.params.n_chirplets));
        }
        let frames = self.frame_count(signal.len())?;
        let (w, bins) = (self.params.window_len(), self.params.fft_bins);
        let mut values = Array2::zeros((frames, bins));
        let mut alphas = Array2::zeros((frames, bins));
        let mut best_mag = vec![0.0f64; bins];
        let mut buf = Vec::with_capacity(bins);
        for f in 0..frames {
            let start = f * self.params.hop;
            let frame = &signal[start..start + w];
            for (ci, (alpha, demod)) in self.candidates.iter().enumerate() {
                self.candidate(frame, demod.as_deref(), &mut buf);
                for (k, v) in buf.iter().enumerate() {
                    let m = v.norm_sqr();
                    if ci == 0 || m > best_mag[k] {
                        best_mag[k] = m;
                        values[[f, k]] = *v;
                        alphas[[f, k]] = *alpha;
                    }
                }
            }
        }
        let (frame_times_s, bin_freqs_hz) = self.axes(frames);
        Ok(TimeFrequencyGrid { values, frame_times_s, bin_freqs_hz, selected_alpha: alphas })
    }
}

pub fn stft(signal: &IqSequence, params: &ChirpletParams) -> Result<TimeFrequencyGrid> {
    ChirpletPlan::new(params, signal.sample_rate_hz())?.stft(signal.samples())
}

pub fn glct(signal: &IqSequence, params: &ChirpletParams) -> Result<TimeFrequencyGrid> {
    ChirpletPlan::new(params, signal.sample_rate_hz())?.glct(signal.samples())
}

/// Serializable description of the transform used by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlctConfig {
    pub window_size: usize,
    pub n_chirplets: usize,
    /// Defaults to window_size / 4 rounded up.
    pub hop: Option<usize>,
    /// Defaults to window_size.
    pub fft_bins: Option<usize>,
}

impl Default for GlctConfig {
    fn default() -> Self {
        Self { window_size: 64, n_chirplets: 9, hop: None, fft_bins: None }
    }
}

impl GlctConfig {
    pub fn params(&self, window_size: usize) -> Result<ChirpletParams> {
        let hop = self.hop.unwrap_or(window_size.div_ceil(4).max(1));
        let bins = self.fft_bins.unwrap_or(window_size).max(window_size);
        ChirpletParams::new(self.n_chirplets, hann_window(window_size), hop, bins)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chirplets.is_multiple_of(2) {
            return param_err("n_chirplets must be odd");
        }
        self.params(self.window_size).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use rand::Rng;

    const FS: f64 = 1e7;

    fn random_signal(seed: u64, n: usize) -> IqSequence {
        let mut r = rng::substream(seed, Domain::Test, &[]);
        let s = (0..n).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        IqSequence::new(s, FS).unwrap()
    }

    #[test]
    fn alpha_grid_values() {
        assert_eq!(alpha_grid(1).unwrap(), vec![0.0]);
        let g = alpha_grid(3).unwrap();
        let expect = [-PI / 4.0, 0.0, PI / 4.0];
        for (a, b) in g.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        for n in [5, 7, 9, 21] {
            let g = alpha_grid(n).unwrap();
            assert!(g.contains(&0.0));
            for i in 0..n {
                assert_eq!(g[i], -g[n - 1 - i]);
                assert!(g[i] > -PI / 2.0 && g[i] < PI / 2.0);
            }
            assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(alpha_grid(0).is_err());
    }

    #[test]
    fn alpha_chirp_mapping() {
        assert_eq!(alpha_from_chirp_rate(0.0, FS), 0.0);
        let a = alpha_from_chirp_rate(5e13 / 2.0, FS);
        assert!((a - 0.5f64.atan()).abs() < 1e-15);
        assert!((chirp_rate_from_alpha(a, FS) / 2.5e13 - 1.0).abs() < 1e-9);
        let mut prev = -PI / 2.0;
        for c in [-1e16, -1e12, -1e6, 0.0, 1e6, 1e12, 1e16] {
            let a = alpha_from_chirp_rate(c, FS);
            assert!(a > prev && a < PI / 2.0);
            prev = a;
        }
        assert!((alpha_from_chirp_rate(1e40, FS) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn tone_peaks_at_its_bin() {
        let n = 256;
        let k0 = 5;
        let s = (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * (k0 * i) as f64 / 32.0)).collect();
        let sig = IqSequence::new(s, FS).unwrap();
        let p = ChirpletParams::new(1, vec![1.0; 32], 16, 32).unwrap();
        let g = stft(&sig, &p).unwrap();
        for row in g.magnitudes().rows() {
            let argmax = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(argmax, k0);
        }
    }

    #[test]
    fn zero_signal_zero_grid() {
        let sig = IqSequence::new(vec![Complex64::new(0.0, 0.0); 100], FS).unwrap();
        let g = stft(&sig, &ChirpletParams::hann(32, 1).unwrap()).unwrap();
        assert!(g.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stft_matches_direct_dft() {
        let sig = random_signal(3, 256);
        let p = ChirpletParams::new(1, hann_window(64), 32, 64).unwrap();
        let g = stft(&sig, &p).unwrap();
        assert_eq!(g.frames(), 7);
        for f in 0..7 {
            for k in 0..64 {
                let direct: Complex64 = (0..64)
                    .map(|u| {
                        p.window[u]
                            * sig.samples()[f * 32 + u]
                            * Complex64::from_polar(1.0, -2.0 * PI * (k * u) as f64 / 64.0)
                    })
                    .sum();
                assert!((direct - g.values[[f, k]]).norm() < 1e-9);
            }
        }
        assert!(g.frame_times_s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_chirplet_equals_stft() {
        let sig = random_signal(4, 300);
        let p = ChirpletParams::hann(64, 1).unwrap();
        let a = stft(&sig, &p).unwrap();
        let b = glct(&sig, &p).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).norm() <= 1e-12);
        }
    }

    #[test]
    fn glct_rejects_even_and_short() {
        let sig = random_signal(5, 100);
        assert!(glct(&sig, &ChirpletParams::hann(32, 4).unwrap()).is_err());
        assert!(stft(&sig, &ChirpletParams::hann(128, 1).unwrap()).is_err());
        assert!(ChirpletParams::new(1, vec![0.0; 8], 1, 8).is_err());
        assert!(ChirpletParams::new(1, vec![1.0; 8], 1, 4).is_err());
    }

    #[test]
    fn tone_prefers_zero_alpha() {
        let n = 512;
        let s = (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * 0.11 * i as f64)).collect();
        let sig = IqSequence::new(s, FS).unwrap();
        let p = ChirpletParams::hann(64, 7).unwrap();
        let plan = ChirpletPlan::new(&p, FS).unwrap();
        let g = plan.glct(sig.samples()).unwrap();
        let st = plan.stft(sig.samples()).unwrap();
        let mags = g.magnitudes();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        for f in 0..g.frames() {
            // brute force over all candidates
            let cands = plan.frame_candidates(sig.samples(), f).unwrap();
            for k in 0..g.bins() {
                let best = cands.iter().map(|(_, v)| v[k].norm()).fold(0.0, f64::max);
                assert!((best - mags[[f, k]]).abs() < 1e-9);
                if mags[[f, k]] > 0.5 * peak {
                    assert_eq!(g.selected_alpha[[f, k]], 0.0);
                    assert!((mags[[f, k]] - st.values[[f, k]].norm()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn glct_dominates_stft_and_selects_grid_angles() {
        let sig = random_signal(6, 400);
        let p = ChirpletParams::hann(64, 9).unwrap();
        let a = stft(&sig, &p).unwrap();
        let b = glct(&sig, &p).unwrap();
        let grid = alpha_grid(9).unwrap();
        for ((x, y), al) in a.values.iter().zip(b.values.iter()).zip(b.selected_alpha.iter()) {
            assert!(y.norm() >= x.norm());
            assert!(grid.contains(al));
        }
    }

    #[test]
    fn export_writes_csv_and_json() {
        let sig = random_signal(7, 128);
        let g = stft(&sig, &ChirpletParams::hann(32, 1).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.export(dir.path(), "tf").unwrap();
        let csv = fs::read_to_string(dir.path().join("tf.csv")).unwrap();
        assert_eq!(csv.lines().count(), g.frames());
        assert_eq!(csv.lines().next().unwrap().split(',').count(), g.bins());
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("tf.json")).unwrap()).unwrap();
        assert_eq!(meta["bins"], 32);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn candidates_are_linear(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
                let sig = random_signal(seed, 96);
                let a = Complex64::new(re, im);
                let scaled: Vec<Complex64> = sig.samples().iter().map(|s| s * a).collect();
                let plan = ChirpletPlan::new(&ChirpletParams::hann(32, 5).unwrap(), FS).unwrap();
                for f in 0..3 {
                    let c1 = plan.frame_candidates(sig.samples(), f).unwrap();
                    let c2 = plan.frame_candidates(&scaled, f).unwrap();
                    for ((_, x), (_, y)) in c1.iter().zip(&c2) {
                        for (p, q) in x.iter().zip(y) {
                            prop_assert!((p * a - q).norm() <= 1e-12 * (1.0 + q.norm()));
                        }
                    }
                }
            }

            #[test]
            fn doubling_doubles_every_cell(seed in 0u64..1000) {
                let sig = random_signal(seed, 128);
                let p = ChirpletParams::hann(32, 9).unwrap();
                let a = glct(&sig, &p).unwrap();
                let b = glct(&sig.scaled(2.0).unwrap(), &p).unwrap();
                for (x, y) in a.values.iter().zip(b.values.iter()) {
                    prop_assert!((2.0 * x.norm() - y.norm()).abs() <= 1e-12 * (1.0 + y.norm()));
                }
                prop_assert_eq!(a.selected_alpha, b.selected_alpha);
            }
        }
    }
}
