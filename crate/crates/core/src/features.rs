//! Fixed-length feature vectors from time-frequency grids, and the labeled
//! dataset with its CSV and RFFD file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::glct::{ChirpletParams, ChirpletPlan, TimeFrequencyGrid};
use crate::signal::NUM_DEVICES;
use crate::transient::TransientSegment;

pub const FEATURE_LEN: usize = 900;
const RFFD_MAGIC: &[u8; 4] = b"RFFD";
const RFFD_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub rows: usize,
    pub cols: usize,
    pub length: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { rows: 30, cols: 30, length: FEATURE_LEN }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols != self.length {
            return param_err(format!(
                "feature grid {}x{} does not give {} features",
                self.rows, self.cols, self.length
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Option<usize>,
}

/// Bilinear resample with corner-aligned sampling positions.
pub fn resample_bilinear(src: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let pos = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out == 1 || inp == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (x.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, x - lo as f64)
    };
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let (r0, r1, fy) = pos(i, rows, h);
        let (c0, c1, fx) = pos(j, cols, w);
        let top = src[[r0, c0]] * (1.0 - fx) + src[[r0, c1]] * fx;
        let bottom = src[[r1, c0]] * (1.0 - fx) + src[[r1, c1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Resamples |grid| to rows×cols, flattens row-major, and min-max scales to
/// [0, 1]. A constant grid maps to zeros.
pub fn tf_to_features(grid: &TimeFrequencyGrid, cfg: &FeatureConfig) -> Result<FeatureVector> {
    cfg.validate()?;
    if grid.frames() == 0 || grid.bins() == 0 {
        return param_err("empty time-frequency grid");
    }
    let resized = resample_bilinear(&grid.magnitudes(), cfg.rows, cfg.cols);
    let flat: Vec<f64> = resized.iter().cloned().collect();
    Ok(FeatureVector { values: min_max(&flat), label: None })
}

fn min_max(x: &[f64]) -> Vec<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// N×D feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

pub fn default_class_names() -> Vec<String> {
    (0..NUM_DEVICES).map(|i| format!("device_{i}")).collect()
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} feature rows but {} labels", features.nrows(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= NUM_DEVICES) {
            return Err(Error::Label(format!("label {bad} outside [0, 8]")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return param_err("dataset contains non-finite features");
        }
        Ok(Self { features, labels, class_names: default_class_names() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_len(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let d = self.feature_len();
        let width = d.saturating_sub(1).to_string().len().max(3);
        let mut out = String::with_capacity(self.len() * d * 12);
        out.push_str("label");
        for j in 0..d {
            let _ = write!(out, ",f{j:0width$}");
        }
        out.push('\n');
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            let _ = write!(out, "{label}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV form; the header must carry `expected_len` feature columns.
    pub fn from_csv(text: &str, expected_len: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, header)) = lines.next() else {
            return Err(Error::Format("empty CSV".into()));
        };
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") {
            return Err(Error::Format("first CSV column must be `label`".into()));
        }
        if cols.len() - 1 != expected_len {
            return Err(Error::ColumnCount { expected: expected_len, found: cols.len() - 1 });
        }
        let names = default_class_names();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines {
            let row = lineno + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    row,
                    reason: format!("{} fields, header has {}", fields.len(), cols.len()),
                });
            }
            let label = match fields[0].parse::<usize>() {
                Ok(l) if l < NUM_DEVICES => l,
                _ => names
                    .iter()
                    .position(|n| n == fields[0])
                    .ok_or_else(|| Error::UnknownLabel { row, label: fields[0].to_string() })?,
            };
            labels.push(label);
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| Error::Parse { row, reason: format!("bad number {f:?}") })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, reason: format!("non-finite value {f:?}") });
                }
                values.push(v);
            }
        }
        let n = labels.len();
        let features = Array2::from_shape_vec((n, expected_len), values).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(features, labels)
    }

    pub fn to_rffd(&self) -> Vec<u8> {
        let (n, d) = self.features.dim();
        let mut out = Vec::with_capacity(14 + n * d * 4 + n * 2);
        out.extend_from_slice(RFFD_MAGIC);
        out.extend_from_slice(&RFFD_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for v in self.features.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn from_rffd(bytes: &[u8], expected_len: usize) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..4] != RFFD_MAGIC {
            return Err(Error::Format("missing RFFD magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RFFD_VERSION {
            return Err(Error::Format(format!("unsupported RFFD version {version}")));
        }
        let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        if d != expected_len {
            return Err(Error::ColumnCount { expected: expected_len, found: d });
        }
        let need = 14 + n * d * 4 + n * 2;
        if bytes.len() != need {
            return Err(Error::Format(format!("RFFD body is {} bytes, expected {need}", bytes.len())));
        }
        let feat_end = 14 + n * d * 4;
        let values: Vec<f64> = bytes[14..feat_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut labels = Vec::with_capacity(n);
        for (row, c) in bytes[feat_end..].chunks_exact(2).enumerate() {
            let l = u16::from_le_bytes([c[0], c[1]]) as usize;
            if l >= NUM_DEVICES {
                return Err(Error::UnknownLabel { row: row + 1, label: l.to_string() });
            }
            labels.push(l);
        }
        let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(features, labels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_rffd(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_rffd()).map_err(|e| Error::io(path, e))
    }

    /// Loads either format, chosen by extension (`.rffd` or anything else as CSV).
    pub fn read(path: &Path, expected_len: usize) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "rffd") {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Self::from_rffd(&bytes, expected_len)
        } else {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Self::from_csv(&text, expected_len)
        }
    }
}

/// Transforms every segment with the chirplet transform and stacks the
/// feature vectors in input order.
pub fn build_dataset(
    segments: &[TransientSegment],
    params: &ChirpletParams,
    sample_rate_hz: f64,
    cfg: &FeatureConfig,
) -> Result<LabeledDataset> {
    if segments.is_empty() {
        return param_err("cannot build a dataset from zero segments");
    }
    if let Some(s) = segments.iter().find(|s| s.device_id >= NUM_DEVICES) {
        return Err(Error::Label(format!("device_id {} outside [0, 8]", s.device_id)));
    }
    cfg.validate()?;
    let plan = ChirpletPlan::new(params, sample_rate_hz)?;
    let rows: Vec<Vec<f64>> = segments
        .par_iter()
        .map(|s| {
            let grid = plan.glct(&s.samples).map_err(|e| {
                Error::stage("glct", format!("device {} burst {}", s.device_id, s.source_burst), e)
            })?;
            Ok(tf_to_features(&grid, cfg)?.values)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let features =
        Array2::from_shape_vec((segments.len(), cfg.length), flat).map_err(|e| Error::Shape(e.to_string()))?;
    LabeledDataset::new(features, segments.iter().map(|s| s.device_id).collect())
}
