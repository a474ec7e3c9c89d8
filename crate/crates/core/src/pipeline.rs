//! End-to-end orchestration behind the command-line tool: corpus synthesis,
//! feature extraction, dataset import, window selection, training,
//! evaluation and reporting.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::experiment::{self, snr_sweep, Classifier, EvaluationReport, NeuralClassifier};
use crate::features::{build_dataset, FeatureConfig, LabeledDataset, FEATURE_LEN};
use crate::glct::GlctConfig;
use crate::nn::{self, grad_check, ModelConfig, TrainedModel, Trainer};
use crate::rng::{self, snr_id, Domain};
use crate::signal::{
    add_awgn_with, default_fleet, read_iq, rms_normalize, synthesize_emission, write_iq, BurstRecord, DeviceProfile,
    IqSequence, SnrDb, DEFAULT_SAMPLE_RATE_HZ, NUM_DEVICES,
};
use crate::transient::{align_by_xcorr, detect_transient, TransientParams, TransientSegment};
use crate::window_opt::{best_of, sweep_csv, window_sweep, WindowOptConfig, WindowScore};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub fleet: Vec<DeviceProfile>,
    /// Feature dataset (CSV or RFFD) to use instead of a synthetic corpus.
    pub import_path: Option<PathBuf>,
    pub bursts_per_device: usize,
    pub burst_duration_s: f64,
    pub sample_rate_hz: f64,
    pub transient: TransientParams,
    pub glct: GlctConfig,
    pub window_opt: WindowOptConfig,
    pub features: FeatureConfig,
    pub models: Vec<String>,
    pub snr_levels: Vec<SnrDb>,
    pub folds: usize,
    /// Overrides every model's epoch budget when set.
    pub max_epochs: Option<usize>,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: nn::arch::DEFAULT_SEED,
            fleet: default_fleet(),
            import_path: None,
            bursts_per_device: 120,
            burst_duration_s: 204.8e-6,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            transient: TransientParams::default(),
            glct: GlctConfig::default(),
            window_opt: WindowOptConfig::default(),
            features: FeatureConfig::default(),
            models: nn::architectures().iter().map(|a| a.name().to_string()).collect(),
            snr_levels: vec![SnrDb::Db(10.0), SnrDb::Db(20.0), SnrDb::Db(30.0)],
            folds: 10,
            max_epochs: None,
            output_dir: PathBuf::from("rffp-out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fleet.len() != NUM_DEVICES {
            return param_err(format!("fleet has {} devices, expected {NUM_DEVICES}", self.fleet.len()));
        }
        for (i, p) in self.fleet.iter().enumerate() {
            p.validate()?;
            if p.device_id != i {
                return Err(Error::InvalidProfile(format!("fleet entry {i} has device_id {}", p.device_id)));
            }
        }
        if self.bursts_per_device == 0 {
            return param_err("bursts_per_device must be at least 1");
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return param_err("sample_rate_hz must be positive");
        }
        let burst_len = (self.burst_duration_s * self.sample_rate_hz).round();
        if !(burst_len >= self.transient.segment_len as f64) {
            return param_err(format!(
                "bursts of {burst_len} samples are shorter than the {}-sample transient segment",
                self.transient.segment_len
            ));
        }
        self.transient.validate()?;
        if self.transient.reference_index >= self.bursts_per_device * NUM_DEVICES {
            return param_err("transient.reference_index is beyond the corpus");
        }
        self.glct.validate()?;
        if self.window_opt.enabled {
            self.window_opt.validate()?;
            if let Some(&w) = self.window_opt.candidates.iter().find(|&&w| w > self.transient.segment_len) {
                return param_err(format!("window candidate {w} exceeds the segment length"));
            }
        }
        self.features.validate()?;
        if self.features.length != FEATURE_LEN {
            return param_err(format!("models expect {FEATURE_LEN} features, config gives {}", self.features.length));
        }
        if self.models.is_empty() {
            return param_err("no models selected");
        }
        for m in &self.models {
            nn::architecture(m)?;
        }
        if self.snr_levels.is_empty() {
            return param_err("no SNR levels");
        }
        if self.snr_levels.iter().any(|s| s.as_db().is_nan()) {
            return param_err("SNR level is NaN");
        }
        if self.folds < 2 {
            return param_err("folds must be at least 2");
        }
        Ok(())
    }

    /// Canonical configs of the selected models with the run seed and any
    /// epoch override applied.
    pub fn model_configs(&self) -> Result<Vec<ModelConfig>> {
        self.models
            .iter()
            .map(|m| {
                let mut cfg = nn::architecture_config(m)?;
                cfg.seed = self.seed;
                if let Some(e) = self.max_epochs {
                    cfg.max_epochs = e;
                }
                Ok(cfg)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stem: String,
    pub device_id: usize,
    pub burst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sample_rate_hz: f64,
    pub burst_duration_s: f64,
    pub bursts_per_device: usize,
    pub devices: Vec<usize>,
    pub config_fingerprint: String,
    pub bursts: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn burst_stem(device: usize, burst: usize) -> String {
    format!("dev{device}_burst{burst:04}")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Simulates the whole fleet, device-major.
pub fn synthesize_corpus(cfg: &PipelineConfig) -> Result<Vec<BurstRecord>> {
    let jobs: Vec<(usize, usize)> =
        (0..NUM_DEVICES).flat_map(|d| (0..cfg.bursts_per_device).map(move |b| (d, b))).collect();
    jobs.par_iter()
        .map(|&(d, b)| synthesize_emission(&cfg.fleet[d], cfg.burst_duration_s, cfg.sample_rate_hz, b, cfg.seed))
        .collect()
}

/// Writes every burst plus `manifest.json` into `dir`.
pub fn cmd_synth(cfg: &PipelineConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    ensure_dir(dir)?;
    let bursts = synthesize_corpus(cfg)?;
    let mut entries = Vec::with_capacity(bursts.len());
    for b in &bursts {
        let stem = burst_stem(b.device_id, b.burst_index);
        write_iq(dir, &stem, b)?;
        entries.push(ManifestEntry { stem, device_id: b.device_id, burst_index: b.burst_index });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        sample_rate_hz: cfg.sample_rate_hz,
        burst_duration_s: cfg.burst_duration_s,
        bursts_per_device: cfg.bursts_per_device,
        devices: (0..NUM_DEVICES).collect(),
        config_fingerprint: experiment::fingerprint(cfg),
        bursts: entries,
    };
    write_text(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_corpus(dir: &Path) -> Result<(Manifest, Vec<BurstRecord>)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.bursts.is_empty() {
        return Err(Error::Format(format!("{} lists no bursts", path.display())));
    }
    let bursts = manifest.bursts.iter().map(|e| read_iq(dir, &e.stem)).collect::<Result<Vec<_>>>()?;
    Ok((manifest, bursts))
}

fn sample_id(b: &BurstRecord) -> String {
    burst_stem(b.device_id, b.burst_index)
}

/// Normalize, detect and align. Errors name the stage and the burst.
pub fn extract_segments(bursts: &[BurstRecord], params: &TransientParams) -> Result<Vec<TransientSegment>> {
    params.validate()?;
    let segments: Vec<TransientSegment> = bursts
        .par_iter()
        .map(|b| {
            let norm = rms_normalize(b).map_err(|e| Error::stage("normalize", sample_id(b), e))?;
            detect_transient(&norm, params.var_window, params.threshold_ratio, params.segment_len)
                .map_err(|e| Error::stage("detect", sample_id(b), e))
        })
        .collect::<Result<_>>()?;
    let reference = params.reference_index.min(segments.len() - 1);
    align_by_xcorr(&segments, reference, params.max_lag).map_err(|e| Error::stage("align", "corpus", e))
}

/// Adds AWGN at `snr` to every segment relative to its own power. Each
/// segment draws from a stream keyed by (seed, SNR, device, burst).
pub fn noisy_segments(segments: &[TransientSegment], snr: SnrDb, seed: u64, sample_rate_hz: f64) -> Result<Vec<TransientSegment>> {
    if snr == SnrDb::Clean {
        return Ok(segments.to_vec());
    }
    segments
        .par_iter()
        .map(|s| {
            let mut r = rng::substream(seed, Domain::Noise, &[snr_id(snr.as_db()), s.device_id as u64, s.source_burst as u64]);
            let sig = IqSequence::new(s.samples.clone(), sample_rate_hz)?;
            let noisy = add_awgn_with(&sig, snr.as_db(), &mut r)
                .map_err(|e| Error::stage("noise", format!("device {} burst {}", s.device_id, s.source_burst), e))?;
            Ok(TransientSegment { samples: noisy.into_samples(), ..s.clone() })
        })
        .collect()
}

/// Window size to use, plus the sweep when optimization is enabled.
pub fn choose_window(segments: &[TransientSegment], cfg: &PipelineConfig) -> Result<(usize, Option<Vec<WindowScore>>)> {
    if !cfg.window_opt.enabled {
        return Ok((cfg.glct.window_size, None));
    }
    let o = &cfg.window_opt;
    let sweep = window_sweep(segments, &o.candidates, o.smooth_k, o.stride).map_err(|e| Error::stage("window-opt", "corpus", e))?;
    Ok((best_of(&sweep).window_size, Some(sweep)))
}

pub fn segment_features(segments: &[TransientSegment], window: usize, cfg: &PipelineConfig) -> Result<LabeledDataset> {
    let params = cfg.glct.params(window)?;
    build_dataset(segments, &params, cfg.sample_rate_hz, &cfg.features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub samples: usize,
    pub window_size: usize,
    pub window_sweep: Option<Vec<WindowScore>>,
    pub histogram: Vec<usize>,
}

pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_RFFD: &str = "dataset.rffd";

/// Clean features for the whole corpus, written as CSV and RFFD.
pub fn cmd_extract(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<ExtractSummary> {
    cfg.validate()?;
    let (_, bursts) = load_corpus(corpus)?;
    let segments = extract_segments(&bursts, &cfg.transient)?;
    let (window, sweep) = choose_window(&segments, cfg)?;
    let data = segment_features(&segments, window, cfg)?;
    ensure_dir(out)?;
    data.write_csv(&out.join(DATASET_CSV))?;
    data.write_rffd(&out.join(DATASET_RFFD))?;
    if let Some(s) = &sweep {
        write_text(&out.join("window_sweep.csv"), &sweep_csv(s))?;
    }
    let summary = ExtractSummary { samples: data.len(), window_size: window, window_sweep: sweep, histogram: data.histogram() };
    write_text(&out.join("extract.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Reads a CSV or RFFD feature file and writes the canonical pair.
pub fn cmd_import(path: &Path, out: &Path) -> Result<LabeledDataset> {
    let data = LabeledDataset::read(path, FEATURE_LEN)?;
    ensure_dir(out)?;
    data.write_csv(&out.join(DATASET_CSV))?;
    data.write_rffd(&out.join(DATASET_RFFD))?;
    Ok(data)
}

pub fn cmd_optimize_window(cfg: &PipelineConfig, corpus: &Path, out: &Path) -> Result<WindowScore> {
    cfg.validate()?;
    let (_, bursts) = load_corpus(corpus)?;
    let segments = extract_segments(&bursts, &cfg.transient)?;
    let o = &cfg.window_opt;
    let sweep = window_sweep(&segments, &o.candidates, o.smooth_k, o.stride)?;
    ensure_dir(out)?;
    write_text(&out.join("window_sweep.csv"), &sweep_csv(&sweep))?;
    Ok(best_of(&sweep))
}

/// Trains one model on a stratified split (one fold held out for early
/// stopping) and writes the checkpoint and training log.
pub fn cmd_train(cfg: &PipelineConfig, model: &str, dataset: &Path, out: &Path) -> Result<TrainedModel> {
    cfg.validate()?;
    let data = LabeledDataset::read(dataset, FEATURE_LEN)?;
    let mut mcfg = nn::architecture_config(model)?;
    mcfg.seed = cfg.seed;
    if let Some(e) = cfg.max_epochs {
        mcfg.max_epochs = e;
    }
    let plan = experiment::stratified_kfold(&data, cfg.folds, cfg.seed)?;
    let (train_idx, val_idx) = plan.split(0);
    let trained = Trainer::new(&mcfg).run(&data.subset(&train_idx), &data.subset(&val_idx))?;
    ensure_dir(out)?;
    let name = nn::architecture(model)?.name();
    trained.save(&out.join(format!("{name}.model")))?;
    write_text(&out.join(format!("{name}_train_log.csv")), &trained.train_log_csv())?;
    Ok(trained)
}

/// Where evaluation features come from.
pub enum EvalSource<'a> {
    /// Synthetic corpus: features are regenerated per SNR level.
    Corpus(&'a Path),
    /// Imported features: evaluated clean, no noise injection.
    Dataset(&'a Path),
}

pub const REPORT_JSON: &str = "report.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const BARS_CSV: &str = "bars.csv";
pub const COMPARISON_TXT: &str = "comparison.txt";

pub fn evaluate(cfg: &PipelineConfig, source: EvalSource<'_>) -> Result<EvaluationReport> {
    cfg.validate()?;
    let classifiers: Vec<NeuralClassifier> = cfg.model_configs()?.into_iter().map(NeuralClassifier::new).collect();
    let refs: Vec<&dyn Classifier> = classifiers.iter().map(|c| c as &dyn Classifier).collect();
    match source {
        EvalSource::Corpus(dir) => {
            let (manifest, bursts) = load_corpus(dir)?;
            let segments = extract_segments(&bursts, &cfg.transient)?;
            let (window, _) = choose_window(&segments, cfg)?;
            let fs = manifest.sample_rate_hz;
            snr_sweep(
                &refs,
                &cfg.snr_levels,
                |snr| segment_features(&noisy_segments(&segments, snr, cfg.seed, fs)?, window, cfg),
                cfg.folds,
                cfg.seed,
            )
        }
        EvalSource::Dataset(path) => {
            let data = LabeledDataset::read(path, FEATURE_LEN)?;
            snr_sweep(&refs, &[SnrDb::Clean], |_| Ok(data.clone()), cfg.folds, cfg.seed)
        }
    }
}

pub fn write_report(report: &EvaluationReport, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_text(&out.join(REPORT_JSON), &report.to_json()?)?;
    write_text(&out.join(METRICS_CSV), &report.table_csv())?;
    write_text(&out.join(BARS_CSV), &report.bar_csv())?;
    write_text(&out.join(COMPARISON_TXT), &report.comparison_text())
}

pub fn cmd_evaluate(cfg: &PipelineConfig, source: EvalSource<'_>, out: &Path) -> Result<EvaluationReport> {
    let report = evaluate(cfg, source)?;
    write_report(&report, out)?;
    Ok(report)
}

pub fn cmd_report(report_json: &Path) -> Result<EvaluationReport> {
    let text = fs::read_to_string(report_json).map_err(|e| Error::io(report_json, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Max relative gradient error of each selected model's tiny variant on a
/// fixed random batch of four.
pub fn grad_check_models(models: &[String], seed: u64) -> Result<Vec<(String, f64)>> {
    models
        .iter()
        .map(|m| {
            let arch = nn::architecture(m)?;
            let cfg = arch.tiny_config();
            let mut r = rng::substream(seed, Domain::Test, &[0x6772_6164]);
            let x = Array3::from_shape_simple_fn((4, cfg.input.steps, cfg.input.channels), || r.random_range(-1.0..1.0));
            let labels: Vec<usize> = (0..4).map(|i| (i * 4 + 1) % NUM_DEVICES).collect();
            Ok((arch.name().to_string(), grad_check(&cfg, &x, &labels, 1e-5)?))
        })
        .collect()
}
