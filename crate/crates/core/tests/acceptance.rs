//! One pass/fail line per acceptance criterion, then a summary line.
//! Failures are reported, not raised; set `RFFP_ACCEPTANCE_STRICT=1` to exit
//! nonzero when any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rffp_core::experiment::{metrics, stratified_kfold_labels, ConfusionMatrix, EvaluationReport, NeuralClassifier};
use rffp_core::features::{LabeledDataset, FEATURE_LEN};
use rffp_core::glct::{alpha_from_chirp_rate, alpha_grid, chirp_rate_from_alpha, renyi_entropy, ChirpletParams, ChirpletPlan};
use rffp_core::nn::{self, grad_check, EpochAction, LayerSpec, ModelConfig, OptimizerKind, Shape, Trainer};
use rffp_core::pipeline::{self, EvalSource, PipelineConfig, GRAD_CHECK_TOLERANCE};
use rffp_core::rng::{substream, Domain};
use rffp_core::signal::SnrDb;
use rffp_core::{experiment, Result};

const FS: f64 = 10e6;

enum Outcome {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed.as_secs_f64() < limit_s as f64, format!("{:.1} s of {limit_s} s", elapsed.as_secs_f64()))
}

fn random_signal(r: &mut impl Rng, n: usize) -> Vec<Complex64> {
    (0..n).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect()
}

fn criterion_1() -> Result<Outcome> {
    let t = Instant::now();
    let mut r = substream(1, Domain::Test, &[1]);
    let mut max_diff = 0.0f64;
    let mut dominated = true;
    for i in 0..100 {
        let n = r.random_range(128..512);
        let sig = random_signal(&mut r, n);
        let single = ChirpletPlan::new(&ChirpletParams::hann(64, 1)?, FS)?;
        let (g, s) = (single.glct(&sig)?, single.stft(&sig)?);
        for (a, b) in g.values.iter().zip(s.values.iter()) {
            max_diff = max_diff.max((a - b).norm());
        }
        let n_chirplets = [3, 5, 7, 9][i % 4];
        let multi = ChirpletPlan::new(&ChirpletParams::hann(64, n_chirplets)?, FS)?;
        let (g, s) = (multi.glct(&sig)?, multi.stft(&sig)?);
        dominated &= g.values.iter().zip(s.values.iter()).all(|(a, b)| a.norm() >= b.norm());
    }
    let (fast, time) = within(t.elapsed(), 10);
    Ok(verdict(
        max_diff <= 1e-12 && dominated && fast,
        format!("N=1 max |glct-stft| {max_diff:.2e}, odd N dominates: {dominated}, {time}"),
    ))
}

fn criterion_2() -> Result<Outcome> {
    let t = Instant::now();
    let grid = alpha_grid(9)?;
    let plan = ChirpletPlan::new(&ChirpletParams::hann(64, 9)?, FS)?;
    // angles 0.1 % off the grid, both signs; in samples the grid rates are
    // tan(α)/2 rad per sample², so larger offsets leave radians of residual
    // phase inside one window
    let rates: Vec<f64> = [(1, 1.001), (3, 0.999), (5, 1.001), (6, 0.999), (8, 1.001)]
        .iter()
        .map(|&(k, f)| chirp_rate_from_alpha(grid[k] * f, FS))
        .collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &c) in rates.iter().enumerate() {
        // centred in time so the sweep stays inside the Nyquist band
        let f0 = 0.25e6 * i as f64 - 0.5e6;
        let sig: Vec<Complex64> = (0..1024)
            .map(|n| {
                let t = (n as f64 - 512.0) / FS;
                Complex64::from_polar(1.0, 2.0 * PI * f0 * t + c * t * t)
            })
            .collect();
        let g = plan.glct(&sig)?;
        let s = plan.stft(&sig)?;
        let energy = |a: &Array2<Complex64>| a.mapv(|v| v.norm_sqr());
        let (hg, hs) = (renyi_entropy(&energy(&g.values), 3.0), renyi_entropy(&energy(&s.values), 3.0));

        let mags = g.magnitudes();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        let mut counts = vec![0usize; grid.len()];
        for (m, a) in mags.iter().zip(g.selected_alpha.iter()) {
            if *m >= 0.5 * peak {
                counts[grid.iter().position(|x| x == a).expect("selected alpha on grid")] += 1;
            }
        }
        let modal = grid[(0..grid.len()).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap()];
        let target = alpha_from_chirp_rate(c, FS);
        let nearest = *grid.iter().min_by(|a, b| (*a - target).abs().partial_cmp(&(*b - target).abs()).unwrap()).unwrap();
        ok &= hg < hs && modal == nearest;
        parts.push(format!("c={c:.3e}: H3 {hg:.2}<{hs:.2}, modal {modal:.3} vs {nearest:.3}"));
    }
    let (fast, time) = within(t.elapsed(), 30);
    Ok(verdict(ok && fast, format!("{}; {time}", parts.join("; "))))
}

fn model(input: Shape, layers: Vec<LayerSpec>) -> ModelConfig {
    ModelConfig {
        architecture: "probe".into(),
        input,
        layers,
        optimizer: OptimizerKind::Adam,
        learning_rate: 1e-3,
        max_epochs: 1,
        early_stop_min_delta: 0.0,
        early_stop_patience: 1,
        batch_size: 4,
        seed: 3,
    }
}

fn check(cfg: &ModelConfig, seed: u64) -> Result<f64> {
    let mut r = substream(seed, Domain::Test, &[3]);
    let x = Array3::from_shape_simple_fn((4, cfg.input.steps, cfg.input.channels), || r.random_range(-1.0..1.0));
    grad_check(cfg, &x, &[0, 4, 8, 2], 1e-5)
}

fn criterion_3() -> Result<Outcome> {
    let t = Instant::now();
    let dense9 = LayerSpec::Dense { units: 9 };
    let per_layer = vec![
        ("dense", model(Shape::new(1, 6), vec![dense9.clone()])),
        ("conv1d", model(Shape::new(8, 2), vec![LayerSpec::Conv1d { filters: 3, kernel: 3 }, LayerSpec::Flatten, dense9.clone()])),
        ("relu", model(Shape::new(1, 6), vec![LayerSpec::Dense { units: 5 }, LayerSpec::Relu, dense9.clone()])),
        ("maxpool", model(Shape::new(9, 2), vec![LayerSpec::MaxPool { size: 2 }, LayerSpec::Flatten, dense9.clone()])),
        ("reshape", model(Shape::new(12, 1), vec![LayerSpec::Reshape { steps: 3, channels: 4 }, LayerSpec::Flatten, dense9.clone()])),
        ("dropout", model(Shape::new(1, 6), vec![LayerSpec::Dropout { rate: 0.5 }, dense9.clone()])),
        (
            "bigru",
            model(
                Shape::new(5, 3),
                vec![LayerSpec::BiGru { units: 4, recurrent_dropout: 0.2, return_sequences: true }, LayerSpec::Flatten, dense9.clone()],
            ),
        ),
        (
            "bilstm",
            model(Shape::new(5, 3), vec![LayerSpec::BiLstm { units: 4, recurrent_dropout: 0.2, return_sequences: false }, dense9]),
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, cfg) in &per_layer {
        let e = check(cfg, 11)?;
        worst = worst.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    let names: Vec<String> = nn::architectures().iter().map(|a| a.name().to_string()).collect();
    for (name, e) in pipeline::grad_check_models(&names, 42)? {
        worst = worst.max(e);
        parts.push(format!("tiny {name} {e:.1e}"));
    }
    let (fast, time) = within(t.elapsed(), 60);
    Ok(verdict(worst < GRAD_CHECK_TOLERANCE && fast, format!("max {worst:.2e} ({}); {time}", parts.join(", "))))
}

/// Straight from per-sample counting, with no shared code.
fn brute_force_metrics(cm: &[Vec<u64>]) -> [f64; 4] {
    let n = cm.len();
    let mut pairs = Vec::new();
    for (t, row) in cm.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            for _ in 0..c {
                pairs.push((t, p));
            }
        }
    }
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let (mut ps, mut rs, mut present) = (0.0, 0.0, 0);
    for c in 0..n {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let actual = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
        if predicted == 0.0 && actual == 0.0 {
            continue;
        }
        present += 1;
        ps += if predicted > 0.0 { tp / predicted } else { 0.0 };
        rs += if actual > 0.0 { tp / actual } else { 0.0 };
    }
    let (p, r) = (ps / present as f64, rs / present as f64);
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    [correct as f64 / pairs.len() as f64, p, r, f1]
}

fn criterion_4() -> Result<Outcome> {
    let mut r = substream(4, Domain::Test, &[4]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let sparse = r.random_bool(0.3);
        let counts: Vec<Vec<u64>> = (0..9)
            .map(|_| (0..9).map(|_| if sparse && r.random_bool(0.7) { 0 } else { r.random_range(0..20) }).collect())
            .collect();
        if counts.iter().flatten().sum::<u64>() == 0 {
            continue;
        }
        let m = metrics(&ConfusionMatrix { counts: counts.clone() })?;
        let b = brute_force_metrics(&counts);
        for (x, y) in [m.accuracy, m.precision, m.recall, m.f1].iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(verdict(worst <= 1e-12, format!("max deviation {worst:.2e} over 1000 matrices")))
}

fn criterion_5() -> Result<Outcome> {
    let labels: Vec<usize> = (0..1080).map(|i| i % 9).collect();
    let plan = stratified_kfold_labels(&labels, 10, 42)?;
    let mut ok = true;
    for fold in 0..10 {
        let (train, test) = plan.split(fold);
        ok &= test.len() == 108 && train.len() == 972;
        for c in 0..9 {
            ok &= test.iter().filter(|&&i| labels[i] == c).count() == 12;
        }
    }
    Ok(verdict(ok, format!("fold sizes {:?}", plan.fold_sizes())))
}

/// Ten noisy copies of a random prototype per class.
fn separable_dataset(n_per_class: usize) -> Result<LabeledDataset> {
    let mut r = substream(6, Domain::Test, &[6]);
    let prototypes: Vec<Vec<f64>> = (0..9).map(|_| (0..FEATURE_LEN).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let mut x = Array2::zeros((9 * n_per_class, FEATURE_LEN));
    let mut labels = Vec::new();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let c = i % 9;
        for (v, p) in row.iter_mut().zip(&prototypes[c]) {
            let noise: f64 = StandardNormal.sample(&mut r);
            *v = p + 0.05 * noise;
        }
        labels.push(c);
    }
    LabeledDataset::new(x, labels)
}

fn criterion_6() -> Result<Outcome> {
    let t = Instant::now();
    let data = separable_dataset(10)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in nn::architectures() {
        let mut cfg = arch.config();
        cfg.max_epochs = 200;
        // only the accuracy target ends training here
        cfg.early_stop_patience = cfg.max_epochs;
        let mut reached = None;
        let mut best = 0.0f64;
        Trainer::new(&cfg)
            .observe(|log, _| {
                best = best.max(log.val_accuracy);
                if log.val_accuracy >= 0.99 {
                    reached = Some(log.epoch);
                    EpochAction::Stop
                } else {
                    EpochAction::Continue
                }
            })
            .run(&data, &data)?;
        ok &= reached.is_some();
        parts.push(match reached {
            Some(e) => format!("{} epoch {e}", arch.name()),
            None => format!("{} best {:.1}%", arch.name(), 100.0 * best),
        });
    }
    Ok(verdict(ok, format!("{}; {:.1} s", parts.join(", "), t.elapsed().as_secs_f64())))
}

fn acc(report: &EvaluationReport, model: &str, snr: f64) -> f64 {
    report.row(model, SnrDb::Db(snr)).map(|r| r.result.mean.accuracy).unwrap_or(f64::NAN)
}

fn criterion_7() -> Result<Outcome> {
    let t = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = PipelineConfig::default();
    pipeline::cmd_synth(&cfg, dir.path())?;
    let report = pipeline::evaluate(&cfg, EvalSource::Corpus(dir.path()))?;
    let elapsed = t.elapsed();
    print!("{}", report.comparison_text());
    let (a20, a30) = (acc(&report, "cnn-bigru", 20.0), acc(&report, "cnn-bigru", 30.0));
    let mut ok = a20 >= 0.95 && a30 >= 0.98;
    let mut monotone = Vec::new();
    for arch in nn::architectures() {
        let a: Vec<f64> = [10.0, 20.0, 30.0].iter().map(|&s| acc(&report, arch.name(), s)).collect();
        let good = a[0] <= a[1] + 0.01 && a[1] <= a[2] + 0.01;
        ok &= good;
        monotone.push(format!("{} {}", arch.name(), if good { "monotone" } else { "NOT monotone" }));
    }
    let (fast, time) = within(elapsed, 1800);
    Ok(verdict(
        ok && fast,
        format!(
            "CNN-Bi-GRU {:.2}% @20 dB, {:.2}% @30 dB; {}; {time} on {} thread(s)",
            100.0 * a20,
            100.0 * a30,
            monotone.join(", "),
            rayon::current_num_threads()
        ),
    ))
}

fn criterion_8() -> Result<Outcome> {
    let Some(path) = std::env::var_os("RFFP_PUBLIC_DATASET").map(PathBuf::from) else {
        return Ok(Outcome::Skipped("RFFP_PUBLIC_DATASET not set".into()));
    };
    let data = LabeledDataset::read(&path, FEATURE_LEN)?;
    let cfg = nn::architecture_config("cnn-bigru")?;
    let classifier = NeuralClassifier::new(cfg);
    let report = experiment::snr_sweep(&[&classifier], &[SnrDb::Clean], |_| Ok(data.clone()), 10, nn::arch::DEFAULT_SEED)?;
    print!("{}", report.comparison_text());
    let a = report.rows[0].result.mean.accuracy;
    Ok(verdict(a >= 0.97, format!("CNN-Bi-GRU clean 10-fold accuracy {:.2}%", 100.0 * a)))
}

fn criterion_9() -> Result<Outcome> {
    let cfg = PipelineConfig {
        bursts_per_device: 12,
        models: vec!["cnn".into(), "cnn-bigru".into()],
        snr_levels: vec![SnrDb::Db(10.0), SnrDb::Db(30.0)],
        folds: 3,
        max_epochs: Some(2),
        ..PipelineConfig::default()
    };
    let run = || -> Result<Vec<(String, Vec<u8>)>> {
        let dir = tempfile::tempdir().expect("tempdir");
        let (corpus, feat, eval) = (dir.path().join("corpus"), dir.path().join("feat"), dir.path().join("eval"));
        pipeline::cmd_synth(&cfg, &corpus)?;
        pipeline::cmd_extract(&cfg, &corpus, &feat)?;
        pipeline::cmd_evaluate(&cfg, EvalSource::Corpus(&corpus), &eval)?;
        let files = [
            feat.join(pipeline::DATASET_CSV),
            feat.join(pipeline::DATASET_RFFD),
            eval.join(pipeline::METRICS_CSV),
            eval.join(pipeline::REPORT_JSON),
        ];
        Ok(files.iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).expect("output file"))).collect())
    };
    let (a, b) = (run()?, run()?);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    Ok(verdict(differing.is_empty(), format!("{} files compared, differing: {differing:?}", a.len())))
}

fn main() {
    let criteria: [(usize, fn() -> Result<Outcome>); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Option<Vec<usize>> =
        std::env::var("RFFP_CRITERIA").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let (mut passed, mut failed, mut skipped) = (0, 0, 0);
    for (n, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        match f() {
            Ok(Outcome::Pass(d)) => {
                passed += 1;
                println!("criterion {n}: PASS  {d}");
            }
            Ok(Outcome::Skipped(d)) => {
                skipped += 1;
                println!("criterion {n}: SKIPPED  {d}");
            }
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                println!("criterion {n}: FAIL  {d}");
            }
            Err(e) => {
                failed += 1;
                println!("criterion {n}: FAIL  error: {e}");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {skipped} skipped");
    if failed > 0 && std::env::var_os("RFFP_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
