//! Stratified k-fold cross-validation, classification metrics, the SNR
//! sweep, and report output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{param_err, Error, Result};
use crate::features::LabeledDataset;
use crate::nn::{ModelConfig, Trainer};
use crate::rng::{self, Domain};
use crate::signal::{SnrDb, NUM_DEVICES};

/// Fold index of every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// (training indices, held-out indices) for `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.assignments.len()).partition(|&i| self.assignments[i] == fold);
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with its own seeded stream, then deals samples to
/// folds round-robin with one counter shared across classes, so fold sizes
/// and per-class counts each differ by at most one.
pub fn stratified_kfold_labels(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return param_err(format!("k = {k}; need at least 2 folds"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((c, idx)) = by_class.iter().find(|(_, idx)| idx.len() < k) {
        return Err(Error::Stratification(format!("class {c} has {} samples, fewer than k = {k}", idx.len())));
    }
    let mut assignments = vec![0; labels.len()];
    let mut counter = 0;
    for (&class, idx) in &mut by_class {
        let mut r = rng::substream(seed, Domain::Fold, &[class as u64]);
        idx.shuffle(&mut r);
        for &i in idx.iter() {
            assignments[i] = counter % k;
            counter += 1;
        }
    }
    Ok(FoldPlan { k, assignments })
}

pub fn stratified_kfold(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_labels(&dataset.labels, k, seed)
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels, {} predictions", truth.len(), predicted.len())));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Label(format!("class pair ({t}, {p}) outside [0, {})", classes)));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn mean(all: &[Metrics]) -> Metrics {
        let n = all.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Metrics { accuracy: sum(|m| m.accuracy), precision: sum(|m| m.precision), recall: sum(|m| m.recall), f1: sum(|m| m.f1) }
    }

    pub fn percent(&self) -> Metrics {
        Metrics { accuracy: 100.0 * self.accuracy, precision: 100.0 * self.precision, recall: 100.0 * self.recall, f1: 100.0 * self.f1 }
    }
}

/// Accuracy plus macro precision and recall over the classes that occur in
/// either the truth or the predictions; a zero denominator counts as 0.
/// F1 is the harmonic mean of macro precision and macro recall.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return param_err("confusion matrix is empty");
    }
    let n = cm.classes();
    let mut trace = 0;
    let (mut p_sum, mut r_sum, mut present) = (0.0, 0.0, 0usize);
    for c in 0..n {
        let tp = cm.counts[c][c];
        trace += tp;
        let row: u64 = cm.counts[c].iter().sum();
        let col: u64 = cm.counts.iter().map(|r| r[c]).sum();
        if row + col == 0 {
            continue;
        }
        present += 1;
        p_sum += if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        r_sum += if row > 0 { tp as f64 / row as f64 } else { 0.0 };
    }
    let precision = p_sum / present as f64;
    let recall = r_sum / present as f64;
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(Metrics { accuracy: trace as f64 / total as f64, precision, recall, f1 })
}

/// What a classifier reports for one held-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub predictions: Vec<usize>,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
}

/// Anything that can be trained on one split and predict the other.
pub trait Classifier: Sync {
    fn name(&self) -> &str;
    fn display_name(&self) -> &str {
        self.name()
    }
    /// Hash of everything that determines the classifier's behavior.
    fn fingerprint(&self) -> String;
    fn fit_predict(&self, train: &LabeledDataset, test: &LabeledDataset, seed: u64) -> Result<FoldOutcome>;
}

/// Trains a fresh network per fold; the held-out fold doubles as the
/// early-stopping validation set.
pub struct NeuralClassifier {
    pub config: ModelConfig,
    display: String,
}

impl NeuralClassifier {
    pub fn new(config: ModelConfig) -> Self {
        let display = crate::nn::architecture(&config.architecture)
            .map(|a| a.display_name().to_string())
            .unwrap_or_else(|_| config.architecture.clone());
        Self { config, display }
    }
}

impl Classifier for NeuralClassifier {
    fn name(&self) -> &str {
        &self.config.architecture
    }

    fn display_name(&self) -> &str {
        &self.display
    }

    fn fingerprint(&self) -> String {
        fingerprint(&self.config)
    }

    fn fit_predict(&self, train: &LabeledDataset, test: &LabeledDataset, seed: u64) -> Result<FoldOutcome> {
        let cfg = ModelConfig { seed, ..self.config.clone() };
        let model = Trainer::new(&cfg).run(train, test)?;
        Ok(FoldOutcome { predictions: model.predict(&test.features)?, epochs: model.train_log.len(), best_epoch: model.best_epoch })
    }
}

/// Always answers the same class.
pub struct ConstantClassifier(pub usize);

impl Classifier for ConstantClassifier {
    fn name(&self) -> &str {
        "constant"
    }

    fn fingerprint(&self) -> String {
        format!("constant-{}", self.0)
    }

    fn fit_predict(&self, _train: &LabeledDataset, test: &LabeledDataset, _seed: u64) -> Result<FoldOutcome> {
        Ok(FoldOutcome { predictions: vec![self.0; test.len()], epochs: 0, best_epoch: None })
    }
}

/// SHA-256 of the value's JSON serialization, first 16 hex digits.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    rng::derive_key(seed, Domain::Fold, &[u64::MAX, fold as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub test_size: usize,
    pub epochs: usize,
    pub best_epoch: Option<usize>,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: String,
    pub display_name: String,
    pub config_fingerprint: String,
    pub seed: u64,
    /// Unweighted mean of the per-fold metrics.
    pub mean: Metrics,
    pub folds: Vec<FoldResult>,
}

/// Runs every fold (in parallel) and averages the per-fold metrics.
pub fn cross_validate(classifier: &dyn Classifier, dataset: &LabeledDataset, k: usize, seed: u64) -> Result<CvResult> {
    let plan = stratified_kfold(dataset, k, seed)?;
    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, test_idx) = plan.split(fold);
            let (train, test) = (dataset.subset(&train_idx), dataset.subset(&test_idx));
            let s = fold_seed(seed, fold);
            let out = classifier.fit_predict(&train, &test, s)?;
            let confusion = ConfusionMatrix::from_predictions(&test.labels, &out.predictions, NUM_DEVICES)?;
            let m = metrics(&confusion)?;
            log::info!(
                "[{} fold {fold}] {} epochs, best {}, accuracy {:.2}%",
                classifier.name(),
                out.epochs,
                out.best_epoch.map_or("-".to_string(), |e| e.to_string()),
                100.0 * m.accuracy
            );
            Ok(FoldResult {
                fold,
                seed: s,
                test_size: test.len(),
                epochs: out.epochs,
                best_epoch: out.best_epoch,
                metrics: m,
                confusion,
            })
        })
        .collect::<Result<_>>()?;
    let mean = Metrics::mean(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    Ok(CvResult {
        model: classifier.name().to_string(),
        display_name: classifier.display_name().to_string(),
        config_fingerprint: classifier.fingerprint(),
        seed,
        mean,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub snr_db: SnrDb,
    #[serde(flatten)]
    pub result: CvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub k: usize,
    pub rows: Vec<ReportRow>,
}

/// One cross-validation per (SNR level, classifier), SNR-major like the
/// published table. `dataset_for` produces the features for each level.
pub fn snr_sweep(
    classifiers: &[&dyn Classifier],
    snr_levels: &[SnrDb],
    mut dataset_for: impl FnMut(SnrDb) -> Result<LabeledDataset>,
    k: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if snr_levels.is_empty() {
        return param_err("no SNR levels to sweep");
    }
    if classifiers.is_empty() {
        return param_err("no models to evaluate");
    }
    let mut rows = Vec::new();
    for &snr in snr_levels {
        let data = dataset_for(snr)?;
        for c in classifiers {
            let result = cross_validate(*c, &data, k, seed)?;
            log::info!("[{} snr {}] mean accuracy {:.2}%", c.name(), snr.label(), 100.0 * result.mean.accuracy);
            rows.push(ReportRow { snr_db: snr, result });
        }
    }
    Ok(EvaluationReport { seed, k, rows })
}

/// Published accuracy/precision/recall/F1 (percent) per model and SNR.
pub const REFERENCE_TABLE: &[(&str, f64, [f64; 4])] = &[
    ("cnn", 10.0, [98.84, 98.83, 98.53, 98.68]),
    ("bilstm", 10.0, [97.75, 97.72, 98.12, 97.92]),
    ("bigru", 10.0, [98.85, 98.13, 98.53, 98.33]),
    ("cnn-bigru", 10.0, [99.17, 99.33, 99.53, 99.43]),
    ("cnn", 20.0, [99.32, 99.28, 98.98, 99.13]),
    ("bilstm", 20.0, [98.25, 98.19, 98.58, 98.38]),
    ("bigru", 20.0, [99.34, 98.63, 98.98, 98.80]),
    ("cnn-bigru", 20.0, [99.65, 99.80, 99.99, 99.90]),
    ("cnn", 30.0, [100.00, 100.00, 99.91, 99.95]),
    ("bilstm", 30.0, [99.61, 99.77, 99.87, 99.82]),
    ("bigru", 30.0, [99.90, 99.84, 99.68, 99.76]),
    ("cnn-bigru", 30.0, [100.00, 99.98, 100.00, 99.99]),
];

pub fn reference_metrics(model: &str, snr_db: f64) -> Option<[f64; 4]> {
    REFERENCE_TABLE.iter().find(|(m, s, _)| *m == model && *s == snr_db).map(|r| r.2)
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// model, snr_db, accuracy, precision, recall, f1 in percent.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("model,snr_db,accuracy,precision,recall,f1\n");
        for r in &self.rows {
            let m = r.result.mean.percent();
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.2},{:.2},{:.2}",
                r.result.model,
                r.snr_db.label(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1
            );
        }
        out
    }

    /// Long-format data for a grouped bar chart.
    pub fn bar_csv(&self) -> String {
        let mut out = String::from("model,snr_db,metric,value\n");
        for r in &self.rows {
            let m = r.result.mean.percent();
            for (name, v) in [("accuracy", m.accuracy), ("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
                let _ = writeln!(out, "{},{},{name},{v:.2}", r.result.model, r.snr_db.label());
            }
        }
        out
    }

    /// Human-readable table with the published figures alongside.
    pub fn comparison_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:>6}  {:>7} {:>7} {:>7} {:>7}   {:>7} {:>7} {:>7} {:>7}",
            "model", "snr", "acc", "prec", "rec", "f1", "ref_acc", "ref_pr", "ref_rec", "ref_f1"
        );
        for r in &self.rows {
            let m = r.result.mean.percent();
            let reference = match r.snr_db {
                SnrDb::Db(v) => reference_metrics(&r.result.model, v),
                // clean features are compared against the highest-SNR row
                SnrDb::Clean => reference_metrics(&r.result.model, 30.0),
            };
            let refs = match reference {
                Some(v) => format!("{:>7.2} {:>7.2} {:>7.2} {:>7.2}", v[0], v[1], v[2], v[3]),
                None => format!("{:>7} {:>7} {:>7} {:>7}", "-", "-", "-", "-"),
            };
            let _ = writeln!(
                out,
                "{:<11} {:>6}  {:>7.2} {:>7.2} {:>7.2} {:>7.2}   {refs}",
                r.result.display_name,
                r.snr_db.label(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1
            );
        }
        out
    }

    pub fn row(&self, model: &str, snr: SnrDb) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.result.model == model && r.snr_db == snr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn balanced_labels(per_class: usize) -> Vec<usize> {
        (0..NUM_DEVICES).flat_map(|c| std::iter::repeat_n(c, per_class)).collect()
    }

    #[test]
    fn fold_plan_1080_balanced() {
        let labels = balanced_labels(120);
        let plan = stratified_kfold_labels(&labels, 10, 42).unwrap();
        assert_eq!(plan.fold_sizes(), vec![108; 10]);
        for f in 0..10 {
            let (train, test) = plan.split(f);
            assert_eq!(train.len(), 972);
            for c in 0..NUM_DEVICES {
                assert_eq!(test.iter().filter(|&&i| labels[i] == c).count(), 12);
            }
        }
        assert_eq!(plan, stratified_kfold_labels(&labels, 10, 42).unwrap());
        assert_ne!(plan, stratified_kfold_labels(&labels, 10, 43).unwrap());
    }

    #[test]
    fn leave_one_out_singletons() {
        let labels = vec![3; 7];
        let plan = stratified_kfold_labels(&labels, 7, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 7]);
    }

    #[test]
    fn fold_plan_errors() {
        assert!(matches!(stratified_kfold_labels(&[0, 0, 1], 2, 0), Err(Error::Stratification(_))));
        assert!(stratified_kfold_labels(&[0, 0], 1, 0).is_err());
    }

    #[test]
    fn metrics_examples() {
        let mut cm = ConfusionMatrix::new(9);
        for c in 0..9 {
            cm.counts[c][c] = 4;
        }
        let m = metrics(&cm).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));

        let mut cm = ConfusionMatrix::new(9);
        cm.counts[0] = vec![5, 5, 0, 0, 0, 0, 0, 0, 0];
        cm.counts[1][1] = 10;
        let m = metrics(&cm).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-15);
        assert!((m.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.recall - (0.5 + 1.0) / 2.0).abs() < 1e-15);
        assert!(metrics(&ConfusionMatrix::new(9)).is_err());
    }

    #[test]
    fn constant_predictor_baseline() {
        let labels = balanced_labels(10);
        let features = Array2::from_shape_fn((labels.len(), 4), |(i, j)| (i * 4 + j) as f64);
        let data = LabeledDataset::new(features, labels).unwrap();
        let r = cross_validate(&ConstantClassifier(0), &data, 10, 7).unwrap();
        for f in &r.folds {
            assert!((f.metrics.accuracy - 1.0 / 9.0).abs() < 1e-12);
        }
        assert_eq!(r, cross_validate(&ConstantClassifier(0), &data, 10, 7).unwrap());
    }

    #[test]
    fn sweep_shapes_and_csv() {
        let labels = balanced_labels(4);
        let features = Array2::zeros((labels.len(), 3));
        let data = LabeledDataset::new(features, labels).unwrap();
        let stub = ConstantClassifier(2);
        let levels = [SnrDb::Db(10.0), SnrDb::Db(20.0), SnrDb::Db(30.0)];
        let rep = snr_sweep(&[&stub, &stub, &stub, &stub], &levels, |_| Ok(data.clone()), 4, 1).unwrap();
        assert_eq!(rep.rows.len(), 12);
        assert_eq!(rep.table_csv().lines().count(), 13);
        assert_eq!(rep.bar_csv().lines().count(), 1 + 12 * 4);
        assert!(rep.table_csv().contains("constant,10,11.11,"));
        let one = snr_sweep(&[&stub], &levels[..1], |_| Ok(data.clone()), 4, 1).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert!(snr_sweep(&[&stub], &[], |_| Ok(data.clone()), 4, 1).is_err());
        assert!(rep.comparison_text().lines().count() == 13);
    }

    #[test]
    fn reference_lookup() {
        assert_eq!(reference_metrics("cnn-bigru", 10.0), Some([99.17, 99.33, 99.53, 99.43]));
        assert_eq!(REFERENCE_TABLE.len(), 12);
        assert!(reference_metrics("cnn", 15.0).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn folds_partition_and_balance(counts in proptest::collection::vec(5usize..30, 1..9), k in 2usize..6, seed: u64) {
                let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
                let plan = stratified_kfold_labels(&labels, k, seed).unwrap();
                let sizes = plan.fold_sizes();
                prop_assert_eq!(sizes.iter().sum::<usize>(), labels.len());
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                for (c, &n) in counts.iter().enumerate() {
                    for f in 0..k {
                        let in_fold = labels.iter().zip(&plan.assignments).filter(|(&l, &a)| l == c && a == f).count();
                        let expected = n as f64 / k as f64;
                        prop_assert!((in_fold as f64 - expected).abs() < 1.0);
                    }
                }
            }

            #[test]
            fn metrics_invariant_under_relabeling(
                cells in proptest::collection::vec(0u64..20, 81),
                perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle(),
            ) {
                let mut cm = ConfusionMatrix::new(9);
                for (i, v) in cells.iter().enumerate() {
                    cm.counts[i / 9][i % 9] = *v;
                }
                prop_assume!(cm.total() > 0);
                let mut pm = ConfusionMatrix::new(9);
                for i in 0..9 {
                    for j in 0..9 {
                        pm.counts[perm[i]][perm[j]] = cm.counts[i][j];
                    }
                }
                let (a, b) = (metrics(&cm).unwrap(), metrics(&pm).unwrap());
                for (x, y) in [(a.accuracy, b.accuracy), (a.precision, b.precision), (a.recall, b.recall), (a.f1, b.f1)] {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&x));
                }
            }
        }
    }
}
