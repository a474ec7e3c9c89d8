//! Mini-batch training with early stopping on validation loss.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{gather_batch, Mode};
use super::loss::softmax_ce;
use super::model::{argmax_rows, ModelConfig, Network};
use crate::error::{param_err, Error, Result};
use crate::features::LabeledDataset;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub parameters: Vec<f64>,
    pub param_count: usize,
    pub train_log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept; `None` if untrained.
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    param_count: usize,
    seed: u64,
    best_epoch: Option<usize>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"RFFM";

impl TrainedModel {
    pub fn network(&self) -> Result<Network> {
        Network::build(&self.config)
    }

    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<usize>> {
        self.network()?.predict(&self.parameters, features, self.config.batch_size)
    }

    pub fn train_log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        for e in &self.train_log {
            let _ = writeln!(out, "{},{:.10},{:.10},{:.6}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
        }
        out
    }

    /// Magic, u32 header length, JSON header, then the parameters as LE f64.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            param_count: self.param_count,
            seed: self.config.seed,
            best_epoch: self.best_epoch,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.parameters.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.parameters {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let blob = &bytes[8 + hlen..];
        if blob.len() != 8 * header.param_count {
            return Err(Error::Format(format!(
                "checkpoint holds {} bytes of parameters, expected {}",
                blob.len(),
                8 * header.param_count
            )));
        }
        let parameters: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if header.config.param_count()? != parameters.len() {
            return Err(Error::Format("checkpoint config does not match its parameter count".into()));
        }
        Ok(Self {
            config: header.config,
            param_count: header.param_count,
            parameters,
            train_log: Vec::new(),
            best_epoch: header.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Mean loss and accuracy of `params` on a dataset, in eval mode.
pub fn evaluate_loss(net: &mut Network, params: &[f64], data: &LabeledDataset, batch: usize) -> Result<(f64, f64)> {
    let logits = net.logits(params, &data.features, batch)?;
    let (loss, _) = softmax_ce(&logits, &data.labels)?;
    let pred = argmax_rows(&logits);
    let correct = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// What to do after an epoch, as decided by an observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochAction {
    Continue,
    Stop,
}

/// Called after every epoch with its log entry and the current parameters.
type Observer<'a> = Box<dyn FnMut(&EpochLog, &[f64]) -> EpochAction + 'a>;

pub struct Trainer<'a> {
    config: &'a ModelConfig,
    observer: Option<Observer<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a ModelConfig) -> Self {
        Self { config, observer: None }
    }

    /// Called after every epoch with the log entry and current parameters.
    pub fn observe(mut self, f: impl FnMut(&EpochLog, &[f64]) -> EpochAction + 'a) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn run(mut self, train: &LabeledDataset, val: &LabeledDataset) -> Result<TrainedModel> {
        let cfg = self.config;
        cfg.validate()?;
        if train.is_empty() || val.is_empty() {
            return param_err("training and validation sets must be non-empty");
        }
        let mut net = Network::build(cfg)?;
        let mut params = net.init_params(cfg.seed);
        let mut best = params.clone();
        let mut best_epoch = None;
        let mut log = Vec::new();
        let mut optimizer = cfg.optimizer.build(cfg.learning_rate)?;
        let mut shuffle_rng = rng::substream(cfg.seed, Domain::Shuffle, &[]);
        let mut dropout_rng = rng::substream(cfg.seed, Domain::Dropout, &[]);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best_loss = f64::INFINITY;
        let mut improved_ref = f64::INFINITY;
        let mut wait = 0;

        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let x = gather_batch(&train.features, chunk, net.input_shape());
                let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
                let (loss, grads) = net.loss_and_grad(&params, x, &labels, &mut Mode::Train(&mut dropout_rng))?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged(format!("non-finite training loss at epoch {epoch}")));
                }
                optimizer.step(&mut params, &grads)?;
                total += loss * chunk.len() as f64;
            }
            let (val_loss, val_accuracy) = evaluate_loss(&mut net, &params, val, cfg.batch_size)?;
            if !val_loss.is_finite() {
                return Err(Error::TrainingDiverged(format!("non-finite validation loss at epoch {epoch}")));
            }
            let entry = EpochLog { epoch, train_loss: total / train.len() as f64, val_loss, val_accuracy };
            log.push(entry);

            if val_loss < best_loss {
                best_loss = val_loss;
                best = params.clone();
                best_epoch = Some(epoch);
            }
            if val_loss < improved_ref - cfg.early_stop_min_delta {
                improved_ref = val_loss;
                wait = 0;
            } else {
                wait += 1;
            }
            let action = match self.observer.as_mut() {
                Some(f) => f(&entry, &params),
                None => EpochAction::Continue,
            };
            if action == EpochAction::Stop || wait >= cfg.early_stop_patience {
                break;
            }
        }
        Ok(TrainedModel {
            config: cfg.clone(),
            param_count: best.len(),
            parameters: best,
            train_log: log,
            best_epoch,
        })
    }
}

pub fn train(config: &ModelConfig, train: &LabeledDataset, val: &LabeledDataset) -> Result<TrainedModel> {
    Trainer::new(config).run(train, val)
}
