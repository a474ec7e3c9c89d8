//! Declarative model configs and the sequential network built from them.

use std::ops::Range;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{gather_batch, Conv1d, Dense, Dropout, Layer, MaxPool1d, Mode, Relu, Reshape, Shape};
use super::loss::softmax_ce;
use super::optim::OptimizerKind;
use super::recurrent::{BiRecurrent, CellKind};
use crate::error::{param_err, Error, Result};
use crate::features::FEATURE_LEN;
use crate::rng::{self, Domain};
use crate::signal::NUM_DEVICES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Reshape { steps: usize, channels: usize },
    Conv1d { filters: usize, kernel: usize },
    Relu,
    MaxPool { size: usize },
    Flatten,
    Dropout { rate: f64 },
    Dense { units: usize },
    BiGru { units: usize, recurrent_dropout: f64, return_sequences: bool },
    BiLstm { units: usize, recurrent_dropout: f64, return_sequences: bool },
}

impl LayerSpec {
    fn build(&self, input: Shape) -> Result<Box<dyn Layer>> {
        Ok(match *self {
            LayerSpec::Reshape { steps, channels } => Box::new(Reshape::new(input, Shape::new(steps, channels))?),
            LayerSpec::Conv1d { filters, kernel } => Box::new(Conv1d::new(input, filters, kernel)?),
            LayerSpec::Relu => Box::new(Relu::new(input)),
            LayerSpec::MaxPool { size } => Box::new(MaxPool1d::new(input, size)?),
            LayerSpec::Flatten => Box::new(Reshape::flatten(input)),
            LayerSpec::Dropout { rate } => Box::new(Dropout::new(input, rate)?),
            LayerSpec::Dense { units } => Box::new(Dense::new(input, units)?),
            LayerSpec::BiGru { units, recurrent_dropout, return_sequences } => {
                Box::new(BiRecurrent::new(CellKind::Gru, input, units, return_sequences, recurrent_dropout)?)
            }
            LayerSpec::BiLstm { units, recurrent_dropout, return_sequences } => {
                Box::new(BiRecurrent::new(CellKind::Lstm, input, units, return_sequences, recurrent_dropout)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_min_delta: f64,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Builds a throwaway network to check the layer chain end to end.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return param_err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return param_err("batch size must be at least 1");
        }
        if self.early_stop_min_delta < 0.0 {
            return param_err("early-stopping min_delta must be non-negative");
        }
        let net = Network::build(self)?;
        let out = net.output_shape();
        if out.steps != 1 || out.channels != NUM_DEVICES {
            return Err(Error::Shape(format!(
                "network must end in {NUM_DEVICES} outputs, ends in {}x{}",
                out.steps, out.channels
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(Network::build(self)?.param_count())
    }

    /// Number of layers counting activations, dropout and reshapes.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn default_input() -> Shape {
        Shape::new(FEATURE_LEN, 1)
    }
}

/// A sequential stack of layers over one flat parameter vector.
pub struct Network {
    input: Shape,
    layers: Vec<Box<dyn Layer>>,
    ranges: Vec<Range<usize>>,
    param_count: usize,
}

impl Network {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        if config.layers.is_empty() {
            return param_err("model has no layers");
        }
        let mut shape = config.input;
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut ranges = Vec::with_capacity(config.layers.len());
        let mut offset = 0;
        for spec in &config.layers {
            let layer = spec.build(shape)?;
            shape = layer.output_shape();
            ranges.push(offset..offset + layer.param_count());
            offset += layer.param_count();
            layers.push(layer);
        }
        Ok(Self { input: config.input, layers, ranges, param_count: offset })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map(|l| l.output_shape()).unwrap_or(self.input)
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    /// Parameter range owned by each layer.
    pub fn layer_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Each layer is initialized from its own substream of `seed`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        for (i, (layer, r)) in self.layers.iter().zip(&self.ranges).enumerate() {
            let mut rng = rng::substream(seed, Domain::Init, &[i as u64]);
            layer.init_params(&mut params[r.clone()], &mut rng);
        }
        params
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Shape(format!("{} parameters for a {}-parameter model", params.len(), self.param_count)));
        }
        Ok(())
    }

    /// Returns logits, batch × classes.
    pub fn forward(&mut self, params: &[f64], x: Array3<f64>, mode: &mut Mode<'_>) -> Result<Array2<f64>> {
        self.check_params(params)?;
        let mut h = x;
        for (layer, r) in self.layers.iter_mut().zip(&self.ranges) {
            h = layer.forward(&params[r.clone()], h, mode)?;
        }
        let (b, t, c) = h.dim();
        if t != 1 {
            return Err(Error::Shape(format!("network output has {t} timesteps")));
        }
        Ok(h.into_shape_with_order((b, c)).unwrap())
    }

    /// Backpropagates d(loss)/d(logits) through the last forward pass.
    pub fn backward(&mut self, params: &[f64], dlogits: Array2<f64>) -> Vec<f64> {
        let mut grads = vec![0.0; self.param_count];
        let (b, c) = dlogits.dim();
        let mut g = dlogits.into_shape_with_order((b, 1, c)).unwrap();
        // layers before the first parametric one need no gradient
        let first = self.ranges.iter().position(|r| !r.is_empty()).unwrap_or(0);
        for (i, (layer, r)) in self.layers.iter_mut().zip(&self.ranges).enumerate().rev() {
            if i == first {
                layer.backward_params(&params[r.clone()], g, &mut grads[r.clone()]);
                break;
            }
            g = layer.backward(&params[r.clone()], g, &mut grads[r.clone()]);
        }
        grads
    }

    pub fn loss_and_grad(
        &mut self,
        params: &[f64],
        x: Array3<f64>,
        labels: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<(f64, Vec<f64>)> {
        let logits = self.forward(params, x, mode)?;
        let (loss, dlogits) = softmax_ce(&logits, labels)?;
        Ok((loss, self.backward(params, dlogits)))
    }

    /// Eval-mode logits for every row of `features`, in chunks of `batch`.
    pub fn logits(&mut self, params: &[f64], features: &Array2<f64>, batch: usize) -> Result<Array2<f64>> {
        if features.ncols() != self.input.size() {
            return Err(Error::Shape(format!("{} features for a {}-input model", features.ncols(), self.input.size())));
        }
        let n = features.nrows();
        let mut out = Array2::zeros((n, self.output_shape().channels));
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let x = gather_batch(features, chunk, self.input);
            let l = self.forward(params, x, &mut Mode::Eval)?;
            for (k, &i) in chunk.iter().enumerate() {
                out.row_mut(i).assign(&l.row(k));
            }
        }
        Ok(out)
    }

    pub fn predict(&mut self, params: &[f64], features: &Array2<f64>, batch: usize) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(params, features, batch)?))
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
