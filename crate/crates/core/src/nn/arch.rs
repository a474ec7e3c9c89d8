//! The four classifier architectures, registered by name.

use super::layers::Shape;
use super::model::{LayerSpec, ModelConfig};
use super::optim::OptimizerKind;
use crate::error::{param_err, Result};
use crate::signal::NUM_DEVICES;

pub const DEFAULT_SEED: u64 = 42;

pub trait Architecture: Sync {
    /// Registry key, e.g. `cnn-bigru`.
    fn name(&self) -> &'static str;
    fn display_name(&self) -> &'static str;
    fn config(&self) -> ModelConfig;
    /// Same layer kinds at toy widths, for gradient checks.
    fn tiny_config(&self) -> ModelConfig;
    /// Parameter count listed in the published complexity table.
    fn reference_param_count(&self) -> usize;
    fn reference_depth(&self) -> usize;
}

fn base(name: &str, input: Shape, layers: Vec<LayerSpec>, optimizer: OptimizerKind, lr: f64, min_delta: f64) -> ModelConfig {
    ModelConfig {
        architecture: name.to_string(),
        input,
        layers,
        optimizer,
        learning_rate: lr,
        max_epochs: 30,
        early_stop_min_delta: min_delta,
        early_stop_patience: 5,
        batch_size: 32,
        seed: DEFAULT_SEED,
    }
}

fn bigru(units: usize, recurrent_dropout: f64, return_sequences: bool) -> LayerSpec {
    LayerSpec::BiGru { units, recurrent_dropout, return_sequences }
}

fn bilstm(units: usize, recurrent_dropout: f64, return_sequences: bool) -> LayerSpec {
    LayerSpec::BiLstm { units, recurrent_dropout, return_sequences }
}

fn head(hidden: usize) -> [LayerSpec; 3] {
    [LayerSpec::Dense { units: hidden }, LayerSpec::Relu, LayerSpec::Dense { units: NUM_DEVICES }]
}

pub struct Cnn;

impl Architecture for Cnn {
    fn name(&self) -> &'static str {
        "cnn"
    }

    fn display_name(&self) -> &'static str {
        "CNN"
    }

    fn config(&self) -> ModelConfig {
        let mut layers = vec![
            LayerSpec::Conv1d { filters: 8, kernel: 7 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv1d { filters: 16, kernel: 5 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: 0.3 },
        ];
        layers.extend(head(32));
        base(self.name(), ModelConfig::default_input(), layers, OptimizerKind::Adam, 3e-3, 1e-4)
    }

    fn tiny_config(&self) -> ModelConfig {
        let mut layers = vec![
            LayerSpec::Conv1d { filters: 3, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv1d { filters: 4, kernel: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dropout { rate: 0.3 },
        ];
        layers.extend(head(8));
        base(self.name(), Shape::new(20, 1), layers, OptimizerKind::Adam, 3e-3, 1e-4)
    }

    fn reference_param_count(&self) -> usize {
        15_689
    }

    fn reference_depth(&self) -> usize {
        11
    }
}

/// Reshape to 30×30, two stacked bidirectional layers, dense head.
fn recurrent_stack(name: &str, lstm: bool, input: Shape, view: Shape, widths: (usize, usize), hidden: usize) -> ModelConfig {
    let cell = if lstm { bilstm } else { bigru };
    let mut layers = vec![
        LayerSpec::Reshape { steps: view.steps, channels: view.channels },
        cell(widths.0, 0.0, true),
        LayerSpec::Dropout { rate: 0.3 },
        cell(widths.1, 0.0, false),
        LayerSpec::Dropout { rate: 0.3 },
    ];
    layers.extend(head(hidden));
    base(name, input, layers, OptimizerKind::RmsProp, 1e-3, 1e-2)
}

pub struct BiLstm;

impl Architecture for BiLstm {
    fn name(&self) -> &'static str {
        "bilstm"
    }

    fn display_name(&self) -> &'static str {
        "Bi-LSTM"
    }

    fn config(&self) -> ModelConfig {
        recurrent_stack(self.name(), true, ModelConfig::default_input(), Shape::new(30, 30), (64, 32), 32)
    }

    fn tiny_config(&self) -> ModelConfig {
        recurrent_stack(self.name(), true, Shape::new(16, 1), Shape::new(4, 4), (5, 3), 8)
    }

    fn reference_param_count(&self) -> usize {
        199_449
    }

    fn reference_depth(&self) -> usize {
        8
    }
}

pub struct BiGru;

impl Architecture for BiGru {
    fn name(&self) -> &'static str {
        "bigru"
    }

    fn display_name(&self) -> &'static str {
        "Bi-GRU"
    }

    fn config(&self) -> ModelConfig {
        recurrent_stack(self.name(), false, ModelConfig::default_input(), Shape::new(30, 30), (64, 32), 32)
    }

    fn tiny_config(&self) -> ModelConfig {
        recurrent_stack(self.name(), false, Shape::new(16, 1), Shape::new(4, 4), (5, 3), 8)
    }

    fn reference_param_count(&self) -> usize {
        207_129
    }

    fn reference_depth(&self) -> usize {
        8
    }
}

pub struct CnnBiGru;

impl CnnBiGru {
    /// The convolution runs along the rows of the feature matrix, so the
    /// recurrent layers see a short sequence of learned row descriptors.
    fn layers(view: Shape, filters: usize, kernel: usize, widths: (usize, usize), hidden: usize) -> Vec<LayerSpec> {
        let mut layers = vec![
            LayerSpec::Reshape { steps: view.steps, channels: view.channels },
            LayerSpec::Conv1d { filters, kernel },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            bigru(widths.0, 0.2, true),
            LayerSpec::Dropout { rate: 0.3 },
            bigru(widths.1, 0.2, false),
            LayerSpec::Dropout { rate: 0.3 },
        ];
        layers.extend(head(hidden));
        layers
    }
}

impl Architecture for CnnBiGru {
    fn name(&self) -> &'static str {
        "cnn-bigru"
    }

    fn display_name(&self) -> &'static str {
        "CNN-Bi-GRU"
    }

    fn config(&self) -> ModelConfig {
        let layers = Self::layers(Shape::new(30, 30), 16, 5, (32, 16), 32);
        base(self.name(), ModelConfig::default_input(), layers, OptimizerKind::Adam, 1e-3, 1e-4)
    }

    fn tiny_config(&self) -> ModelConfig {
        let layers = Self::layers(Shape::new(8, 4), 4, 3, (4, 3), 8);
        base(self.name(), Shape::new(32, 1), layers, OptimizerKind::Adam, 1e-3, 1e-4)
    }

    fn reference_param_count(&self) -> usize {
        83_529
    }

    fn reference_depth(&self) -> usize {
        14
    }
}

static REGISTRY: [&dyn Architecture; 4] = [&Cnn, &BiLstm, &BiGru, &CnnBiGru];

pub fn architectures() -> &'static [&'static dyn Architecture] {
    &REGISTRY
}

pub fn architecture(name: &str) -> Result<&'static dyn Architecture> {
    let key = name.to_ascii_lowercase().replace('_', "-");
    match REGISTRY.iter().find(|a| a.name() == key || a.display_name().eq_ignore_ascii_case(name)) {
        Some(a) => Ok(*a),
        None => param_err(format!(
            "unknown architecture {name:?}; expected one of {}",
            REGISTRY.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
        )),
    }
}

pub fn architecture_config(kind: &str) -> Result<ModelConfig> {
    Ok(architecture(kind)?.config())
}
