//! Neural-network stack: layers, recurrent cells, loss, optimizers,
//! the four classifier architectures, and training.

pub mod arch;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod recurrent;
pub mod train;

pub use arch::{architecture, architecture_config, architectures, Architecture};
pub use gradcheck::grad_check;
pub use layers::{Layer, Mode, Shape};
pub use loss::{softmax, softmax_ce};
pub use model::{LayerSpec, ModelConfig, Network};
pub use optim::{adam_step, rmsprop_step, Optimizer, OptimizerKind};
pub use recurrent::{bidirectional, gru_cell, lstm_cell, CellKind, CellParams, LstmState};
pub use train::{train, EpochAction, EpochLog, TrainedModel, Trainer};
