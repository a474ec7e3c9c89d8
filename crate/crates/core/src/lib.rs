//! RF emitter fingerprinting: transient extraction from IQ bursts,
//! chirplet time-frequency features, and neural classifiers evaluated by
//! stratified cross-validation across noise levels.

pub mod error;
pub mod experiment;
pub mod features;
pub mod glct;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod signal;
pub mod transient;
pub mod window_opt;

pub use error::{Error, Result};
