//! Training engine for multi-layer spiking networks with online, local,
//! event-driven gradient learning, a sleep phase that aligns feedback
//! weights with the forward pathway, exact unrolled-gradient oracles, and
//! optional fixed-point quantization of weights and traces.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod quant;
pub mod rng;
pub mod sleep;
pub mod trainer;

pub use error::{Error, Result};
