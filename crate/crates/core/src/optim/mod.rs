//! Adam optimization, loss/evaluation metrics, and the training loop.

mod adam;
pub mod metrics;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use train::{evaluate, train, MetricsRecord, Network, TrainConfig, TrainSample};
