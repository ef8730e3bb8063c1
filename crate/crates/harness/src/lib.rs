//! Desk-scale exemplar-free class-incremental learning with subspace-regularized
//! selective SSM classifiers.
//!
//! A synthetic [`TaskStream`] feeds [`train_sequential`], which trains one
//! task at a time while a frozen copy of the previous model supplies the
//! state regularizer. Accuracy matrices are summarized by [`compute_metrics`]
//! and representation drift by [`ckd_state_drift`].

pub mod ckd;
pub mod error;
pub mod metrics;
pub mod model;
pub mod regularizer;
pub mod stream;
pub mod train;

pub use ckd::{ckd, ckd_state_drift, CkdReport, StateLabel};
pub use error::{HarnessError, Result};
pub use metrics::{compute_metrics, forgetting, ClMetrics};
pub use model::{Model, ModelConfig, RegularizedLayers};
pub use stream::{generate_task_stream, StreamConfig, TaskStream};
pub use train::{train_sequential, Checkpoint, OptimizerConfig, RunConfig, TaskAccuracyMatrix, TrainOutcome};
