//! Object-centric process mining and prediction.
//!
//! This crate ingests object-centric event logs (JSON-OCEL), flattens them
//! per object type, discovers directly-follows graphs and their object-centric
//! merge, and trains a graph-attention + LSTM model that predicts the next
//! activity and the time until the next event for a chosen object type.
//!
//! The pipeline, end to end:
//!
//! 1. [`ocel::parse_ocel`] — load and validate a JSON-OCEL file.
//! 2. [`flatten::flatten`] — restrict the log to one object type.
//! 3. [`graph::discover_ocdfg`] — per-type DFGs merged into one graph with a
//!    frequency vector per edge.
//! 4. [`dataset`] — prefix samples with temporal features, scaling, splits.
//! 5. [`neural`] — the differentiable model (GAT encoder, shared and
//!    task-specific LSTM layers, two heads) on a small autodiff engine.
//! 6. [`train`] — the training loop and evaluation metrics.

pub mod dataset;
pub mod flatten;
pub mod graph;
pub mod neural;
pub mod ocel;
pub mod tensor;
pub mod train;

pub use dataset::{PrefixDataset, PrefixSample, ScalingStats, Split};
pub use flatten::FlattenedLog;
pub use graph::{Dfg, NodeIndex, Ocdfg};
pub use neural::{GraphTensors, Model, ModelConfig};
pub use ocel::{Event, EventId, ObjectCentricEventLog, ObjectRef, SummaryReport, Timestamp};
pub use train::{EvalReport, TrainRun};
