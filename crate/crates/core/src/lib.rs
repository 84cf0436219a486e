//! Deterministic single-process federated-learning simulator.
//!
//! Clients run local mini-batch SGD on a squared-hinge linear SVM, then send
//! either all of their per-step gradients or a herded subset of them to the
//! server. Baselines: FedAvg, online gradient balancing (GraB), FedNova and
//! SCAFFOLD, the last two also with herded selection.

pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod runner;
pub mod selection;

pub use config::{DatasetSource, ExperimentConfig, Strategy};
pub use error::{Error, Result};
pub use numerics::ParamVector;
