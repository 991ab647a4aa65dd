//! Unsupervised anomaly detection for log data.
//!
//! The pipeline has two halves: an anomaly *scoring* model (a transformer
//! encoder trained on normal logs plus a stabilization class, whose `[CLS]`
//! output norm is the score) and an anomaly *decision* (a scalar boundary
//! applied to scores). The boundary is calibrated without anomaly examples
//! by masking tokens in the training data and reading off a percentile of
//! the resulting score distribution.
//!
//! Modules follow the processing order: [`corpus`] loads and splits labeled
//! log files, [`tokenizer`] turns message content into fixed-length token-id
//! sequences, [`scorer`] implements the encoder with exact gradients,
//! [`trainer`] runs class-balanced training, [`boundary`] computes decision
//! boundaries, and [`evaluator`] scores test sets and orchestrates
//! experiments.

pub mod boundary;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod scorer;
pub mod seeding;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
