//! Renewable energy forecasting toolkit.
//!
//! The crate is organized as a pipeline: [`ingest`] loads and cleans raw
//! hourly tables, [`features`] fits and replays leakage-safe transforms,
//! [`stats`] provides the statistical engine (stationarity tests, mutual
//! information, PCA, Friedman comparison), [`nn`] is a small deterministic
//! neural network core, [`models`] materializes the forecasting
//! architectures plus an ARIMA baseline, [`hpo`] runs two-stage
//! hyperparameter search, [`eval`] drives the ratio-sweep experiment
//! protocol, and [`pipeline`] wires everything behind a run configuration.
//!
//! All randomness is seeded explicitly; a run is a pure function of its
//! configuration.

pub mod eval;
pub mod features;
pub mod hpo;
pub mod ingest;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod stats;
