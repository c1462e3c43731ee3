//! Experiment harness around the `online-em` crate: configuration parsing,
//! replication studies with paired algorithm runs, quantile summaries, and
//! asymptotics reports. The binary in `main.rs` is a thin wrapper over
//! these modules so integration tests can drive them directly.

pub mod config;
pub mod experiment;
pub mod report;
pub mod summary;
