//! Experiment infrastructure: configuration, data, orchestration and reports.

pub mod config;
pub mod correlation;
pub mod data;
pub mod experiment;
pub mod report;
