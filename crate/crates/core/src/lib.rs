//! Probabilistic wind power forecasting with variance-based sensitivity analysis.

pub mod dataset;
pub mod features;
pub mod models;
pub mod scoring;
pub mod selection;
pub mod sensitivity;
pub mod stats;
pub mod synth;
