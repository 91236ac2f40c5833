//! Log-based anomaly detection toolkit.

pub mod nn;
