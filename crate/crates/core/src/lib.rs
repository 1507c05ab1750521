//! Small fully-connected classifiers with per-example gradient
//! instrumentation: label-noise experiments, gradient coherence statistics
//! and winsorized SGD.

pub mod coherence;
pub mod dataset;
pub mod harness;
pub mod net;
pub mod optimizer;
pub mod rng;
