//! Classical anomaly detectors used as comparison points.

mod iforest;
mod lof;

pub use iforest::{average_path_length, IsoForest, IsoForestParams, IsoTree};
pub use lof::LofModel;

/// Default neighbor count for LOF.
pub const LOF_DEFAULT_K: usize = 20;
