//! Detection of malicious DNS-over-HTTPS traffic from encrypted flow
//! statistics.

pub mod autoencoder;
pub mod baselines;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod flowcore;
pub mod ingest;
pub mod neuralnet;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
