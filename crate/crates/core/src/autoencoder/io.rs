//! Versioned JSON model files.
//!
//! Floats are written in shortest round-trip decimal form (at most 17
//! significant digits), so load followed by save reproduces a file byte for
//! byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::model::{Autoencoder, TrainedModel, TrainingStats};
use super::vae::VaeModel;
use crate::error::{Error, Result};
use crate::flowcore::{Scaler, NUM_FEATURES};
use crate::neuralnet::Network;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AutoencoderDoc {
    format_version: u32,
    architecture: Architecture,
    layer_sizes: Vec<usize>,
    network: Network,
    scaler: Scaler,
    training: TrainingStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VaeDoc {
    format_version: u32,
    #[serde(flatten)]
    model: VaeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelDoc {
    Autoencoder(AutoencoderDoc),
    Vae(VaeDoc),
}

/// Any model that can live in a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Autoencoder(TrainedModel),
    Vae(VaeModel),
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = match self {
            SavedModel::Autoencoder(m) => ModelDoc::Autoencoder(AutoencoderDoc {
                format_version: FORMAT_VERSION,
                architecture: m.autoencoder.architecture.clone(),
                layer_sizes: m.autoencoder.architecture.layer_sizes(),
                network: m.autoencoder.network.clone(),
                scaler: m.scaler.clone(),
                training: m.stats.clone(),
            }),
            SavedModel::Vae(m) => ModelDoc::Vae(VaeDoc {
                format_version: FORMAT_VERSION,
                model: m.clone(),
            }),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        match doc {
            ModelDoc::Autoencoder(d) => {
                check_version(d.format_version)?;
                if d.layer_sizes != d.architecture.layer_sizes()
                    || d.network.sizes() != d.layer_sizes
                {
                    return Err(Error::Model(format!(
                        "network sizes {:?} do not match architecture {}",
                        d.network.sizes(),
                        d.architecture
                    )));
                }
                d.network.validate()?;
                d.scaler.validate()?;
                if !(d.training.mse_mean >= 0.0 && d.training.mse_std >= 0.0) {
                    return Err(Error::Model("training MSE statistics must be >= 0".into()));
                }
                Ok(SavedModel::Autoencoder(TrainedModel {
                    autoencoder: Autoencoder {
                        architecture: d.architecture,
                        network: d.network,
                    },
                    scaler: d.scaler,
                    stats: d.training,
                }))
            }
            ModelDoc::Vae(d) => {
                check_version(d.format_version)?;
                let m = d.model;
                for net in [&m.encoder, &m.head, &m.decoder] {
                    net.validate()?;
                }
                let p = m.architecture.embedding();
                if m.encoder.input_size() != NUM_FEATURES
                    || m.head.output_size() != 2 * p
                    || m.decoder.input_size() != p
                    || m.decoder.output_size() != NUM_FEATURES
                {
                    return Err(Error::Model("VAE network shapes do not match".into()));
                }
                if let Some(s) = &m.scaler {
                    s.validate()?;
                }
                Ok(SavedModel::Vae(m))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        match self {
            SavedModel::Autoencoder(m) => Some(&m.scaler),
            SavedModel::Vae(m) => m.scaler.as_ref(),
        }
    }

    pub fn training_stats(&self) -> Option<&TrainingStats> {
        match self {
            SavedModel::Autoencoder(m) => Some(&m.stats),
            SavedModel::Vae(m) => m.stats.as_ref(),
        }
    }

    /// Anomaly scores of already-scaled vectors.
    pub fn score_scaled(&self, vs: &[crate::flowcore::FeatureVector]) -> Result<Vec<f64>> {
        match self {
            SavedModel::Autoencoder(m) => m.reconstruction_mse_batch(vs),
            SavedModel::Vae(m) => m.score_batch(vs),
        }
    }
}

fn check_version(v: u32) -> Result<()> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::Model(format!(
            "unsupported format_version {v} (expected {FORMAT_VERSION})"
        )))
    }
}
