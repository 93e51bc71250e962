use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use crate::error::{Error, Result};
use crate::flowcore::{FeatureVector, Scaler, NUM_FEATURES};
use crate::neuralnet::{mse_loss, row_mse, Activation, AdamState, Matrix, Network};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub batch_norm: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.001,
            batch_norm: true,
            seed: 0,
        }
    }
}

/// Summary of a finished training run. `mse_mean`/`mse_std` describe the
/// per-sample reconstruction error over the training set in inference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mirrored encoder/decoder network, `A(x) = D(E(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub architecture: Architecture,
    pub network: Network,
}

impl Autoencoder {
    /// He-uniform initialization from `seed`; ReLU hidden layers with batch
    /// normalization, identity output.
    pub fn build(architecture: Architecture, seed: u64, batch_norm: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network::mlp(
            &architecture.layer_sizes(),
            Activation::Relu,
            Activation::Identity,
            batch_norm,
            &mut rng,
        )
        .expect("validated architecture yields a valid chain");
        Autoencoder {
            architecture,
            network,
        }
    }

    pub fn reconstruct(&self, v: &FeatureVector) -> FeatureVector {
        let x = Matrix::from_vec(1, NUM_FEATURES, v.0.to_vec()).expect("16 features");
        let out = self.network.infer(&x).expect("input width matches");
        FeatureVector::from_slice(out.row(0)).expect("16 outputs")
    }
}

pub(crate) fn to_matrix(vs: &[FeatureVector]) -> Matrix {
    let data = vs.iter().flat_map(|v| v.0).collect();
    Matrix::from_vec(vs.len(), NUM_FEATURES, data).expect("rows of 16")
}

pub(crate) fn check_scaled(vs: &[FeatureVector]) -> Result<()> {
    for v in vs {
        if let Some((index, &value)) = v
            .0
            .iter()
            .enumerate()
            .find(|(_, x)| !(0.0..=1.0).contains(*x))
        {
            return Err(Error::Unscaled { index, value });
        }
    }
    Ok(())
}

/// Contiguous mini-batches over a shuffled permutation; a trailing batch
/// smaller than `min_batch` is dropped.
pub(crate) fn batches(order: &[usize], size: usize, min_batch: usize) -> Vec<&[usize]> {
    order
        .chunks(size)
        .filter(|c| c.len() >= min_batch)
        .collect()
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trained autoencoder with the scaler its inputs went through.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub autoencoder: Autoencoder,
    pub scaler: Scaler,
    pub stats: TrainingStats,
}

/// Trains on scaled benign features with targets equal to inputs.
///
/// Each epoch reshuffles the samples from a ChaCha8 stream derived from the
/// seed and runs Adam on mini-batches; with batch normalization a trailing
/// batch of one sample is dropped.
pub fn train(
    mut model: Autoencoder,
    benign: &[FeatureVector],
    scaler: Scaler,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidParameter(
            "epochs and batch size must be positive".into(),
        ));
    }
    if benign.len() < config.batch_size {
        return Err(Error::NotEnoughSamples {
            needed: config.batch_size,
            got: benign.len(),
        });
    }
    check_scaled(benign)?;
    let data = to_matrix(benign);
    let min_batch = if model.network.has_batch_norm() { 2 } else { 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 1));
    let mut adam = AdamState::new(config.learning_rate);
    let mut order: Vec<usize> = (0..benign.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in batches(&order, config.batch_size, min_batch)
            .into_iter()
            .enumerate()
        {
            let x = gather(&data, batch);
            let fwd = model.network.forward_train(&x)?;
            let (loss, grad_out) = mse_loss(&fwd.output, &x)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = model.network.backward(&fwd, &grad_out)?;
            adam.step(&mut model.network.params_mut(), &grads.tensors());
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        epoch_losses.push(total / seen as f64);
    }

    let recon = model.network.infer(&data)?;
    let per_sample = row_mse(&recon, &data);
    let (mse_mean, mse_std) = mean_std(&per_sample);
    Ok(TrainedModel {
        autoencoder: model,
        scaler,
        stats: TrainingStats {
            seed: config.seed,
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            mse_mean,
            mse_std,
            epoch_losses,
        },
    })
}

pub(crate) fn gather(data: &Matrix, rows: &[usize]) -> Matrix {
    let mut out = Vec::with_capacity(rows.len() * data.cols());
    for &r in rows {
        out.extend_from_slice(data.row(r));
    }
    Matrix::from_vec(rows.len(), data.cols(), out).expect("gathered rows")
}

impl TrainedModel {
    /// Fits the scaler on raw benign features, then builds and trains.
    pub fn fit(
        architecture: Architecture,
        raw_benign: &[FeatureVector],
        config: &TrainConfig,
    ) -> Result<Self> {
        let scaler = Scaler::fit(raw_benign)?;
        let scaled = scaler.transform_all(raw_benign);
        let model = Autoencoder::build(architecture, config.seed, config.batch_norm);
        train(model, &scaled, scaler, config)
    }

    /// `(1/16) Σ (x_i − x̂_i)²` for an already-scaled vector.
    pub fn reconstruction_mse(&self, v: &FeatureVector) -> Result<f64> {
        Ok(self.reconstruction_mse_batch(std::slice::from_ref(v))?[0])
    }

    pub fn reconstruction_mse_batch(&self, vs: &[FeatureVector]) -> Result<Vec<f64>> {
        if vs.is_empty() {
            return Ok(Vec::new());
        }
        check_scaled(vs)?;
        let x = to_matrix(vs);
        let out = self.autoencoder.network.infer(&x)?;
        Ok(row_mse(&out, &x))
    }

    /// Scales raw features with the stored scaler, then scores them.
    pub fn score_raw(&self, raw: &[FeatureVector]) -> Result<Vec<f64>> {
        self.reconstruction_mse_batch(&self.scaler.transform_all(raw))
    }
}
