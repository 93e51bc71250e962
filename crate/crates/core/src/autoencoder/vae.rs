//! Variational autoencoder baseline.
//!
//! The encoder body maps 16 inputs through the hidden layers; a linear head
//! emits `[mean | logvar]` for the `p`-dimensional latent. Training samples
//! `z = mean + exp(logvar/2)·ε`, `ε ~ N(0, I)`, and minimizes
//! `MSE(x, D(z)) + kl_weight · KL(N(mean, var) ‖ N(0, I))` with the KL term
//! summed over latent units and averaged over the batch. Scoring decodes the
//! mean, so it is deterministic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::arch::Architecture;
use super::model::{batches, check_scaled, gather, mean_std, to_matrix, TrainConfig, TrainingStats};
use crate::error::{Error, Result};
use crate::flowcore::{FeatureVector, Scaler};
use crate::neuralnet::{
    mse_loss, row_mse, Activation, AdamState, Forward, Gradients, LayerSpec, Matrix, Mode,
    Network,
};
use crate::seed;

/// KL divergence of `N(mean, exp(logvar))` from `N(0, 1)`, summed over units.
pub fn kl_divergence(mean: &[f64], logvar: &[f64]) -> f64 {
    mean.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub architecture: Architecture,
    pub encoder: Network,
    pub head: Network,
    pub decoder: Network,
    pub kl_weight: f64,
    pub scaler: Option<Scaler>,
    pub stats: Option<TrainingStats>,
}

struct VaePass {
    loss: f64,
    forwards: [Forward; 3],
    grads: [Gradients; 3],
}

/// Loss pieces of one VAE batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

impl VaeModel {
    /// Needs at least one hidden encoder layer, e.g. `[16, 50, 26, 3]`.
    pub fn build(architecture: Architecture, kl_weight: f64, seed: u64, batch_norm: bool) -> Result<Self> {
        if architecture.hidden_layers() == 0 {
            return Err(Error::Architecture {
                sizes: architecture.encoder().to_vec(),
                reason: "a VAE needs at least one hidden encoder layer".into(),
            });
        }
        if !(kl_weight >= 0.0) {
            return Err(Error::InvalidParameter(format!("kl_weight {kl_weight} < 0")));
        }
        let enc = architecture.encoder();
        let p = architecture.embedding();
        let body = &enc[..enc.len() - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs: Vec<LayerSpec> = body
            .windows(2)
            .map(|w| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: Activation::Relu,
                batch_norm,
            })
            .collect();
        let encoder = Network::from_specs(&specs, &mut rng)?;
        let head = Network::mlp(
            &[body[body.len() - 1], 2 * p],
            Activation::Identity,
            Activation::Identity,
            false,
            &mut rng,
        )?;
        let mut dec_sizes: Vec<usize> = enc.iter().rev().copied().collect();
        dec_sizes.dedup();
        let decoder = Network::mlp(
            &dec_sizes,
            Activation::Relu,
            Activation::Identity,
            batch_norm,
            &mut rng,
        )?;
        Ok(VaeModel {
            architecture,
            encoder,
            head,
            decoder,
            kl_weight,
            scaler: None,
            stats: None,
        })
    }

    fn latent(&self) -> usize {
        self.architecture.embedding()
    }

    fn split_stats(&self, stats: &Matrix) -> (Matrix, Matrix) {
        let p = self.latent();
        let mut mean = Matrix::zeros(stats.rows(), p);
        let mut logvar = Matrix::zeros(stats.rows(), p);
        for r in 0..stats.rows() {
            mean.row_mut(r).copy_from_slice(&stats.row(r)[..p]);
            logvar.row_mut(r).copy_from_slice(&stats.row(r)[p..]);
        }
        (mean, logvar)
    }

    /// Loss for a batch given explicit noise, without touching running
    /// statistics. Used for training diagnostics and tests.
    pub fn batch_loss(&self, x: &Matrix, noise: &Matrix, mode: Mode) -> Result<VaeLoss> {
        let h = self.encoder.forward(x, mode)?.output;
        let stats = self.head.forward(&h, mode)?.output;
        let (mean, logvar) = self.split_stats(&stats);
        let z = reparameterize(&mean, &logvar, noise);
        let out = self.decoder.forward(&z, mode)?.output;
        let (reconstruction, _) = mse_loss(&out, x)?;
        let kl = (0..mean.rows())
            .map(|r| kl_divergence(mean.row(r), logvar.row(r)))
            .sum::<f64>()
            / mean.rows() as f64;
        Ok(VaeLoss {
            reconstruction,
            kl,
            total: reconstruction + self.kl_weight * kl,
        })
    }

    /// Train-mode loss and gradients for a batch with explicit noise; pure.
    fn pass(&self, x: &Matrix, noise: &Matrix) -> Result<VaePass> {
        let enc_fwd = self.encoder.forward(x, Mode::Train)?;
        let head_fwd = self.head.forward(&enc_fwd.output, Mode::Train)?;
        let (mean, logvar) = self.split_stats(&head_fwd.output);
        let z = reparameterize(&mean, &logvar, noise);
        let dec_fwd = self.decoder.forward(&z, Mode::Train)?;
        let (recon, grad_out) = mse_loss(&dec_fwd.output, x)?;
        let dec_grads = self.decoder.backward(&dec_fwd, &grad_out)?;

        let b = x.rows() as f64;
        let p = self.latent();
        let mut kl = 0.0;
        let mut grad_stats = Matrix::zeros(x.rows(), 2 * p);
        for r in 0..x.rows() {
            kl += kl_divergence(mean.row(r), logvar.row(r));
            for j in 0..p {
                let m = mean[(r, j)];
                let lv = logvar[(r, j)];
                let dz = dec_grads.input[(r, j)];
                grad_stats[(r, j)] = dz + self.kl_weight * m / b;
                grad_stats[(r, p + j)] = dz * noise[(r, j)] * 0.5 * (0.5 * lv).exp()
                    + self.kl_weight * 0.5 * (lv.exp() - 1.0) / b;
            }
        }
        let head_grads = self.head.backward(&head_fwd, &grad_stats)?;
        let enc_grads = self.encoder.backward(&enc_fwd, &head_grads.input)?;
        Ok(VaePass {
            loss: recon + self.kl_weight * kl / b,
            forwards: [enc_fwd, head_fwd, dec_fwd],
            grads: [enc_grads, head_grads, dec_grads],
        })
    }

    /// Loss and gradient tensors (encoder, head, decoder order) for a batch.
    pub fn gradients(&self, x: &Matrix, noise: &Matrix) -> Result<(f64, Vec<Vec<f64>>)> {
        let pass = self.pass(x, noise)?;
        let tensors = pass
            .grads
            .iter()
            .flat_map(|g| g.tensors())
            .map(<[f64]>::to_vec)
            .collect();
        Ok((pass.loss, tensors))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut params = self.encoder.params_mut();
        params.extend(self.head.params_mut());
        params.extend(self.decoder.params_mut());
        params
    }

    fn train_step(&mut self, x: &Matrix, noise: &Matrix, adam: &mut AdamState) -> Result<f64> {
        let pass = self.pass(x, noise)?;
        let [enc_fwd, head_fwd, dec_fwd] = &pass.forwards;
        self.encoder.commit_batch_stats(enc_fwd);
        self.head.commit_batch_stats(head_fwd);
        self.decoder.commit_batch_stats(dec_fwd);
        let grads: Vec<&[f64]> = pass.grads.iter().flat_map(|g| g.tensors()).collect();
        adam.step(&mut self.params_mut(), &grads);
        Ok(pass.loss)
    }

    /// Reconstruction MSE of each scaled vector, decoding the latent mean.
    pub fn score_batch(&self, vs: &[FeatureVector]) -> Result<Vec<f64>> {
        if vs.is_empty() {
            return Ok(Vec::new());
        }
        check_scaled(vs)?;
        let x = to_matrix(vs);
        let h = self.encoder.infer(&x)?;
        let stats = self.head.infer(&h)?;
        let (mean, _) = self.split_stats(&stats);
        let out = self.decoder.infer(&mean)?;
        Ok(row_mse(&out, &x))
    }

    pub fn score(&self, v: &FeatureVector) -> Result<f64> {
        Ok(self.score_batch(std::slice::from_ref(v))?[0])
    }
}

fn reparameterize(mean: &Matrix, logvar: &Matrix, noise: &Matrix) -> Matrix {
    let mut z = mean.clone();
    for ((zv, lv), e) in z
        .as_mut_slice()
        .iter_mut()
        .zip(logvar.as_slice())
        .zip(noise.as_slice())
    {
        *zv += (0.5 * lv).exp() * e;
    }
    z
}

/// Trains a VAE on scaled benign features; same batching, shuffling and
/// optimizer settings as the plain autoencoder.
pub fn train_vae(
    mut model: VaeModel,
    benign: &[FeatureVector],
    scaler: Scaler,
    config: &TrainConfig,
) -> Result<VaeModel> {
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
    let p = model.latent();
    let min_batch = if model.encoder.has_batch_norm() || model.decoder.has_batch_norm() {
        2
    } else {
        1
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 1));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, 2));
    let mut adam = AdamState::new(config.learning_rate);
    let mut order: Vec<usize> = (0..benign.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (bi, batch) in batches(&order, config.batch_size, min_batch)
            .into_iter()
            .enumerate()
        {
            let x = gather(&data, batch);
            let noise_data = (0..batch.len() * p)
                .map(|_| StandardNormal.sample(&mut noise_rng))
                .collect();
            let noise = Matrix::from_vec(batch.len(), p, noise_data)?;
            let loss = model.train_step(&x, &noise, &mut adam)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        epoch_losses.push(total / seen as f64);
    }

    let scores = model.score_batch(benign)?;
    let (mse_mean, mse_std) = mean_std(&scores);
    model.scaler = Some(scaler);
    model.stats = Some(TrainingStats {
        seed: config.seed,
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        mse_mean,
        mse_std,
        epoch_losses,
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_divergence(&[0.0], &[0.0]), 0.0);
        assert_eq!(kl_divergence(&[1.0], &[0.0]), 0.5);
        assert_eq!(kl_divergence(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn vae_layout() {
        let arch = Architecture::new(vec![16, 50, 26, 3]).unwrap();
        let vae = VaeModel::build(arch, 1.0, 0, true).unwrap();
        assert_eq!(vae.encoder.sizes(), vec![16, 50, 26]);
        assert_eq!(vae.head.sizes(), vec![26, 6]);
        assert_eq!(vae.decoder.sizes(), vec![3, 26, 50, 16]);
        let no_hidden = Architecture::new(vec![16, 4]).unwrap();
        assert!(VaeModel::build(no_hidden, 1.0, 0, true).is_err());
    }

    #[test]
    fn zero_variance_zero_weight_is_plain_reconstruction() {
        let arch = Architecture::new(vec![16, 12, 4]).unwrap();
        let mut vae = VaeModel::build(arch, 0.0, 3, false).unwrap();
        // force logvar → very negative: the sampled latent collapses onto the mean
        let head = &mut vae.head.blocks[0].dense;
        for j in 4..8 {
            head.weights.row_mut(j).iter_mut().for_each(|w| *w = 0.0);
            head.bias[j] = -200.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<FeatureVector> = (0..6)
            .map(|_| FeatureVector(std::array::from_fn(|_| rng.random())))
            .collect();
        let x = to_matrix(&rows);
        let noise = Matrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-3.0..3.0)).collect())
            .unwrap();
        let loss = vae.batch_loss(&x, &noise, Mode::Train).unwrap();
        let deterministic: f64 = vae.score_batch(&rows).unwrap().iter().sum::<f64>() / 6.0;
        assert!((loss.total - deterministic).abs() < 1e-12);
        assert!((loss.total - loss.reconstruction).abs() == 0.0);
    }

    #[test]
    fn vae_gradients_match_finite_differences() {
        let arch = Architecture::new(vec![16, 10, 3]).unwrap();
        let vae = VaeModel::build(arch, 0.7, 5, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_vec(6, 16, (0..96).map(|_| rng.random()).collect()).unwrap();
        let noise = Matrix::from_vec(6, 3, (0..18).map(|_| StandardNormal.sample(&mut rng)).collect())
            .unwrap();

        let (loss, analytic) = vae.gradients(&x, &noise).unwrap();
        let reported = vae.batch_loss(&x, &noise, Mode::Train).unwrap().total;
        assert!((loss - reported).abs() < 1e-12);

        let h = 1e-5;
        let loss_of = |m: &VaeModel| m.batch_loss(&x, &noise, Mode::Train).unwrap().total;
        let mut worst: f64 = 0.0;
        let mut fd = vae.clone();
        for (k, grad) in analytic.iter().enumerate() {
            for i in 0..grad.len() {
                let orig = fd.params_mut()[k][i];
                fd.params_mut()[k][i] = orig + h;
                let up = loss_of(&fd);
                fd.params_mut()[k][i] = orig - h;
                let down = loss_of(&fd);
                fd.params_mut()[k][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((grad[i] - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-4, "relative error {worst}");
    }
}
