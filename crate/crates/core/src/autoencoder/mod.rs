//! Reconstruction autoencoder trained on benign flows, plus the VAE variant.

mod arch;
mod io;
mod model;
mod vae;

pub use arch::{Architecture, REFERENCE_ARCHITECTURES};
pub use io::{SavedModel, FORMAT_VERSION};
pub use model::{train, Autoencoder, TrainConfig, TrainedModel, TrainingStats};
pub use vae::{kl_divergence, train_vae, VaeLoss, VaeModel};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::{FeatureVector, Scaler, NUM_FEATURES};
    use crate::neuralnet::{Activation, Block, DenseLayer, Matrix, Network};
    use crate::synth::{gen_benign, gen_dga, DgaVariant};

    fn identity_model() -> TrainedModel {
        let block = || Block {
            dense: DenseLayer {
                weights: Matrix::identity(NUM_FEATURES),
                bias: vec![0.0; NUM_FEATURES],
                activation: Activation::Identity,
            },
            norm: None,
        };
        TrainedModel {
            autoencoder: Autoencoder {
                architecture: "16,9".parse().unwrap(),
                network: Network {
                    blocks: vec![block(), block()],
                },
            },
            scaler: Scaler {
                min: [0.0; NUM_FEATURES],
                max: [1.0; NUM_FEATURES],
            },
            stats: TrainingStats {
                seed: 0,
                epochs: 0,
                batch_size: 32,
                learning_rate: 0.001,
                mse_mean: 0.0,
                mse_std: 0.0,
                epoch_losses: vec![],
            },
        }
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn build_mirrors_reference_architectures() {
        let ae = Autoencoder::build("16,62,9".parse().unwrap(), 1, true);
        assert_eq!(ae.network.sizes(), vec![16, 62, 9, 62, 16]);
        let ae = Autoencoder::build("16,26,17,9".parse().unwrap(), 1, true);
        assert_eq!(ae.network.sizes(), vec![16, 26, 17, 9, 17, 26, 16]);
        assert!("16,20".parse::<Architecture>().is_err());
    }

    #[test]
    fn identity_fixture_reconstructs_exactly() {
        let m = identity_model();
        let v = FeatureVector(std::array::from_fn(|i| i as f64 / 16.0));
        assert_eq!(m.reconstruction_mse(&v).unwrap(), 0.0);
    }

    #[test]
    fn mse_of_single_offset_coordinate() {
        let m = identity_model();
        let x = FeatureVector([0.5; NUM_FEATURES]);
        let mut shifted = m.clone();
        shifted.autoencoder.network.blocks[1].dense.bias[4] = 0.4;
        let mse = shifted.reconstruction_mse(&x).unwrap();
        assert!((mse - 0.01).abs() < 1e-15);
    }

    #[test]
    fn unscaled_input_rejected() {
        let m = identity_model();
        let mut v = FeatureVector([0.5; NUM_FEATURES]);
        v.0[3] = 1.5;
        assert!(matches!(
            m.reconstruction_mse(&v),
            Err(crate::Error::Unscaled { index: 3, .. })
        ));
    }

    #[test]
    fn too_few_samples_rejected() {
        let data = vec![FeatureVector([0.5; NUM_FEATURES]); 10];
        let scaler = Scaler::fit(&data).unwrap();
        let model = Autoencoder::build("16,8".parse().unwrap(), 0, true);
        let err = train(model, &data, scaler, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, crate::Error::NotEnoughSamples { needed: 32, got: 10 }));
    }

    #[test]
    fn constant_dataset_is_learned() {
        let row = FeatureVector(std::array::from_fn(|i| (i as f64 * 0.37) % 1.0));
        let data = vec![row; 1880];
        let scaler = Scaler::fit(&data).unwrap();
        let config = TrainConfig {
            seed: 4,
            ..TrainConfig::default()
        };
        let model = train(
            Autoencoder::build("16,62,9".parse().unwrap(), 4, true),
            &data,
            scaler,
            &config,
        )
        .unwrap();
        let last = *model.stats.epoch_losses.last().unwrap();
        assert!(last < 1e-4, "{last} {}", model.stats.mse_mean);
    }

    #[test]
    fn benign_training_converges_and_separates() {
        let raw: Vec<FeatureVector> = gen_benign(2350, 10)
            .unwrap()
            .iter()
            .map(|f| f.features())
            .collect();
        let (train_raw, test_raw) = raw.split_at(1880);
        let config = TrainConfig {
            seed: 10,
            ..TrainConfig::default()
        };
        let model = TrainedModel::fit("16,62,9".parse().unwrap(), train_raw, &config).unwrap();
        assert!(model.stats.mse_mean < 0.01, "{}", model.stats.mse_mean);
        let losses = &model.stats.epoch_losses;
        assert_eq!(losses.len(), 30);
        assert!(losses.iter().all(|l| l.is_finite()));
        let first: f64 = losses[..5].iter().sum();
        let last: f64 = losses[25..].iter().sum();
        assert!(last <= first);

        let sc: Vec<FeatureVector> = gen_dga(470, DgaVariant::Sc, 11)
            .unwrap()
            .iter()
            .map(|f| f.features())
            .collect();
        let benign_scores = model.score_raw(test_raw).unwrap();
        let sc_scores = model.score_raw(&sc).unwrap();
        assert!(median(benign_scores) < median(sc_scores));
    }

    #[test]
    fn training_is_deterministic() {
        let raw: Vec<FeatureVector> = gen_benign(200, 3)
            .unwrap()
            .iter()
            .map(|f| f.features())
            .collect();
        let config = TrainConfig {
            epochs: 3,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = TrainedModel::fit("16,12,5".parse().unwrap(), &raw, &config).unwrap();
        let b = TrainedModel::fit("16,12,5".parse().unwrap(), &raw, &config).unwrap();
        assert_eq!(a, b);
        let other = TrainConfig { seed: 78, ..config };
        let c = TrainedModel::fit("16,12,5".parse().unwrap(), &raw, &other).unwrap();
        assert_ne!(a.autoencoder, c.autoencoder);
    }

    #[test]
    fn model_file_round_trip_is_byte_exact() {
        let raw: Vec<FeatureVector> = gen_benign(100, 8)
            .unwrap()
            .iter()
            .map(|f| f.features())
            .collect();
        let config = TrainConfig {
            epochs: 2,
            seed: 1,
            ..TrainConfig::default()
        };
        let m = TrainedModel::fit("16,10,4".parse().unwrap(), &raw, &config).unwrap();
        let saved = SavedModel::Autoencoder(m);
        let text = saved.to_json().unwrap();
        let loaded = SavedModel::from_json(&text).unwrap();
        assert_eq!(loaded, saved);
        assert_eq!(loaded.to_json().unwrap(), text);
        assert!(text.contains("\"format_version\": 1"));

        let scaler = Scaler::fit(&raw).unwrap();
        let scaled = scaler.transform_all(&raw);
        let vae = VaeModel::build("16,12,6,3".parse().unwrap(), 1.0, 2, true).unwrap();
        let vae = train_vae(vae, &scaled, scaler, &config).unwrap();
        let saved = SavedModel::Vae(vae);
        let text = saved.to_json().unwrap();
        let loaded = SavedModel::from_json(&text).unwrap();
        assert_eq!(loaded, saved);
        assert_eq!(loaded.to_json().unwrap(), text);
    }

    #[test]
    fn corrupted_model_files_rejected() {
        let saved = SavedModel::Autoencoder(identity_model());
        let text = saved.to_json().unwrap();
        // the identity fixture does not match its nominal architecture
        assert!(SavedModel::from_json(&text).is_err());
        assert!(SavedModel::from_json("{\"kind\": \"autoencoder\"}").is_err());
        let wrong_version = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(SavedModel::from_json(&wrong_version).is_err());
    }

    #[test]
    fn vae_trains_and_scores_deterministically() {
        let raw: Vec<FeatureVector> = gen_benign(400, 5)
            .unwrap()
            .iter()
            .map(|f| f.features())
            .collect();
        let scaler = Scaler::fit(&raw).unwrap();
        let scaled = scaler.transform_all(&raw);
        let config = TrainConfig {
            epochs: 5,
            seed: 6,
            ..TrainConfig::default()
        };
        let build = || VaeModel::build("16,50,26,3".parse().unwrap(), 1.0, 6, true).unwrap();
        let a = train_vae(build(), &scaled, scaler.clone(), &config).unwrap();
        let b = train_vae(build(), &scaled, scaler, &config).unwrap();
        assert_eq!(a, b);
        let s = a.score(&scaled[0]).unwrap();
        assert!(s.is_finite() && s >= 0.0);
        assert_eq!(s, a.score(&scaled[0]).unwrap());
    }
}
