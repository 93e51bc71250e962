use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{compose_test_set, make_folds};
use super::metrics::{compute_metrics, Metrics, Summary};
use crate::autoencoder::{train, train_vae, Architecture, Autoencoder, TrainConfig, TrainedModel, VaeModel};
use crate::baselines::{IsoForest, IsoForestParams, LofModel, LOF_DEFAULT_K};
use crate::detect::{roc_threshold, sigma_threshold, RocPoint, RocRule, Threshold};
use crate::error::{Error, Result};
use crate::flowcore::{FeatureVector, Scaler};
use crate::seed::derive_path;

/// Seed-path tags; see [`crate::seed::derive_path`].
const TAG_FOLDS: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_TEST: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    Autoencoder,
    Vae,
    IsolationForest,
    Lof,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Autoencoder,
        DetectorKind::IsolationForest,
        DetectorKind::Lof,
        DetectorKind::Vae,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Autoencoder => "ae",
            DetectorKind::Vae => "vae",
            DetectorKind::IsolationForest => "iforest",
            DetectorKind::Lof => "lof",
        }
    }

    /// Stable id mixed into training seeds, independent of list order.
    fn seed_id(self) -> u64 {
        match self {
            DetectorKind::Autoencoder => 0,
            DetectorKind::Vae => 1,
            DetectorKind::IsolationForest => 2,
            DetectorKind::Lof => 3,
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ae" | "autoencoder" => Ok(DetectorKind::Autoencoder),
            "vae" => Ok(DetectorKind::Vae),
            "if" | "iforest" | "isolation-forest" => Ok(DetectorKind::IsolationForest),
            "lof" => Ok(DetectorKind::Lof),
            _ => Err(Error::InvalidParameter(format!(
                "unknown detector {s:?} (expected ae, vae, iforest or lof)"
            ))),
        }
    }
}

/// How a fold's decision threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// Best point of the test-set ROC curve.
    Roc(RocRule),
    /// `μ + s·σ` of the detector's scores on its own training fold.
    Sigma(u32),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Roc(RocRule::Youden)
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdPolicy::Roc(RocRule::Youden) => f.write_str("roc"),
            ThresholdPolicy::Roc(RocRule::MaxF1) => f.write_str("max-f1"),
            ThresholdPolicy::Sigma(s) => write!(f, "sigma:{s}"),
        }
    }
}

/// Accepts `roc`, `youden`, `max-f1` or `sigma:N`.
impl FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if let Some(n) = t.strip_prefix("sigma:") {
            let n: u32 = n.parse().map_err(|_| {
                Error::InvalidParameter(format!("bad sigma multiplier in {s:?}"))
            })?;
            if n == 0 {
                return Err(Error::InvalidParameter("sigma multiplier must be >= 1".into()));
            }
            return Ok(ThresholdPolicy::Sigma(n));
        }
        match t.as_str() {
            "roc" => Ok(ThresholdPolicy::Roc(RocRule::Youden)),
            other => Ok(ThresholdPolicy::Roc(other.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    pub architecture: Architecture,
    pub vae_architecture: Architecture,
    pub kl_weight: f64,
    /// Epochs, batch size, learning rate and batch norm; the seed is
    /// replaced per run.
    pub train: TrainConfig,
    pub iforest: IsoForestParams,
    pub lof_k: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        let arch: Architecture = "16,62,9".parse().expect("valid default");
        DetectorSettings {
            vae_architecture: arch.clone(),
            architecture: arch,
            kl_weight: 1.0,
            train: TrainConfig::default(),
            iforest: IsoForestParams::default(),
            lof_k: LOF_DEFAULT_K,
        }
    }
}

/// A detector trained on one benign fold.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedDetector {
    Autoencoder(TrainedModel),
    Vae(VaeModel),
    IsolationForest(IsoForest),
    Lof(LofModel),
}

impl FittedDetector {
    /// Trains `kind` on scaled benign vectors.
    pub fn fit(
        kind: DetectorKind,
        settings: &DetectorSettings,
        train_scaled: &[FeatureVector],
        scaler: &Scaler,
        seed: u64,
    ) -> Result<Self> {
        let config = TrainConfig {
            seed,
            ..settings.train.clone()
        };
        Ok(match kind {
            DetectorKind::Autoencoder => {
                let model = Autoencoder::build(settings.architecture.clone(), seed, config.batch_norm);
                FittedDetector::Autoencoder(train(model, train_scaled, scaler.clone(), &config)?)
            }
            DetectorKind::Vae => {
                let model = VaeModel::build(
                    settings.vae_architecture.clone(),
                    settings.kl_weight,
                    seed,
                    config.batch_norm,
                )?;
                FittedDetector::Vae(train_vae(model, train_scaled, scaler.clone(), &config)?)
            }
            DetectorKind::IsolationForest => {
                FittedDetector::IsolationForest(IsoForest::fit(train_scaled, settings.iforest, seed)?)
            }
            DetectorKind::Lof => FittedDetector::Lof(LofModel::fit(train_scaled, settings.lof_k)?),
        })
    }

    pub fn score(&self, scaled: &[FeatureVector]) -> Result<Vec<f64>> {
        match self {
            FittedDetector::Autoencoder(m) => m.reconstruction_mse_batch(scaled),
            FittedDetector::Vae(m) => m.score_batch(scaled),
            FittedDetector::IsolationForest(m) => m.score_batch(scaled),
            FittedDetector::Lof(m) => m.score_batch(scaled),
        }
    }

    /// Mean and population std of the scores on the training fold.
    pub fn training_score_stats(&self, train_scaled: &[FeatureVector]) -> Result<(f64, f64)> {
        if let FittedDetector::Autoencoder(m) = self {
            return Ok((m.stats.mse_mean, m.stats.mse_std));
        }
        let scores = match self {
            FittedDetector::Lof(m) => m.training_scores(),
            other => other.score(train_scaled)?,
        };
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        Ok((mean, var.sqrt()))
    }
}

/// Raw (unscaled) feature vectors with a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<FeatureVector>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<FeatureVector>) -> Self {
        Dataset {
            name: name.into(),
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub malicious_ratio: f64,
    pub threshold: ThresholdPolicy,
    pub settings: DetectorSettings,
    pub seed: u64,
    /// Keep the ROC points of every fold in the reports.
    pub keep_roc: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 5,
            malicious_ratio: 0.3,
            threshold: ThresholdPolicy::default(),
            settings: DetectorSettings::default(),
            seed: 0,
            keep_roc: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub threshold: Threshold,
    pub roc: Option<Vec<RocPoint>>,
}

/// Results of one detector on one (benign source, malware type) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: DetectorKind,
    pub server: String,
    pub malware: String,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
}

impl EvalReport {
    fn new(detector: DetectorKind, server: &str, malware: &str, folds: Vec<FoldResult>) -> Self {
        let summary = Summary::of(folds.iter().map(|f| &f.metrics));
        EvalReport {
            detector,
            server: server.to_string(),
            malware: malware.to_string(),
            folds,
            summary,
        }
    }
}

struct Task {
    server: usize,
    fold: usize,
    detector: DetectorKind,
}

/// Runs every detector on every (server, malware) pair with the k-fold
/// protocol. Each detector is trained once per (server, fold) and scored on
/// a test set per malware type; folds and test sets are shared by all
/// detectors. Reports come back ordered by detector, server, then malware.
///
/// `jobs` bounds the worker threads; results do not depend on it.
pub fn run_grid(
    servers: &[Dataset],
    malware: &[Dataset],
    detectors: &[DetectorKind],
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<EvalReport>> {
    if servers.is_empty() || malware.is_empty() || detectors.is_empty() {
        return Err(Error::Empty("experiment grid"));
    }
    let plans = servers
        .iter()
        .enumerate()
        .map(|(si, s)| make_folds(s.features.len(), config.folds, derive_path(config.seed, &[TAG_FOLDS, si as u64])))
        .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for &detector in detectors {
        for server in 0..servers.len() {
            for fold in 0..config.folds {
                tasks.push(Task {
                    server,
                    fold,
                    detector,
                });
            }
        }
    }

    let run = |t: &Task| -> Result<Vec<FoldResult>> {
        let data = &servers[t.server].features;
        let plan = &plans[t.server];
        let train_raw: Vec<FeatureVector> = plan.train_indices(t.fold).iter().map(|&i| data[i]).collect();
        let test_raw: Vec<FeatureVector> = plan.test_indices(t.fold).iter().map(|&i| data[i]).collect();
        let scaler = Scaler::fit(&train_raw)?;
        let train_scaled = scaler.transform_all(&train_raw);
        let seed = derive_path(
            config.seed,
            &[TAG_TRAIN, t.server as u64, t.fold as u64, t.detector.seed_id()],
        );
        let started = std::time::Instant::now();
        let model = FittedDetector::fit(t.detector, &config.settings, &train_scaled, &scaler, seed)?;
        debug!(
            "{} on {} fold {} trained in {:.1?}",
            t.detector,
            servers[t.server].name,
            t.fold,
            started.elapsed()
        );
        let sigma_stats = match config.threshold {
            ThresholdPolicy::Sigma(_) => Some(model.training_score_stats(&train_scaled)?),
            ThresholdPolicy::Roc(_) => None,
        };
        malware
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let test_seed =
                    derive_path(config.seed, &[TAG_TEST, t.server as u64, t.fold as u64, mi as u64]);
                let set = compose_test_set(&test_raw, &m.features, config.malicious_ratio, test_seed)?;
                let scores = model.score(&scaler.transform_all(&set.features))?;
                let (threshold, roc) = match (config.threshold, sigma_stats) {
                    (ThresholdPolicy::Sigma(s), Some((mu, sd))) => (sigma_threshold(mu, sd, s)?, None),
                    (ThresholdPolicy::Roc(rule), _) => {
                        let sel = roc_threshold(&scores, &set.labels, rule)?;
                        (sel.threshold, Some(sel.points))
                    }
                    (ThresholdPolicy::Sigma(_), None) => unreachable!("stats computed above"),
                };
                let predicted: Vec<bool> = scores.iter().map(|&s| s > threshold.value).collect();
                let metrics = compute_metrics(&predicted, &set.labels, &scores)?;
                Ok(FoldResult {
                    fold: t.fold,
                    metrics,
                    threshold,
                    roc: if config.keep_roc { roc } else { None },
                })
            })
            .collect()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Vec<FoldResult>> = pool.install(|| tasks.par_iter().map(run).collect::<Result<_>>())?;

    let mut reports = Vec::new();
    for (di, &detector) in detectors.iter().enumerate() {
        for (si, server) in servers.iter().enumerate() {
            for (mi, m) in malware.iter().enumerate() {
                let base = (di * servers.len() + si) * config.folds;
                let folds = (0..config.folds).map(|f| results[base + f][mi].clone()).collect();
                let report = EvalReport::new(detector, &server.name, &m.name, folds);
                info!(
                    "{detector} {}/{}: F1 {:.4} ± {:.4}",
                    server.name, m.name, report.summary.f1.median, report.summary.f1.std
                );
                reports.push(report);
            }
        }
    }
    Ok(reports)
}

/// One detector on one benign/malicious pair.
pub fn run_experiment(
    detector: DetectorKind,
    benign: &Dataset,
    malicious: &Dataset,
    config: &ExperimentConfig,
) -> Result<EvalReport> {
    let mut reports = run_grid(
        std::slice::from_ref(benign),
        std::slice::from_ref(malicious),
        &[detector],
        config,
        1,
    )?;
    Ok(reports.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub architecture: Architecture,
    pub summary: Summary,
}

/// Evaluates every valid autoencoder architecture in `candidates` over all
/// (server, malware, fold) runs and ranks them by median F1, best first.
/// Invalid candidates are skipped with a warning.
pub fn sweep_architectures(
    candidates: &[Vec<usize>],
    servers: &[Dataset],
    malware: &[Dataset],
    config: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let archs: Vec<Architecture> = candidates
        .iter()
        .filter_map(|c| match Architecture::new(c.clone()) {
            Ok(a) => Some(a),
            Err(e) => {
                log::warn!("skipping architecture {c:?}: {e}");
                None
            }
        })
        .collect();
    if archs.is_empty() {
        return Err(Error::Empty("architecture grid"));
    }
    let mut rows = Vec::with_capacity(archs.len());
    for arch in archs {
        let mut cfg = config.clone();
        cfg.settings.architecture = arch.clone();
        let reports = run_grid(servers, malware, &[DetectorKind::Autoencoder], &cfg, jobs)?;
        let summary = Summary::of(reports.iter().flat_map(|r| r.folds.iter().map(|f| &f.metrics)));
        info!("architecture {arch}: F1 {:.4}", summary.f1.median);
        rows.push(SweepRow {
            architecture: arch,
            summary,
        });
    }
    rows.sort_by(|a, b| b.summary.f1.median.total_cmp(&a.summary.f1.median));
    Ok(rows)
}
