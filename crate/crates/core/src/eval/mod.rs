//! Cross-validated evaluation: fold plans, test-set composition, metrics,
//! the server × malware grid, the architecture sweep and their CSV reports.

mod data;
mod experiment;
mod folds;
mod metrics;
mod report;

pub use data::SyntheticGrid;
pub use experiment::{
    run_experiment, run_grid, sweep_architectures, Dataset, DetectorKind, DetectorSettings,
    EvalReport, ExperimentConfig, FittedDetector, FoldResult, SweepRow, ThresholdPolicy,
};
pub use folds::{compose_test_set, make_folds, malicious_count, FoldPlan, LabeledSet};
pub use metrics::{auc, compute_metrics, median, std_dev, Aggregate, Metrics, Summary};
pub use report::{write_heatmap_csv, write_report_csv, write_summary_csv, write_sweep_csv};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::TrainConfig;
    use crate::flowcore::{FlowLabel, ServerTag};

    fn small_grid(seed: u64) -> SyntheticGrid {
        SyntheticGrid {
            benign_per_server: 150,
            pool_per_malware: 80,
            servers: vec![ServerTag::Google, ServerTag::Quad9],
            malware: vec![FlowLabel::DgaSc, FlowLabel::DgaMc, FlowLabel::Iodine],
            seed,
            ..SyntheticGrid::default()
        }
    }

    fn fast_config(seed: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        c.settings.train = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        c.settings.iforest.n_trees = 20;
        c
    }

    #[test]
    fn grid_shape_and_invariants() {
        let (servers, malware) = small_grid(1).generate().unwrap();
        assert_eq!(servers.len(), 2);
        assert_eq!(malware[1].name, "dga-mc");
        let detectors = [DetectorKind::Autoencoder, DetectorKind::Lof];
        let reports = run_grid(&servers, &malware, &detectors, &fast_config(1), 2).unwrap();
        assert_eq!(reports.len(), 2 * 2 * 3);
        assert_eq!(reports[0].detector, DetectorKind::Autoencoder);
        assert_eq!(reports[6].detector, DetectorKind::Lof);
        for r in &reports {
            assert_eq!(r.folds.len(), 5);
            for f in &r.folds {
                let c = f.metrics.confusion;
                // 30 benign test flows per fold, round(0.3/0.7 * 30) = 13 malicious
                assert_eq!(c.total(), 43);
                assert_eq!(c.tp + c.fn_, 13);
                for v in [f.metrics.f1, f.metrics.accuracy, f.metrics.auc, f.metrics.precision, f.metrics.recall] {
                    assert!((0.0..=1.0).contains(&v));
                }
                assert_eq!(f.metrics.f1, c.f1());
            }
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let (servers, malware) = small_grid(2).generate().unwrap();
        let config = fast_config(9);
        let detectors = [DetectorKind::IsolationForest, DetectorKind::Autoencoder];
        let a = run_grid(&servers, &malware, &detectors, &config, 1).unwrap();
        let b = run_grid(&servers, &malware, &detectors, &config, 4).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_report_csv(&mut buf_a, &a).unwrap();
        write_report_csv(&mut buf_b, &b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn empty_malicious_set_is_an_error() {
        let (servers, _) = small_grid(3).generate().unwrap();
        let empty = Dataset::new("none", Vec::new());
        let err = run_experiment(DetectorKind::IsolationForest, &servers[0], &empty, &fast_config(0));
        assert!(matches!(err, Err(crate::Error::PoolTooSmall { .. })));
    }

    #[test]
    fn sigma_policy_uses_training_statistics() {
        let (servers, malware) = small_grid(4).generate().unwrap();
        let mut config = fast_config(4);
        config.threshold = "sigma:2".parse().unwrap();
        let r = run_experiment(DetectorKind::Autoencoder, &servers[0], &malware[0], &config).unwrap();
        for f in &r.folds {
            assert_eq!(f.threshold.method, crate::detect::ThresholdMethod::SigmaRule(2));
        }
    }

    #[test]
    fn sweep_ranks_and_skips_invalid() {
        let (servers, malware) = small_grid(5).generate().unwrap();
        let candidates = vec![vec![16, 62, 9], vec![16, 20], vec![16, 26, 17, 9]];
        assert!(sweep_architectures(&[vec![16, 20]], &servers[..1], &malware[..1], &fast_config(5), 2).is_err());
        let rows = sweep_architectures(&candidates, &servers[..1], &malware[..1], &fast_config(5), 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].summary.f1.median >= rows[1].summary.f1.median);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("architecture,f1_median,f1_std,accuracy_median"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn heatmap_layout() {
        let (servers, malware) = small_grid(6).generate().unwrap();
        let reports = run_grid(&servers, &malware, &[DetectorKind::IsolationForest], &fast_config(6), 2).unwrap();
        let mut buf = Vec::new();
        write_heatmap_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "server,dga-sc,dga-mc,iodine");
        assert!(lines[1].starts_with("google,"));
        assert_eq!(lines.len(), 3);
    }
}
