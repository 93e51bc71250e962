use serde::{Deserialize, Serialize};

use crate::detect::{roc_curve, Confusion};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
}

/// Area under the ROC curve by the trapezoid rule. Tied scores form a single
/// diagonal step, which equals the rank-averaged Mann–Whitney statistic.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pts = roc_curve(scores, labels)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

pub fn compute_metrics(predicted: &[bool], labels: &[bool], scores: &[f64]) -> Result<Metrics> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "scores vs labels",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let confusion = Confusion::from_predictions(predicted, labels)?;
    Ok(Metrics {
        f1: confusion.f1(),
        accuracy: confusion.accuracy(),
        auc: auc(scores, labels)?,
        precision: confusion.precision(),
        recall: confusion.recall(),
        confusion,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        Aggregate {
            median: median(values),
            std: std_dev(values),
        }
    }
}

/// Median ± std of each metric over a set of runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub f1: Aggregate,
    pub accuracy: Aggregate,
    pub auc: Aggregate,
    pub precision: Aggregate,
    pub recall: Aggregate,
}

impl Summary {
    pub fn of<'a, I: IntoIterator<Item = &'a Metrics>>(runs: I) -> Self {
        let runs: Vec<&Metrics> = runs.into_iter().collect();
        let agg = |f: fn(&Metrics) -> f64| {
            Aggregate::of(&runs.iter().map(|m| f(m)).collect::<Vec<_>>())
        };
        Summary {
            f1: agg(|m| m.f1),
            accuracy: agg(|m| m.accuracy),
            auc: agg(|m| m.auc),
            precision: agg(|m| m.precision),
            recall: agg(|m| m.recall),
        }
    }

    pub fn columns(&self) -> [(&'static str, Aggregate); 5] {
        [
            ("f1", self.f1),
            ("accuracy", self.accuracy),
            ("auc", self.auc),
            ("precision", self.precision),
            ("recall", self.recall),
        ]
    }
}
