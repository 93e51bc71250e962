//! Turning anomaly scores into verdicts.
//!
//! A flow is malicious iff its score is strictly greater than the threshold.
//! Thresholds come either from benign training statistics (`μ + s·σ`) or from
//! a sweep over the ROC curve of a labeled score set.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMethod {
    SigmaRule(u32),
    RocOptimal,
    MaxF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub method: ThresholdMethod,
}

/// Criterion used to pick a point on the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RocRule {
    /// Maximize `TPR − FPR`.
    #[default]
    Youden,
    /// Maximize F1 on the swept set.
    MaxF1,
}

impl fmt::Display for RocRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RocRule::Youden => "youden",
            RocRule::MaxF1 => "max-f1",
        })
    }
}

impl FromStr for RocRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "youden" | "j" => Ok(RocRule::Youden),
            "max-f1" | "maxf1" | "f1" => Ok(RocRule::MaxF1),
            _ => Err(Error::InvalidParameter(format!(
                "unknown ROC rule {s:?} (expected youden or max-f1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Benign,
    Malicious,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Benign => "benign",
            Verdict::Malicious => "malicious",
        }
    }

    pub fn is_malicious(self) -> bool {
        self == Verdict::Malicious
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary confusion counts, malicious being the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Dimension {
                context: "predictions vs labels",
                expected: actual.len(),
                actual: predicted.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn tpr(&self) -> f64 {
        self.recall()
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `t = μ + s·σ`.
pub fn sigma_threshold(mu: f64, sigma: f64, s: u32) -> Result<Threshold> {
    if !(mu.is_finite() && mu >= 0.0 && sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma rule needs finite mu, sigma >= 0 (got {mu}, {sigma})"
        )));
    }
    if s == 0 {
        return Err(Error::InvalidParameter("sigma multiplier must be >= 1".into()));
    }
    Ok(Threshold {
        value: mu + s as f64 * sigma,
        method: ThresholdMethod::SigmaRule(s),
    })
}

pub fn classify(score: f64, t: &Threshold) -> Verdict {
    if score > t.value {
        Verdict::Malicious
    } else {
        Verdict::Benign
    }
}

pub fn classify_all(scores: &[f64], t: &Threshold) -> Vec<Verdict> {
    scores.iter().map(|&s| classify(s, t)).collect()
}

/// One ROC operating point: predicting `score > threshold` gives these rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

fn check_labeled(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "scores vs labels",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass("ROC needs both benign and malicious samples"));
    }
    Ok(())
}

/// Full ROC curve, one point per distinct cut, from `(0,0)` to `(1,1)`.
///
/// The first point uses the largest score as threshold; each following point
/// lowers the threshold to the next distinct score, and the last one sits just
/// below the smallest score so that everything is flagged.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_labeled(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;

    let point = |tp: usize, fp: usize, threshold: f64| {
        let confusion = Confusion {
            tp,
            fp,
            fn_: positives - tp,
            tn: negatives - fp,
        };
        RocPoint {
            fpr: confusion.fpr(),
            tpr: confusion.tpr(),
            threshold,
            confusion,
        }
    };

    let mut points = vec![point(0, 0, scores[order[0]])];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = if i < order.len() {
            scores[order[i]]
        } else {
            s.next_down()
        };
        points.push(point(tp, fp, next));
    }
    Ok(points)
}

/// Threshold picked from the ROC curve together with the curve itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSelection {
    pub threshold: Threshold,
    pub points: Vec<RocPoint>,
    /// Index of the chosen point in `points`.
    pub chosen: usize,
}

impl RocSelection {
    pub fn point(&self) -> &RocPoint {
        &self.points[self.chosen]
    }

    pub fn youden_j(&self) -> f64 {
        let p = self.point();
        p.tpr - p.fpr
    }
}

/// Best cut of a labeled score set under `rule`; ties go to the lower FPR.
pub fn roc_threshold(scores: &[f64], labels: &[bool], rule: RocRule) -> Result<RocSelection> {
    let points = roc_curve(scores, labels)?;
    let objective = |p: &RocPoint| match rule {
        RocRule::Youden => p.tpr - p.fpr,
        RocRule::MaxF1 => p.confusion.f1(),
    };
    // points are ordered by non-decreasing FPR, so the first maximum wins ties
    let mut chosen = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if objective(p) > objective(&points[chosen]) {
            chosen = i;
        }
    }
    let method = match rule {
        RocRule::Youden => ThresholdMethod::RocOptimal,
        RocRule::MaxF1 => ThresholdMethod::MaxF1,
    };
    Ok(RocSelection {
        threshold: Threshold {
            value: points[chosen].threshold,
            method,
        },
        points,
        chosen,
    })
}

/// Picks the σ multiplier with the best F1 on a labeled validation set;
/// ties go to the smaller multiplier.
pub fn choose_sigma(
    mu: f64,
    sigma: f64,
    candidates: &[u32],
    scores: &[f64],
    labels: &[bool],
) -> Result<Threshold> {
    check_labeled(scores, labels)?;
    let mut best: Option<(f64, Threshold)> = None;
    for &s in candidates {
        let t = sigma_threshold(mu, sigma, s)?;
        let predicted: Vec<bool> = scores.iter().map(|&x| x > t.value).collect();
        let f1 = Confusion::from_predictions(&predicted, labels)?.f1();
        if best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::InvalidParameter("no sigma candidates given".into()))
}

/// Writes `fpr,tpr,threshold` rows.
pub fn write_roc_csv<W: Write>(out: W, points: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Per-flow decision written by the scoring step.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub conn_key: String,
    pub score: f64,
    pub verdict: Verdict,
}

/// Writes `conn_key,score,verdict` rows.
pub fn write_verdict_csv<W: Write>(out: W, rows: &[VerdictRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["conn_key", "score", "verdict"])?;
    for r in rows {
        w.write_record([r.conn_key.as_str(), &r.score.to_string(), r.verdict.as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force: try every distinct score (and one below the minimum) as a
    /// cut and keep the best Youden J, preferring lower FPR.
    fn oracle_best(scores: &[f64], labels: &[bool]) -> (f64, f64, f64) {
        let mut cuts: Vec<f64> = scores.to_vec();
        cuts.push(scores.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0);
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let neg = labels.len() as f64 - pos;
        let mut best = (f64::NEG_INFINITY, f64::INFINITY, 0.0);
        for &c in &cuts {
            let tp = scores.iter().zip(labels).filter(|(s, l)| **s > c && **l).count() as f64;
            let fp = scores.iter().zip(labels).filter(|(s, l)| **s > c && !**l).count() as f64;
            let (tpr, fpr) = (tp / pos, fp / neg);
            let j = tpr - fpr;
            if j > best.0 || (j == best.0 && fpr < best.1) {
                best = (j, fpr, tpr);
            }
        }
        best
    }

    #[test]
    fn sigma_rule_examples() {
        let t = sigma_threshold(0.1, 0.02, 3).unwrap();
        assert!((t.value - 0.16).abs() < 1e-15);
        assert_eq!(t.method, ThresholdMethod::SigmaRule(3));
        assert_eq!(sigma_threshold(0.25, 0.0, 2).unwrap().value, 0.25);
        assert!(sigma_threshold(-0.1, 0.1, 1).is_err());
        assert!(sigma_threshold(0.1, -0.1, 1).is_err());
        assert!(sigma_threshold(0.1, 0.1, 0).is_err());
    }

    #[test]
    fn strict_inequality_at_threshold() {
        let t = sigma_threshold(0.5, 0.0, 1).unwrap();
        assert_eq!(classify(0.5, &t), Verdict::Benign);
        assert_eq!(classify(0.5f64.next_up(), &t), Verdict::Malicious);
    }

    #[test]
    fn perfectly_separated_scores() {
        let scores = [0.1, 0.2, 0.3, 0.8, 0.9];
        let labels = [false, false, false, true, true];
        let sel = roc_threshold(&scores, &labels, RocRule::Youden).unwrap();
        let p = sel.point();
        assert_eq!((p.tpr, p.fpr), (1.0, 0.0));
        assert!(sel.threshold.value >= 0.3 && sel.threshold.value < 0.8);
        for (&s, &l) in scores.iter().zip(&labels) {
            assert_eq!(classify(s, &sel.threshold).is_malicious(), l);
        }
    }

    #[test]
    fn three_point_example_matches_oracle() {
        let scores = [0.1, 0.2, 0.15];
        let labels = [false, false, true];
        let sel = roc_threshold(&scores, &labels, RocRule::Youden).unwrap();
        let (j, fpr, tpr) = oracle_best(&scores, &labels);
        assert_eq!(sel.youden_j(), j);
        assert_eq!((sel.point().fpr, sel.point().tpr), (fpr, tpr));
        // cut at 0.1 flags 0.15 and 0.2: J = 1 - 0.5
        assert_eq!(j, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            roc_threshold(&[0.1, 0.2], &[false, false], RocRule::Youden),
            Err(Error::SingleClass(_))
        ));
        assert!(roc_threshold(&[0.1], &[true, false], RocRule::Youden).is_err());
    }

    #[test]
    fn random_labels_give_small_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
        let sel = roc_threshold(&scores, &labels, RocRule::Youden).unwrap();
        assert!(sel.youden_j().abs() < 0.15, "{}", sel.youden_j());
    }

    #[test]
    fn sigma_choice_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mu, sigma) = (0.2, 0.05);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..300 {
            let malicious = rng.random_bool(0.3);
            let base = if malicious { 0.33 } else { 0.2 };
            scores.push(base + rng.random_range(-0.1..0.1));
            labels.push(malicious);
        }
        let chosen = choose_sigma(mu, sigma, &[1, 2, 3], &scores, &labels).unwrap();
        let f1_of = |s: u32| {
            let t = mu + s as f64 * sigma;
            let pred: Vec<bool> = scores.iter().map(|&x| x > t).collect();
            Confusion::from_predictions(&pred, &labels).unwrap().f1()
        };
        let best = (1..=3u32)
            .fold((0, f64::NEG_INFINITY), |acc, s| {
                let f = f1_of(s);
                if f > acc.1 {
                    (s, f)
                } else {
                    acc
                }
            })
            .0;
        assert_eq!(chosen.method, ThresholdMethod::SigmaRule(best));
    }

    #[test]
    fn max_f1_rule_maximizes_f1() {
        let scores = [0.1, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7];
        let labels = [false, true, false, false, true, true, true];
        let sel = roc_threshold(&scores, &labels, RocRule::MaxF1).unwrap();
        let best = sel
            .points
            .iter()
            .map(|p| p.confusion.f1())
            .fold(0.0, f64::max);
        assert_eq!(sel.point().confusion.f1(), best);
        assert_eq!(sel.threshold.method, ThresholdMethod::MaxF1);
    }

    #[test]
    fn roc_csv_layout() {
        let sel = roc_threshold(&[0.1, 0.9], &[false, true], RocRule::Youden).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &sel.points).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "fpr,tpr,threshold");
        assert_eq!(lines.len(), 1 + sel.points.len());
        assert_eq!(lines[1], "0,0,0.9");
    }

    fn labeled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..20, any::<bool>()), 2..60)
            .prop_filter("both classes", |v| {
                v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
            })
            .prop_map(|v| {
                (
                    v.iter().map(|x| x.0 as f64 / 10.0).collect(),
                    v.iter().map(|x| x.1).collect(),
                )
            })
    }

    proptest! {
        #[test]
        fn youden_matches_brute_force((scores, labels) in labeled()) {
            let sel = roc_threshold(&scores, &labels, RocRule::Youden).unwrap();
            let (j, fpr, tpr) = oracle_best(&scores, &labels);
            prop_assert_eq!(sel.youden_j(), j);
            prop_assert_eq!(sel.point().fpr, fpr);
            prop_assert_eq!(sel.point().tpr, tpr);
            let pred: Vec<bool> = scores.iter().map(|&s| classify(s, &sel.threshold).is_malicious()).collect();
            prop_assert_eq!(Confusion::from_predictions(&pred, &labels).unwrap(), sel.point().confusion);
        }

        #[test]
        fn roc_is_a_monotone_staircase((scores, labels) in labeled()) {
            let pts = roc_curve(&scores, &labels).unwrap();
            prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
            let last = pts.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
        }

        #[test]
        fn invariant_under_increasing_transform((scores, labels) in labeled()) {
            let a = roc_threshold(&scores, &labels, RocRule::Youden).unwrap();
            let f = |x: f64| (3.0 * x).exp() + 2.0;
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let b = roc_threshold(&moved, &labels, RocRule::Youden).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
            prop_assert_eq!(a.point().confusion, b.point().confusion);
        }

        #[test]
        fn raising_threshold_never_flags_more(score in 0.0f64..2.0, t in 0.0f64..2.0, dt in 0.0f64..1.0) {
            let lo = Threshold { value: t, method: ThresholdMethod::RocOptimal };
            let hi = Threshold { value: t + dt, method: ThresholdMethod::RocOptimal };
            if classify(score, &lo) == Verdict::Benign {
                prop_assert_eq!(classify(score, &hi), Verdict::Benign);
            }
        }

        #[test]
        fn batch_agrees_with_scalar(scores in prop::collection::vec(0.0f64..1.0, 0..100), t in 0.0f64..1.0) {
            let th = Threshold { value: t, method: ThresholdMethod::RocOptimal };
            let batch = classify_all(&scores, &th);
            for (s, v) in scores.iter().zip(batch) {
                prop_assert_eq!(classify(*s, &th), v);
            }
        }
    }
}
