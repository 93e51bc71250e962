use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::FeatureVector;

/// K-fold partition of `0..n`: a seeded shuffle cut into `k` contiguous
/// chunks whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::NotEnoughSamples { needed: k, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(FoldPlan { n, k, seed, folds })
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, in fold order.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

/// Test set with labels; `true` marks malicious samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<bool>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn malicious(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Number of malicious samples `m` closest to `m / (m + n_benign) = ratio`,
/// i.e. `round(ratio / (1 − ratio) · n_benign)`.
pub fn malicious_count(n_benign: usize, ratio: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidParameter(format!(
            "malicious ratio must be in [0, 1), got {ratio}"
        )));
    }
    Ok((ratio / (1.0 - ratio) * n_benign as f64).round() as usize)
}

/// Benign test flows followed by malicious flows drawn from `pool` without
/// replacement.
pub fn compose_test_set(
    benign: &[FeatureVector],
    pool: &[FeatureVector],
    ratio: f64,
    seed: u64,
) -> Result<LabeledSet> {
    let m = malicious_count(benign.len(), ratio)?;
    if m > pool.len() {
        return Err(Error::PoolTooSmall {
            needed: m,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, pool.len(), m);
    let mut features = benign.to_vec();
    features.extend(picks.iter().map(|i| pool[i]));
    let mut labels = vec![false; benign.len()];
    labels.resize(benign.len() + m, true);
    Ok(LabeledSet { features, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn protocol_fold_sizes() {
        let plan = make_folds(2350, 5, 7).unwrap();
        for i in 0..5 {
            assert_eq!(plan.test_indices(i).len(), 470);
            assert_eq!(plan.train_indices(i).len(), 1880);
        }
        let small = make_folds(10, 5, 0).unwrap();
        assert!(small.folds.iter().all(|f| f.len() == 2));
    }

    #[test]
    fn folds_partition_the_indices() {
        for (n, k) in [(2350, 5), (11, 3), (7, 7)] {
            let plan = make_folds(n, k, 3).unwrap();
            let mut seen = HashSet::new();
            for f in &plan.folds {
                for &i in f {
                    assert!(seen.insert(i), "index {i} in two folds");
                }
            }
            assert_eq!(seen.len(), n);
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn folds_are_seeded() {
        assert_eq!(make_folds(100, 5, 1).unwrap(), make_folds(100, 5, 1).unwrap());
        assert_ne!(make_folds(100, 5, 1).unwrap(), make_folds(100, 5, 2).unwrap());
        assert!(make_folds(4, 5, 0).is_err());
    }

    #[test]
    fn malicious_rounding() {
        // m / (m + 470) = 0.3 solves to m = 201.43
        assert_eq!(malicious_count(470, 0.3).unwrap(), 201);
        assert_eq!(malicious_count(470, 0.0).unwrap(), 0);
        assert_eq!(malicious_count(470, 0.5).unwrap(), 470);
        assert!(malicious_count(470, 1.0).is_err());
    }

    #[test]
    fn composition() {
        let benign = vec![FeatureVector::zeros(); 470];
        let pool: Vec<FeatureVector> = (0..1000)
            .map(|i| FeatureVector([i as f64; 16]))
            .collect();
        let set = compose_test_set(&benign, &pool, 0.3, 5).unwrap();
        assert_eq!(set.len(), 671);
        assert_eq!(set.malicious(), 201);
        let drawn: HashSet<u64> = set.features[470..].iter().map(|v| v.0[0] as u64).collect();
        assert_eq!(drawn.len(), 201, "sampled with replacement");
        assert_eq!(compose_test_set(&benign, &pool, 0.0, 5).unwrap().malicious(), 0);
        assert_eq!(compose_test_set(&benign, &pool, 0.5, 5).unwrap().malicious(), 470);
        assert!(matches!(
            compose_test_set(&benign, &[], 0.3, 5),
            Err(Error::PoolTooSmall { needed: 201, available: 0 })
        ));
    }
}
