use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points, `c(n) = 2H(n−1) − 2(n−1)/n` with `H(i) ≈ ln i + γ`.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_GAMMA) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsoForestParams {
    pub n_trees: usize,
    pub subsample: usize,
}

impl Default for IsoForestParams {
    fn default() -> Self {
        IsoForestParams {
            n_trees: 100,
            subsample: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    nodes: Vec<Node>,
}

impl IsoTree {
    fn grow<P: AsRef<[f64]>>(
        data: &[P],
        rows: Vec<usize>,
        height_limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut tree = IsoTree { nodes: Vec::new() };
        tree.build(data, rows, 0, height_limit, rng);
        tree
    }

    fn build<P: AsRef<[f64]>>(
        &mut self,
        data: &[P],
        rows: Vec<usize>,
        depth: usize,
        limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let dims = data[rows[0]].as_ref().len();
        let ranges: Vec<(usize, f64, f64)> = (0..dims)
            .filter_map(|f| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = data[r].as_ref()[f];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&i| data[i].as_ref()[feature] < value);
        let left = self.build(data, l, depth + 1, limit, rng);
        let right = self.build(data, r, depth + 1, limit, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Path length `h(x)`: edges to the leaf plus `c(size)` for the
    /// unresolved points left in it.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1.0;
                }
                Node::Leaf { size } => return depth + average_path_length(size),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Isolation forest fitted on benign data; higher scores are more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForest {
    pub trees: Vec<IsoTree>,
    pub params: IsoForestParams,
    /// Effective subsample size, `min(subsample, |data|)`.
    pub sample_size: usize,
    pub dims: usize,
    pub seed: u64,
}

impl IsoForest {
    pub fn fit<P: AsRef<[f64]>>(data: &[P], params: IsoForestParams, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("isolation forest training data"));
        }
        if params.n_trees == 0 || params.subsample == 0 {
            return Err(Error::InvalidParameter(
                "n_trees and subsample must be positive".into(),
            ));
        }
        let dims = data[0].as_ref().len();
        if let Some(p) = data.iter().find(|p| p.as_ref().len() != dims) {
            return Err(Error::Dimension {
                context: "isolation forest training point",
                expected: dims,
                actual: p.as_ref().len(),
            });
        }
        let sample_size = params.subsample.min(data.len());
        let limit = (sample_size as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let rows = index::sample(&mut rng, data.len(), sample_size).into_vec();
                IsoTree::grow(data, rows, limit, &mut rng)
            })
            .collect();
        Ok(IsoForest {
            trees,
            params,
            sample_size,
            dims,
            seed,
        })
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for t in &self.trees {
            let h = t.path_length(x);
            sum += h;
            lo = lo.min(h);
            hi = hi.max(h);
        }
        // rounding in the sum must not push the mean outside its bounds
        (sum / self.trees.len() as f64).clamp(lo, hi)
    }

    /// `2^(−E[h(x)] / c(ψ))`, in (0, 1].
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims {
            return Err(Error::Dimension {
                context: "isolation forest query",
                expected: self.dims,
                actual: x.len(),
            });
        }
        let c = average_path_length(self.sample_size);
        if c == 0.0 {
            return Ok(0.5);
        }
        Ok(2f64.powf(-self.mean_path_length(x) / c))
    }

    pub fn score_batch<P: AsRef<[f64]>>(&self, xs: &[P]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(x.as_ref())).collect()
    }
}
