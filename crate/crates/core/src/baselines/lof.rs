use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to mean reachability distances so duplicated points do not produce
/// infinite densities.
const DENSITY_EPS: f64 = 1e-10;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Local outlier factor in novelty mode: fitted on benign points, scores
/// unseen queries against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub points: Vec<Vec<f64>>,
    pub k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

/// The k-distance neighborhood of a point: every candidate whose distance
/// does not exceed the k-th smallest, so ties can enlarge it beyond `k`.
fn neighborhood(dists: &mut Vec<(f64, usize)>, k: usize) -> f64 {
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let kd = dists[k - 1].0;
    let keep = dists.partition_point(|d| d.0 <= kd);
    dists.truncate(keep);
    kd
}

impl LofModel {
    pub fn fit<P: AsRef<[f64]>>(data: &[P], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("LOF needs k >= 1".into()));
        }
        if data.len() <= k {
            return Err(Error::NotEnoughSamples {
                needed: k + 1,
                got: data.len(),
            });
        }
        let dims = data[0].as_ref().len();
        if let Some(p) = data.iter().find(|p| p.as_ref().len() != dims) {
            return Err(Error::Dimension {
                context: "LOF training point",
                expected: dims,
                actual: p.as_ref().len(),
            });
        }
        let points: Vec<Vec<f64>> = data.iter().map(|p| p.as_ref().to_vec()).collect();
        let n = points.len();
        let mut neighbors = Vec::with_capacity(n);
        let mut k_distance = Vec::with_capacity(n);
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (distance(&points[i], &points[j]), j))
                .collect();
            k_distance.push(neighborhood(&mut d, k));
            neighbors.push(d);
        }
        let lrd = neighbors
            .iter()
            .map(|nb| density(nb, &k_distance))
            .collect();
        Ok(LofModel {
            points,
            k,
            k_distance,
            lrd,
        })
    }

    /// LOF of a query point; about 1 inside dense regions, larger outside.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let dims = self.points[0].len();
        if x.len() != dims {
            return Err(Error::Dimension {
                context: "LOF query",
                expected: dims,
                actual: x.len(),
            });
        }
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(j, p)| (distance(x, p), j))
            .collect();
        neighborhood(&mut d, self.k);
        Ok(self.ratio(&d))
    }

    pub fn score_batch<P: AsRef<[f64]>>(&self, xs: &[P]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.score(x.as_ref())).collect()
    }

    /// LOF of every training point against the others.
    pub fn training_scores(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|i| {
                let mut d: Vec<(f64, usize)> = (0..self.points.len())
                    .filter(|&j| j != i)
                    .map(|j| (distance(&self.points[i], &self.points[j]), j))
                    .collect();
                neighborhood(&mut d, self.k);
                self.ratio(&d)
            })
            .collect()
    }

    fn ratio(&self, nb: &[(f64, usize)]) -> f64 {
        let own = density(nb, &self.k_distance);
        let mean_neighbor = nb.iter().map(|&(_, j)| self.lrd[j]).sum::<f64>() / nb.len() as f64;
        mean_neighbor / own
    }
}

/// Local reachability density from a neighborhood.
fn density(nb: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach: f64 = nb.iter().map(|&(d, j)| d.max(k_distance[j])).sum::<f64>() / nb.len() as f64;
    1.0 / (reach + DENSITY_EPS)
}
