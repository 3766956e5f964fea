use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            batch_size: 32,
            steps: 100,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center (lowest index on ties) and its squared distance.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

/// Mini-batch k-means with k-means++ seeding and per-center `1/count`
/// learning rates. Returns the cluster index of every point.
///
/// After the mini-batch updates every point is assigned to its nearest
/// center; a center that ends up with no points is moved onto the point
/// farthest from its own center, and assignment is repeated.
pub fn mini_batch_kmeans(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = kmeans_pp(points, k, &mut rng);
    let mut counts = vec![0usize; k];
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..n)).collect();
        let assigned: Vec<usize> = idx
            .iter()
            .map(|&i| nearest(&points[i], &centers).0)
            .collect();
        for (&i, &c) in idx.iter().zip(&assigned) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, xv) in centers[c].iter_mut().zip(&points[i]) {
                *cv = (1.0 - eta) * *cv + eta * xv;
            }
        }
    }
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..k {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let far = (0..n).filter(|&i| sizes[labels[i]] > 1).max_by(|&a, &b| {
            sq_dist(&points[a], &centers[labels[a]])
                .total_cmp(&sq_dist(&points[b], &centers[labels[b]]))
                .then(b.cmp(&a))
        });
        let Some(far) = far else { break };
        centers[empty] = points[far].clone();
        labels = points.iter().map(|p| nearest(p, &centers).0).collect();
        if labels[far] != empty {
            // identical points: force the move so the cluster is non-empty
            labels[far] = empty;
        }
    }
    Ok(labels)
}
