use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multinomial logistic-regression probe trained by full-batch gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub max_iters: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Recorded for reproducibility; weights start at zero so fitting is
    /// deterministic regardless of the seed.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            max_iters: 100,
            learning_rate: 1.0,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticProbe {
    classes: Vec<String>,
    mean: Vec<f64>,
    /// `classes × dim`
    weights: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

impl LogisticProbe {
    /// Fits on mean-centered features. Needs at least two distinct labels.
    pub fn fit(features: &[Vec<f64>], labels: &[String], cfg: &ProbeConfig) -> Result<Self> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::InvalidInput(
                "probe needs matching, non-empty features and labels".into(),
            ));
        }
        let mut classes: Vec<String> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "classification train split has a single class '{}'",
                classes[0]
            )));
        }
        let dim = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let x: Vec<Vec<f64>> = features
            .iter()
            .map(|f| f.iter().zip(&mean).map(|(v, m)| v - m).collect())
            .collect();
        let y: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label from set"))
            .collect();
        let c = classes.len();
        let mut probe = LogisticProbe {
            classes,
            mean,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
            dim,
        };
        let mut gw = vec![0.0; c * dim];
        let mut gb = vec![0.0; c];
        for _ in 0..cfg.max_iters {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            for (xi, &yi) in x.iter().zip(&y) {
                let mut p = probe.logits_centered(xi);
                softmax_in_place(&mut p);
                p[yi] -= 1.0;
                for k in 0..c {
                    gb[k] += p[k];
                    let row = &mut gw[k * dim..(k + 1) * dim];
                    for (g, v) in row.iter_mut().zip(xi) {
                        *g += p[k] * v;
                    }
                }
            }
            for (w, g) in probe.weights.iter_mut().zip(&gw) {
                *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= cfg.learning_rate * g / n;
            }
        }
        Ok(probe)
    }

    fn logits_centered(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes.len())
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let mut p = self.logits_centered(&centered);
        softmax_in_place(&mut p);
        p
    }

    /// Highest-probability class; ties go to the lexicographically first label.
    pub fn predict(&self, x: &[f64]) -> &str {
        let p = self.predict_proba(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        &self.classes[best]
    }
}
