use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-3;

/// Loss value and gradients with respect to every input row.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_queries: Vec<Vec<f64>>,
    pub grad_passages: Vec<Vec<f64>>,
    /// Present iff hard negatives were given.
    pub grad_hard: Option<Vec<Vec<f64>>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(rows: &[Vec<f64>], what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let n = dot(r, r).sqrt();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "{what} row {i} has norm {n}, expected unit length"
            )));
        }
    }
    Ok(())
}

/// Contrastive loss with in-batch negatives.
///
/// Row `i` of `queries` is paired with row `i` of `passages`; every other
/// passage in the batch is a negative for it. When `hard_negatives` is
/// given, row `i` additionally competes against its own hard negative.
/// The loss is the batch mean of `-log softmax` at the positive column,
/// with logits `<q_i, p_j> / temperature`.
pub fn info_nce(
    queries: &[Vec<f64>],
    passages: &[Vec<f64>],
    hard_negatives: Option<&[Vec<f64>]>,
    temperature: f64,
) -> Result<InfoNceOutput> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    let b = queries.len();
    if b == 0 || passages.len() != b {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty batches, got {b} queries and {} passages",
            passages.len()
        )));
    }
    if let Some(h) = hard_negatives {
        if h.len() != b {
            return Err(Error::InvalidInput(
                "one hard negative per row required".into(),
            ));
        }
        check_unit(h, "hard negative")?;
    }
    check_unit(queries, "query")?;
    check_unit(passages, "passage")?;

    let d = queries[0].len();
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad_q = vec![vec![0.0; d]; b];
    let mut grad_p = vec![vec![0.0; d]; b];
    let mut grad_h = hard_negatives.map(|_| vec![vec![0.0; d]; b]);
    let mut logits = Vec::with_capacity(b + 1);
    for i in 0..b {
        logits.clear();
        logits.extend(passages.iter().map(|p| dot(&queries[i], p) / temperature));
        if let Some(h) = hard_negatives {
            logits.push(dot(&queries[i], &h[i]) / temperature);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - logits[i];
        // d loss / d logit_j = (softmax_j - [j == i]) / B
        for (j, s) in logits.iter().enumerate() {
            let mut g = (s - lse).exp();
            if j == i {
                g -= 1.0;
            }
            let g = g * inv_b / temperature;
            if g == 0.0 {
                continue;
            }
            let other = if j < b {
                &passages[j]
            } else {
                &hard_negatives.unwrap()[i]
            };
            for k in 0..d {
                grad_q[i][k] += g * other[k];
            }
            let target = if j < b {
                &mut grad_p[j]
            } else {
                &mut grad_h.as_mut().unwrap()[i]
            };
            for k in 0..d {
                target[k] += g * queries[i][k];
            }
        }
    }
    Ok(InfoNceOutput {
        loss: loss * inv_b,
        grad_queries: grad_q,
        grad_passages: grad_p,
        grad_hard: grad_h,
    })
}
