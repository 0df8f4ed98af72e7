//! Exact t-SNE (no tree approximation) for desk-scale vocabularies.

use rand_distr::{Distribution, Normal};

use super::{AnalysisError, Result};
use crate::seeds::stream_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    /// Step size; `None` picks `max(n / early_exaggeration / 4, 10)`.
    pub learning_rate: Option<f64>,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 500,
            learning_rate: None,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

/// Binary-search the Gaussian bandwidth for one row until the entropy
/// matches log(perplexity).
fn row_affinities(d2: &[f64], i: usize, perplexity: f64, out: &mut [f64]) {
    let target = perplexity.ln();
    let mut beta = 1.0f64;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..60 {
        let mut sum = 0.0;
        let mut h_unnorm = 0.0;
        for (j, &dist) in d2.iter().enumerate() {
            if j == i {
                out[j] = 0.0;
                continue;
            }
            let p = (-beta * dist).exp();
            out[j] = p;
            sum += p;
            h_unnorm += beta * dist * p;
        }
        if sum <= 0.0 {
            break;
        }
        let entropy = h_unnorm / sum + sum.ln();
        let diff = entropy - target;
        if diff.abs() < 1e-5 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    let sum: f64 = out.iter().sum();
    if sum > 0.0 {
        for p in out.iter_mut() {
            *p /= sum;
        }
    }
}

/// Largest per-point move in one iteration.
const MAX_STEP: f64 = 2.0;

/// Standard exact t-SNE with early exaggeration and momentum, seeded init.
pub fn tsne_project(embeddings: &Tensor, config: &TsneConfig, seed: u64) -> Result<Vec<[f64; 2]>> {
    let [n, d] = embeddings.shape() else {
        return Err(AnalysisError::Config("embeddings must be rank 2".into()));
    };
    let (n, d) = (*n, *d);
    let x = embeddings.data();

    // pairwise squared distances
    let mut d2 = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = (0..d)
                .map(|k| (x[i * d + k] - x[j * d + k]).powi(2))
                .sum();
            d2[i * n + j] = dist;
            d2[j * n + i] = dist;
            total += dist;
        }
    }
    if total < 1e-24 {
        return Err(AnalysisError::Config(
            "degenerate input: all embeddings identical".into(),
        ));
    }

    let perplexity = config.perplexity.min((n as f64 - 1.0) / 3.0).max(2.0);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let (head, tail) = p.split_at_mut(i * n);
        let _ = head;
        row_affinities(&d2[i * n..(i + 1) * n], i, perplexity, &mut tail[..n]);
    }
    // symmetrize
    let mut pij = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pij[i * n + j] = (p[i * n + j] + p[j * n + i]) / (2.0 * n as f64);
        }
    }

    let mut rng = stream_rng(seed, "tsne-init", &[]);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<f64> = (0..n * 2).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0f64; n * 2];
    let mut gains = vec![1.0f64; n * 2];
    let learning_rate = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / config.early_exaggeration / 4.0).max(10.0));

    for iter in 0..config.iterations {
        let exaggeration = if iter < config.exaggeration_iters {
            config.early_exaggeration
        } else {
            1.0
        };
        // low-dimensional affinities (student-t)
        let mut q_unnorm = vec![0.0; n * n];
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[i * 2] - y[j * 2];
                let dy1 = y[i * 2 + 1] - y[j * 2 + 1];
                let q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q_unnorm[i * n + j] = q;
                q_unnorm[j * n + i] = q;
                q_sum += 2.0 * q;
            }
        }
        let momentum = if iter < 250 { 0.5 } else { 0.8 };
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = q_unnorm[i * n + j];
                let qij = (q / q_sum).max(1e-12);
                let mult = (exaggeration * pij[i * n + j] - qij) * q;
                grad[0] += 4.0 * mult * (y[i * 2] - y[j * 2]);
                grad[1] += 4.0 * mult * (y[i * 2 + 1] - y[j * 2 + 1]);
            }
            for a in 0..2 {
                let idx = i * 2 + a;
                let same_sign = grad[a].signum() == velocity[idx].signum();
                gains[idx] = if same_sign {
                    (gains[idx] * 0.8).max(0.01)
                } else {
                    gains[idx] + 0.2
                };
                velocity[idx] = momentum * velocity[idx] - learning_rate * gains[idx] * grad[a];
            }
            // bound the per-point step so early exaggeration cannot fling
            // the layout apart at small point counts
            let step_norm =
                (velocity[i * 2] * velocity[i * 2] + velocity[i * 2 + 1] * velocity[i * 2 + 1])
                    .sqrt();
            if step_norm > MAX_STEP {
                velocity[i * 2] *= MAX_STEP / step_norm;
                velocity[i * 2 + 1] *= MAX_STEP / step_norm;
            }
            for a in 0..2 {
                let idx = i * 2 + a;
                y[idx] += velocity[idx];
            }
        }
        // recenter
        for a in 0..2 {
            let mean: f64 = (0..n).map(|i| y[i * 2 + a]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[i * 2 + a] -= mean;
            }
        }
    }
    Ok((0..n).map(|i| [y[i * 2], y[i * 2 + 1]]).collect())
}
