//! Top-2 principal components via power iteration with deflation.
//! Deterministic up to per-axis sign, which is canonicalized by forcing the
//! largest-magnitude loading positive.

use rand::Rng;

use super::{AnalysisError, Result};
use crate::seeds::stream_rng;
use crate::tensor::Tensor;

const POWER_ITERS: usize = 1000;
const POWER_TOL: f64 = 1e-12;

fn power_iteration(cov: &[f64], d: usize, seed: u64, component: usize) -> (Vec<f64>, f64) {
    let mut rng = stream_rng(seed, "pca-power", &[&component.to_string()]);
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let mut next = vec![0.0; d];
        for i in 0..d {
            let row = &cov[i * d..(i + 1) * d];
            next[i] = row.iter().zip(&v).map(|(c, x)| c * x).sum();
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return (v, 0.0);
        }
        for x in next.iter_mut() {
            *x /= norm;
        }
        let delta: f64 = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        lambda = norm;
        if delta < POWER_TOL {
            break;
        }
    }
    (v, lambda)
}

/// Project centered data on the top-2 eigenvectors of its covariance.
pub fn pca_project(embeddings: &Tensor, seed: u64) -> Result<Vec<[f64; 2]>> {
    let [n, d] = embeddings.shape() else {
        return Err(AnalysisError::Config("embeddings must be rank 2".into()));
    };
    let (n, d) = (*n, *d);
    let x = embeddings.data();
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<f64> = x
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();

    // covariance (population)
    let mut cov = vec![0.0; d * d];
    for row in centered.chunks_exact(d) {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..d {
                cov[i * d + j] += ri * row[j];
            }
        }
    }
    for c in cov.iter_mut() {
        *c /= n as f64;
    }
    let total_var: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    if total_var < 1e-24 {
        return Err(AnalysisError::Config(
            "degenerate input: all embeddings identical".into(),
        ));
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    for c in 0..2 {
        let (mut v, lambda) = power_iteration(&cov, d, seed, c);
        // canonical sign: largest-magnitude loading positive
        let lead = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[lead] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        // deflate
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
    }

    Ok(centered
        .chunks_exact(d)
        .map(|row| {
            let px: f64 = row.iter().zip(&components[0]).map(|(a, b)| a * b).sum();
            let py: f64 = row.iter().zip(&components[1]).map(|(a, b)| a * b).sum();
            [px, py]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planar_data_reconstructs_exactly() {
        // points on a 2-D plane embedded in 5 dims
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let mut data = Vec::new();
        let basis = [
            [1.0, 0.0, 2.0, 0.0, -1.0],
            [0.0, 3.0, 0.0, 1.0, 1.0],
        ];
        let mut raw = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            raw.push((a, b));
            for j in 0..5 {
                data.push(a * basis[0][j] + b * basis[1][j]);
            }
        }
        let t = Tensor::from_vec(vec![n, 5], data.clone()).unwrap();
        let proj = pca_project(&t, 0).unwrap();
        // reconstruction: project back through the components and compare
        // squared error against total variance
        let mut cov_err = 0.0;
        let mut total = 0.0;
        // recompute component vectors by least squares from the projection:
        // instead verify distances are preserved (isometry on the plane)
        for i in 0..n {
            for j in (i + 1)..n {
                let d_orig: f64 = (0..5)
                    .map(|k| (data[i * 5 + k] - data[j * 5 + k]).powi(2))
                    .sum();
                let d_proj: f64 = (proj[i][0] - proj[j][0]).powi(2)
                    + (proj[i][1] - proj[j][1]).powi(2);
                cov_err += (d_orig - d_proj).abs();
                total += d_orig;
            }
        }
        assert!(cov_err / total < 1e-9, "relative error {}", cov_err / total);
        let _ = raw;
    }

    #[test]
    fn component_one_has_more_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100;
        let mut data = Vec::new();
        for _ in 0..n {
            data.push(rng.gen_range(-5.0f64..5.0)); // wide axis
            data.push(rng.gen_range(-0.5f64..0.5)); // narrow axis
            data.push(rng.gen_range(-0.1f64..0.1));
        }
        let t = Tensor::from_vec(vec![n, 3], data).unwrap();
        let proj = pca_project(&t, 0).unwrap();
        let var = |axis: usize| {
            let mean: f64 = proj.iter().map(|p| p[axis]).sum::<f64>() / n as f64;
            proj.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n as f64
        };
        assert!(var(0) >= var(1));
    }

    #[test]
    fn deterministic_across_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..40 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = Tensor::from_vec(vec![40, 6], data).unwrap();
        let a = pca_project(&t, 7).unwrap();
        let b = pca_project(&t, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_input_is_an_error() {
        let t = Tensor::from_vec(vec![5, 3], vec![2.0; 15]).unwrap();
        match pca_project(&t, 0) {
            Err(AnalysisError::Config(msg)) => assert!(msg.contains("identical")),
            other => panic!("expected degenerate error, got {other:?}"),
        }
    }
}
