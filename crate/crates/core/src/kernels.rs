//! Raw dense kernels behind the tape ops.
//!
//! All loops have a fixed reduction order per output element, so results are
//! bit-identical regardless of how many rayon workers run.

use rayon::prelude::*;

/// Parallelize only when the work is worth the scheduling overhead.
const PAR_FLOP_THRESHOLD: usize = 1 << 17;

/// c[m x n] = a[m x k] . b[k x n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |ci: &mut [f64], i: usize| {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in ci.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

/// r[m x k] = g[m x n] . b[k x n]^T  (i.e. r[i,p] = sum_j g[i,j] b[p,j])
pub fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut r = vec![0.0; m * k];
    let row = |ri: &mut [f64], i: usize| {
        let gi = &g[i * n..(i + 1) * n];
        for (p, rp) in ri.iter_mut().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (gj, bj) in gi.iter().zip(bp) {
                s += gj * bj;
            }
            *rp = s;
        }
    };
    if m * n * k >= PAR_FLOP_THRESHOLD && m > 1 {
        r.par_chunks_mut(k).enumerate().for_each(|(i, ri)| row(ri, i));
    } else {
        for (i, ri) in r.chunks_mut(k).enumerate() {
            row(ri, i);
        }
    }
    r
}

/// r[k x n] = a[m x k]^T . g[m x n]  (i.e. r[p,j] = sum_i a[i,p] g[i,j])
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut r = vec![0.0; k * n];
    let row = |rp: &mut [f64], p: usize| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let gi = &g[i * n..(i + 1) * n];
            for (rj, gj) in rp.iter_mut().zip(gi) {
                *rj += aip * gj;
            }
        }
    };
    if m * k * n >= PAR_FLOP_THRESHOLD && k > 1 {
        r.par_chunks_mut(n).enumerate().for_each(|(p, rp)| row(rp, p));
    } else {
        for (p, rp) in r.chunks_mut(n).enumerate() {
            row(rp, p);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [3.0, 4.0, 5.0, 6.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand() {
        // [[1,2]] x [[3],[4]] = [[11]]
        assert_eq!(matmul(&[1.0, 2.0], &[3.0, 4.0], 1, 2, 1), vec![11.0]);
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let g: Vec<f64> = (0..4).map(|v| v as f64 + 1.0).collect(); // 2x2
        // a[2x3], want a^T.g = [3x2]
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for p in 0..3 {
                at[p * 2 + i] = a[i * 3 + p];
            }
        }
        assert_eq!(matmul_tn(&a, &g, 2, 3, 2), matmul(&at, &g, 3, 2, 2));
        // g[2x2], b[3x2], want g.b^T = [2x3]
        let b: Vec<f64> = (0..6).map(|v| (v as f64).sin()).collect();
        let mut bt = vec![0.0; 6];
        for p in 0..3 {
            for j in 0..2 {
                bt[j * 3 + p] = b[p * 2 + j];
            }
        }
        assert_eq!(matmul_nt(&g, &b, 2, 2, 3), matmul(&g, &bt, 2, 2, 3));
    }
}
