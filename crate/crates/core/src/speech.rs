//! Speech tokenizer: k-means codebook training over frame features and
//! nearest-centroid assignment to discrete token ids, plus the run-length
//! reduction used by the reduced-tokens ablation.

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::io::FeatureMatrix;
use crate::seeds::stream_rng;
use crate::tensor::Tensor;
use crate::types::{Modality, TokenSequence};

#[derive(Debug, Error)]
pub enum SpeechError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: codebook dim {codebook}, features dim {features}")]
    DimMismatch { codebook: usize, features: usize },
    #[error(transparent)]
    Io(#[from] crate::io::CorpusError),
}

pub type Result<T> = std::result::Result<T, SpeechError>;

/// K centroid vectors defining the speech-token vocabulary.
#[derive(Debug, Clone)]
pub struct Codebook {
    /// `K x feat_dim`.
    pub centroids: Tensor,
    pub iterations_run: usize,
    pub final_inertia: f64,
    /// Inertia after initialization and after each Lloyd update.
    pub inertia_history: Vec<f64>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.centroids.shape()[1]
    }

    fn centroid(&self, c: usize) -> &[f64] {
        let d = self.feat_dim();
        &self.centroids.data()[c * d..(c + 1) * d]
    }
}

#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub max_iters: usize,
    /// Relative inertia improvement below which training stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        KmeansConfig {
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Pool frames from several utterances into one `n x d` matrix, keeping
/// every `stride`-th frame.
pub fn pool_frames(matrices: &[FeatureMatrix], stride: usize) -> Result<Tensor> {
    if matrices.is_empty() {
        return Err(SpeechError::Config("no feature matrices to pool".into()));
    }
    let stride = stride.max(1);
    let d = matrices[0].feat_dim();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for m in matrices {
        if m.feat_dim() != d {
            return Err(SpeechError::DimMismatch {
                codebook: d,
                features: m.feat_dim(),
            });
        }
        for f in (0..m.num_frames()).step_by(stride) {
            data.extend_from_slice(m.frame(f));
            rows += 1;
        }
    }
    Ok(Tensor::from_vec(vec![rows, d], data).expect("pooled frames are finite"))
}

/// Lloyd's algorithm with k-means++ initialization, deterministic given the
/// seed. Empty clusters are re-seeded to the frame farthest from their
/// current centroid.
pub fn kmeans_train(frames: &Tensor, k: usize, config: &KmeansConfig) -> Result<Codebook> {
    let [n, d] = frames.shape() else {
        return Err(SpeechError::Config(format!(
            "frames must be rank 2, got {:?}",
            frames.shape()
        )));
    };
    let (n, d) = (*n, *d);
    if k == 0 {
        return Err(SpeechError::Config("k must be >= 1".into()));
    }
    if n == 0 {
        return Err(SpeechError::Config("no frames to cluster".into()));
    }
    if n < k {
        return Err(SpeechError::Config(format!(
            "{n} frames is fewer than k={k} clusters"
        )));
    }
    let x = frames.data();
    let frame = |i: usize| &x[i * d..(i + 1) * d];
    let mut rng = stream_rng(config.seed, "kmeans-init", &[]);

    // k-means++ seeding
    let mut centroids = vec![0.0f64; k * d];
    let first = rng.gen_range(0..n);
    centroids[..d].copy_from_slice(frame(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| sq_dist(frame(i), &centroids[..d])).collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        if total <= 0.0 {
            return Err(SpeechError::Config(format!(
                "fewer than k={k} distinct frames"
            )));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in min_d2.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                pick = i;
                break;
            }
        }
        centroids[c * d..(c + 1) * d].copy_from_slice(frame(pick));
        for i in 0..n {
            let dist = sq_dist(frame(i), &centroids[c * d..(c + 1) * d]);
            if dist < min_d2[i] {
                min_d2[i] = dist;
            }
        }
    }

    let assign_all = |centroids: &[f64]| -> Vec<usize> {
        let nearest = |i: usize| {
            let fr = frame(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(fr, &centroids[c * d..(c + 1) * d]);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            best
        };
        if n * k * d > (1 << 17) {
            (0..n).into_par_iter().map(nearest).collect()
        } else {
            (0..n).map(nearest).collect()
        }
    };
    let inertia_of = |centroids: &[f64], assign: &[usize]| -> f64 {
        assign
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(frame(i), &centroids[c * d..(c + 1) * d]))
            .sum()
    };

    let mut assignments = assign_all(&centroids);
    let mut inertia = inertia_of(&centroids, &assignments);
    let mut history = vec![inertia];
    let mut iterations = 0usize;

    for _ in 0..config.max_iters {
        // update step: means of assigned frames
        let mut sums = vec![0.0f64; k * d];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(frame(i)) {
                *s += v;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            } else {
                // farthest frame from this centroid, skipping frames already
                // used to reseed another empty cluster this round
                let mut far = (0usize, -1.0f64);
                for i in 0..n {
                    if reseeded.contains(&i) {
                        continue;
                    }
                    let dist = sq_dist(frame(i), &centroids[c * d..(c + 1) * d]);
                    if dist > far.1 {
                        far = (i, dist);
                    }
                }
                centroids[c * d..(c + 1) * d].copy_from_slice(frame(far.0));
                reseeded.push(far.0);
            }
        }
        iterations += 1;
        assignments = assign_all(&centroids);
        let new_inertia = inertia_of(&centroids, &assignments);
        debug_assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        history.push(new_inertia);
        let improved = inertia - new_inertia;
        inertia = new_inertia;
        if inertia == 0.0 || improved < config.tol * inertia.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    Ok(Codebook {
        centroids: Tensor::from_vec(vec![k, d], centroids)
            .map_err(|e| SpeechError::Config(format!("centroids not finite: {e}")))?,
        iterations_run: iterations,
        final_inertia: inertia,
        inertia_history: history,
    })
}

/// Map every frame to the index of its nearest centroid (Euclidean), ties
/// broken toward the lowest centroid index.
pub fn kmeans_assign(codebook: &Codebook, features: &FeatureMatrix) -> Result<TokenSequence> {
    let d = codebook.feat_dim();
    if features.feat_dim() != d {
        return Err(SpeechError::DimMismatch {
            codebook: d,
            features: features.feat_dim(),
        });
    }
    let k = codebook.k();
    let nearest = |i: usize| {
        let fr = features.frame(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let dist = sq_dist(fr, codebook.centroid(c));
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        best
    };
    let n = features.num_frames();
    let ids: Vec<usize> = if n * k * d > (1 << 17) {
        (0..n).into_par_iter().map(nearest).collect()
    } else {
        (0..n).map(nearest).collect()
    };
    Ok(TokenSequence::new(
        features.utt_id.clone(),
        Modality::Speech,
        ids,
        k,
    ))
}

/// Collapse maximal runs of equal adjacent ids to a single id. Idempotent.
pub fn run_length_reduce(seq: &TokenSequence) -> TokenSequence {
    debug_assert_eq!(seq.modality, Modality::Speech);
    let mut ids = Vec::with_capacity(seq.ids.len());
    for &id in &seq.ids {
        if ids.last() != Some(&id) {
            ids.push(id);
        }
    }
    TokenSequence::new(seq.utt_id.clone(), seq.modality, ids, seq.vocab_size)
}

/// Exact summary statistics over sequence lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub mean: f64,
    pub std: f64,
    pub histogram: BTreeMap<usize, usize>,
}

pub fn estimate_token_length_stats(corpus: &[TokenSequence]) -> Result<LengthStats> {
    if corpus.is_empty() {
        return Err(SpeechError::Config("empty corpus".into()));
    }
    let n = corpus.len() as f64;
    let mut histogram = BTreeMap::new();
    let mut sum = 0.0;
    for seq in corpus {
        *histogram.entry(seq.len()).or_insert(0usize) += 1;
        sum += seq.len() as f64;
    }
    let mean = sum / n;
    let var = corpus
        .iter()
        .map(|s| {
            let diff = s.len() as f64 - mean;
            diff * diff
        })
        .sum::<f64>()
        / n;
    Ok(LengthStats {
        mean,
        std: var.sqrt(),
        histogram,
    })
}

// ── codebook file: magic "TV2C", version, K, feat_dim, f32 rows ─────────

pub const CODEBOOK_MAGIC: &[u8; 4] = b"TV2C";
const CODEBOOK_VERSION: u32 = 1;

pub fn write_codebook(path: &Path, codebook: &Codebook) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + codebook.centroids.numel() * 4);
    buf.extend_from_slice(CODEBOOK_MAGIC);
    buf.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    buf.extend_from_slice(&(codebook.k() as u32).to_le_bytes());
    buf.extend_from_slice(&(codebook.feat_dim() as u32).to_le_bytes());
    for &v in codebook.centroids.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(crate::io::CorpusError::Io)?;
    Ok(())
}

pub fn read_codebook(path: &Path) -> Result<Codebook> {
    use crate::io::CorpusError;
    let bytes = std::fs::read(path).map_err(CorpusError::Io)?;
    let p = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != CODEBOOK_MAGIC {
        return Err(CorpusError::BadMagic {
            path: p,
            expected: "TV2C",
        }
        .into());
    }
    if bytes.len() < 16 {
        return Err(CorpusError::Truncated {
            path: p,
            offset: bytes.len(),
        }
        .into());
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != CODEBOOK_VERSION {
        return Err(CorpusError::Format {
            path: p,
            offset: 4,
            msg: format!("unsupported version {version}"),
        }
        .into());
    }
    let k = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let d = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let expected = 16 + k * d * 4;
    if bytes.len() != expected {
        return Err(CorpusError::Truncated {
            path: p,
            offset: bytes.len().min(expected),
        }
        .into());
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| LittleEndian::read_f32(c) as f64)
        .collect();
    Ok(Codebook {
        centroids: Tensor::from_vec(vec![k, d], data)
            .map_err(|e| SpeechError::Config(format!("centroids not finite: {e}")))?,
        iterations_run: 0,
        final_inertia: 0.0,
        inertia_history: Vec::new(),
    })
}
