//! Shared input builders for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use duotok_core::io::FeatureMatrix;
use duotok_core::model::{JointModel, ModelConfig};
use duotok_core::types::{Modality, TokenSequence};
use duotok_core::Tensor;

pub fn random_frames(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(vec![n, d], data).expect("finite random frames")
}

pub fn random_features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    FeatureMatrix::new("bench", random_frames(n, d, seed))
}

pub fn bench_model(dim: usize, layers: usize) -> JointModel {
    JointModel::init(
        ModelConfig {
            dim,
            layers,
            heads: 4,
            max_len: 256,
            speech_vocab: 500,
            text_vocab: 347,
            tau: 0.1,
            final_ln: true,
            strict_equation_mlp: false,
        },
        7,
    )
    .expect("valid bench config")
}

pub fn random_speech_seq(len: usize, vocab: usize, seed: u64) -> TokenSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    TokenSequence::new("bench", Modality::Speech, ids, vocab)
}

pub fn sine_samples(seconds: f64) -> Vec<f64> {
    let n = (seconds * 16_000.0) as usize;
    (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() * 0.5)
        .collect()
}
