//! Reference-implementation oracle: a deliberately plain, loop-based forward
//! pass over the same parameters, compared against the tape-built encoder.

use duotok_core::model::{JointModel, ModelConfig, LN_EPS};
use duotok_core::tape::Tape;
use duotok_core::types::{Modality, TokenSequence};

/// Naive forward pass. No tape, no shared kernels: plain vectors and loops.
struct Reference<'m> {
    model: &'m JointModel,
}

impl<'m> Reference<'m> {
    fn param(&self, name: &str) -> &[f64] {
        self.model.param(name).data()
    }

    fn matvec_rows(&self, x: &[Vec<f64>], w: &[f64], bias: &[f64], d_in: usize, d_out: usize) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                (0..d_out)
                    .map(|j| {
                        let mut s = bias[j];
                        for i in 0..d_in {
                            s += row[i] * w[i * d_out + j];
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    fn layer_norm(&self, x: &[Vec<f64>], gain: &[f64], bias: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let d = row.len() as f64;
                let mean: f64 = row.iter().sum::<f64>() / d;
                let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(j, v)| gain[j] * (v - mean) * inv + bias[j])
                    .collect()
            })
            .collect()
    }

    fn forward(&self, seq: &TokenSequence) -> Vec<Vec<f64>> {
        let cfg = &self.model.config;
        let d = cfg.dim;
        let (tok_name, pos_name) = match seq.modality {
            Modality::Speech => ("emb.speech.tok", "emb.speech.pos"),
            Modality::Text => ("emb.text.tok", "emb.text.pos"),
        };
        let tok = self.param(tok_name);
        let pos = self.param(pos_name);
        let mut x: Vec<Vec<f64>> = seq
            .ids
            .iter()
            .enumerate()
            .map(|(t, &id)| {
                (0..d).map(|j| tok[id * d + j] + pos[t * d + j]).collect()
            })
            .collect();

        let len = x.len();
        let heads = cfg.heads;
        let dh = d / heads;
        for l in 0..cfg.layers {
            let p = |s: &str| format!("enc.{l}.{s}");
            let h = self.layer_norm(&x, self.param(&p("ln1.gain")), self.param(&p("ln1.bias")));
            let q = self.matvec_rows(&h, self.param(&p("attn.wq")), self.param(&p("attn.bq")), d, d);
            let k = self.matvec_rows(&h, self.param(&p("attn.wk")), self.param(&p("attn.bk")), d, d);
            let v = self.matvec_rows(&h, self.param(&p("attn.wv")), self.param(&p("attn.bv")), d, d);
            // per-head scaled dot-product attention
            let mut ctx = vec![vec![0.0f64; d]; len];
            for head in 0..heads {
                let lo = head * dh;
                for t in 0..len {
                    let mut scores = Vec::with_capacity(len);
                    for s in 0..len {
                        let mut dot = 0.0;
                        for j in 0..dh {
                            dot += q[t][lo + j] * k[s][lo + j];
                        }
                        scores.push(dot / (dh as f64).sqrt());
                    }
                    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for s in 0..len {
                        let w = exps[s] / sum;
                        for j in 0..dh {
                            ctx[t][lo + j] += w * v[s][lo + j];
                        }
                    }
                }
            }
            let attn = self.matvec_rows(&ctx, self.param(&p("attn.wo")), self.param(&p("attn.bo")), d, d);
            let z_hat: Vec<Vec<f64>> = x
                .iter()
                .zip(&attn)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect();

            let h2 = self.layer_norm(
                &z_hat,
                self.param(&p("ln2.gain")),
                self.param(&p("ln2.bias")),
            );
            let ff = cfg.ff_dim();
            let a1 = self.matvec_rows(&h2, self.param(&p("mlp.w1")), self.param(&p("mlp.b1")), d, ff);
            let a1: Vec<Vec<f64>> = a1
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| {
                            let cdf =
                                0.5 * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
                            v * cdf
                        })
                        .collect()
                })
                .collect();
            let m = self.matvec_rows(&a1, self.param(&p("mlp.w2")), self.param(&p("mlp.b2")), ff, d);
            x = z_hat
                .iter()
                .zip(&m)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect();
        }
        if cfg.final_ln && cfg.layers > 0 {
            x = self.layer_norm(&x, self.param("final_ln.gain"), self.param("final_ln.bias"));
        }
        x
    }
}

#[test]
fn encoder_matches_loop_reference() {
    let model = JointModel::init(
        ModelConfig {
            dim: 24,
            layers: 2,
            heads: 3,
            max_len: 16,
            speech_vocab: 30,
            text_vocab: 18,
            tau: 0.1,
            final_ln: true,
            strict_equation_mlp: false,
        },
        99,
    )
    .unwrap();
    for (modality, ids) in [
        (Modality::Speech, vec![0usize, 7, 13, 29, 5, 2]),
        (Modality::Text, vec![17usize, 0, 4, 9, 9, 1]),
    ] {
        let seq = TokenSequence::new("ref", modality, ids, model.config.vocab(modality));
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = bound.embed(&mut tape, &seq).unwrap();
        let out = bound.encode(&mut tape, x).unwrap();
        let got = tape.value(out.hidden);

        let oracle = Reference { model: &model }.forward(&seq);
        assert_eq!(got.shape(), &[6, 24]);
        for t in 0..6 {
            for j in 0..24 {
                let a = got.at2(t, j);
                let b = oracle[t][j];
                assert!(
                    (a - b).abs() < 1e-6,
                    "{modality:?} row {t} col {j}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn modality_agnostic_encoder_has_no_modality_branch() {
    // Feeding identical input vectors through the encoder must give
    // identical outputs no matter which embedding table produced them:
    // copy the speech table rows into the text table and compare.
    let cfg = ModelConfig {
        dim: 12,
        layers: 2,
        heads: 2,
        max_len: 8,
        speech_vocab: 9,
        text_vocab: 9,
        tau: 0.1,
        final_ln: true,
        strict_equation_mlp: false,
    };
    let mut model = JointModel::init(cfg, 5).unwrap();
    let speech_tok = model.param("emb.speech.tok").clone();
    let speech_pos = model.param("emb.speech.pos").clone();
    *model.param_mut("emb.text.tok") = speech_tok;
    *model.param_mut("emb.text.pos") = speech_pos;

    let ids = vec![1usize, 4, 8, 2];
    let run = |modality: Modality| {
        let seq = TokenSequence::new("m", modality, ids.clone(), 9);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = bound.embed(&mut tape, &seq).unwrap();
        let out = bound.encode(&mut tape, x).unwrap();
        tape.value(out.hidden).data().to_vec()
    };
    assert_eq!(run(Modality::Speech), run(Modality::Text));
}
