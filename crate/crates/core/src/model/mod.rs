//! The joint model: per-modality token/position embeddings, a shared pre-LN
//! Transformer encoder, and the temperature-scaled cosine-similarity
//! masked-token head. Speech and text share every encoder parameter; only
//! the embedding tables differ.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::collections::HashMap;

use thiserror::Error;

use crate::masking::MaskPlan;
use crate::seeds::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};
use crate::types::{Modality, TokenSequence};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] crate::io::CorpusError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    /// Speech vocabulary size C (codebook entries, mask row excluded).
    pub speech_vocab: usize,
    /// Text vocabulary size P (positional phonemes, mask row excluded).
    pub text_vocab: usize,
    /// Logit temperature for the cosine-similarity head.
    pub tau: f64,
    /// Apply a final layer norm after the last block (skipped when layers=0).
    pub final_ln: bool,
    /// Feed the residual through the MLP (`MLP(LN(z)+z)`) instead of the
    /// standard pre-LN `MLP(LN(z))+z`.
    pub strict_equation_mlp: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.max_len == 0 {
            return Err(ModelError::Config(
                "dim, heads and max_len must be >= 1".into(),
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.speech_vocab == 0 || self.text_vocab == 0 {
            return Err(ModelError::Config("vocabulary sizes must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(ModelError::Config(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.dim
    }

    /// Mask-token id for a modality: the extra embedding row past the
    /// regular vocabulary.
    pub fn mask_id(&self, modality: Modality) -> usize {
        match modality {
            Modality::Speech => self.speech_vocab,
            Modality::Text => self.text_vocab,
        }
    }

    pub fn vocab(&self, modality: Modality) -> usize {
        match modality {
            Modality::Speech => self.speech_vocab,
            Modality::Text => self.text_vocab,
        }
    }
}

fn token_table_name(modality: Modality) -> &'static str {
    match modality {
        Modality::Speech => "emb.speech.tok",
        Modality::Text => "emb.text.tok",
    }
}

fn pos_table_name(modality: Modality) -> &'static str {
    match modality {
        Modality::Speech => "emb.speech.pos",
        Modality::Text => "emb.text.pos",
    }
}

/// Embedding tables, encoder stack and head parameters, addressed by name.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub config: ModelConfig,
    params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

const INIT_STD: f64 = 0.02;

impl JointModel {
    /// Gaussian(0, 0.02) weights and embeddings, LN gain 1 / bias 0, zero
    /// linear biases. Each parameter draws from its own named sub-stream, so
    /// initialization does not depend on enumeration order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let ff = config.ff_dim();
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let randn = |name: &str, shape: Vec<usize>| {
            let mut rng = stream_rng(seed, "init", &[name]);
            (name.to_owned(), Tensor::randn(shape, INIT_STD, &mut rng).with_grad())
        };
        params.push(randn(
            "emb.speech.tok",
            vec![config.speech_vocab + 1, d],
        ));
        params.push(randn("emb.speech.pos", vec![config.max_len, d]));
        params.push(randn("emb.text.tok", vec![config.text_vocab + 1, d]));
        params.push(randn("emb.text.pos", vec![config.max_len, d]));
        for l in 0..config.layers {
            let p = |s: &str| format!("enc.{l}.{s}");
            params.push((p("ln1.gain"), Tensor::full(vec![d], 1.0).with_grad()));
            params.push((p("ln1.bias"), Tensor::zeros(vec![d]).with_grad()));
            params.push(randn(&p("attn.wq"), vec![d, d]));
            params.push((p("attn.bq"), Tensor::zeros(vec![d]).with_grad()));
            params.push(randn(&p("attn.wk"), vec![d, d]));
            params.push((p("attn.bk"), Tensor::zeros(vec![d]).with_grad()));
            params.push(randn(&p("attn.wv"), vec![d, d]));
            params.push((p("attn.bv"), Tensor::zeros(vec![d]).with_grad()));
            params.push(randn(&p("attn.wo"), vec![d, d]));
            params.push((p("attn.bo"), Tensor::zeros(vec![d]).with_grad()));
            params.push((p("ln2.gain"), Tensor::full(vec![d], 1.0).with_grad()));
            params.push((p("ln2.bias"), Tensor::zeros(vec![d]).with_grad()));
            params.push(randn(&p("mlp.w1"), vec![d, ff]));
            params.push((p("mlp.b1"), Tensor::zeros(vec![ff]).with_grad()));
            params.push(randn(&p("mlp.w2"), vec![ff, d]));
            params.push((p("mlp.b2"), Tensor::zeros(vec![d]).with_grad()));
        }
        if config.final_ln {
            params.push(("final_ln.gain".into(), Tensor::full(vec![d], 1.0).with_grad()));
            params.push(("final_ln.bias".into(), Tensor::zeros(vec![d]).with_grad()));
        }
        params.push(randn("head.w", vec![d, d]));
        let index = params
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Ok(JointModel {
            config,
            params,
            index,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let index = params
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Ok(JointModel {
            config,
            params,
            index,
        })
    }

    pub fn param(&self, name: &str) -> &Tensor {
        let i = self.index[name];
        &self.params[i].1
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        let i = self.index[name];
        &mut self.params[i].1
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Register every parameter on a tape for one forward/backward pass.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), tape.param(t)))
            .collect();
        BoundModel {
            config: self.config.clone(),
            vars,
        }
    }

    /// Token embedding table rows for the real vocabulary (mask row
    /// excluded), as plain values.
    pub fn token_embedding_rows(&self, modality: Modality) -> Tensor {
        let table = self.param(token_table_name(modality));
        let d = self.config.dim;
        let vocab = self.config.vocab(modality);
        let data = table.data()[..vocab * d].to_vec();
        Tensor::from_vec(vec![vocab, d], data).expect("table slice is finite")
    }
}

/// Encoder states: the final hidden states plus every intermediate layer
/// output (`states[0]` is the embedding, `states[l]` the output of block l).
pub struct EncoderOutput {
    pub hidden: Var,
    pub states: Vec<Var>,
}

/// A model's parameters registered on one tape.
pub struct BoundModel {
    pub config: ModelConfig,
    vars: HashMap<String, Var>,
}

impl BoundModel {
    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Token embedding plus absolute position embedding for the sequence's
    /// modality. Ids may include the mask token (the extra table row).
    pub fn embed(&self, tape: &mut Tape, seq: &TokenSequence) -> Result<Var> {
        if seq.len() > self.config.max_len {
            return Err(ModelError::Contract(format!(
                "sequence {} has length {} > max_len {}; crop before embedding",
                seq.utt_id,
                seq.len(),
                self.config.max_len
            )));
        }
        let tok_table = self.var(token_table_name(seq.modality));
        let pos_table = self.var(pos_table_name(seq.modality));
        let tok = tape.embedding_lookup(tok_table, &seq.ids)?;
        let pos = tape.slice_rows(pos_table, 0, seq.len())?;
        Ok(tape.add(tok, pos)?)
    }

    fn attention(&self, tape: &mut Tape, x: Var, layer: usize) -> Result<Var> {
        let p = |s: &str| format!("enc.{layer}.{s}");
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let wq = self.var(&p("attn.wq"));
        let wk = self.var(&p("attn.wk"));
        let wv = self.var(&p("attn.wv"));
        let wo = self.var(&p("attn.wo"));
        let q = tape.matmul(x, wq)?;
        let q = tape.add_row(q, self.var(&p("attn.bq")))?;
        let k = tape.matmul(x, wk)?;
        let k = tape.add_row(k, self.var(&p("attn.bk")))?;
        let v = tape.matmul(x, wv)?;
        let v = tape.add_row(v, self.var(&p("attn.bv")))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut contexts = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            contexts.push(tape.matmul(weights, vh)?);
        }
        let ctx = tape.concat_cols(&contexts)?;
        let out = tape.matmul(ctx, wo)?;
        Ok(tape.add_row(out, self.var(&p("attn.bo")))?)
    }

    /// The pre-LN encoder stack. No causal mask; all positions attend to all
    /// positions. An empty stack (layers=0) is the identity.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<EncoderOutput> {
        let mut states = vec![x];
        let mut z = x;
        for l in 0..self.config.layers {
            let p = |s: &str| format!("enc.{l}.{s}");
            let h = tape.layer_norm(
                z,
                self.var(&p("ln1.gain")),
                self.var(&p("ln1.bias")),
                LN_EPS,
            )?;
            let attn = self.attention(tape, h, l)?;
            let z_hat = tape.add(z, attn)?;

            let h2 = tape.layer_norm(
                z_hat,
                self.var(&p("ln2.gain")),
                self.var(&p("ln2.bias")),
                LN_EPS,
            )?;
            let mlp_in = if self.config.strict_equation_mlp {
                tape.add(h2, z_hat)?
            } else {
                h2
            };
            let a = tape.matmul(mlp_in, self.var(&p("mlp.w1")))?;
            let a = tape.add_row(a, self.var(&p("mlp.b1")))?;
            let a = tape.gelu(a)?;
            let m = tape.matmul(a, self.var(&p("mlp.w2")))?;
            let m = tape.add_row(m, self.var(&p("mlp.b2")))?;
            z = if self.config.strict_equation_mlp {
                m
            } else {
                tape.add(z_hat, m)?
            };
            states.push(z);
        }
        let hidden = if self.config.final_ln && self.config.layers > 0 {
            tape.layer_norm(
                z,
                self.var("final_ln.gain"),
                self.var("final_ln.bias"),
                LN_EPS,
            )?
        } else {
            z
        };
        Ok(EncoderOutput { hidden, states })
    }

    /// Cosine-similarity logits over the modality's real vocabulary for
    /// every position: `cos(W z_t, e(c)) / tau`. Output embeddings are tied
    /// to the input table; the mask row is not a candidate.
    pub fn tmlm_logits(&self, tape: &mut Tape, hidden: Var, modality: Modality) -> Result<Var> {
        let proj = tape.matmul(hidden, self.var("head.w"))?;
        self.cosine_logits(tape, proj, modality)
    }

    /// Same head restricted to the masked positions only; used by the
    /// training path so unmasked rows never hit the vocabulary matmul.
    pub fn tmlm_logits_masked(
        &self,
        tape: &mut Tape,
        hidden: Var,
        positions: &[usize],
        modality: Modality,
    ) -> Result<Var> {
        let rows = tape.gather_rows(hidden, positions)?;
        let proj = tape.matmul(rows, self.var("head.w"))?;
        self.cosine_logits(tape, proj, modality)
    }

    fn cosine_logits(&self, tape: &mut Tape, proj: Var, modality: Modality) -> Result<Var> {
        let table = self.var(token_table_name(modality));
        let vocab = self.config.vocab(modality);
        let candidates = tape.slice_rows(table, 0, vocab)?;
        let nh = tape.normalize_rows(proj)?;
        let ne = tape.normalize_rows(candidates)?;
        let net = tape.transpose(ne)?;
        let sim = tape.matmul(nh, net)?;
        Ok(tape.scale(sim, 1.0 / self.config.tau)?)
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Mean cross-entropy over masked positions, computed from full-sequence
/// logits. An empty mask yields a zero loss with the `empty` flag set so the
/// caller can skip the optimizer step.
pub struct TmlmLoss {
    pub loss: Var,
    pub masked: usize,
    pub empty: bool,
}

pub fn tmlm_loss(tape: &mut Tape, logits: Var, plan: &MaskPlan) -> Result<TmlmLoss> {
    if plan.positions.is_empty() {
        let loss = tape.constant(Tensor::scalar(0.0));
        return Ok(TmlmLoss {
            loss,
            masked: 0,
            empty: true,
        });
    }
    if !plan.has_targets() {
        return Err(ModelError::Contract(
            "mask plan has no recorded targets; apply_mask must run first".into(),
        ));
    }
    let rows = tape.gather_rows(logits, &plan.positions)?;
    masked_rows_loss(tape, rows, &plan.targets)
}

/// Loss from logits already restricted to the masked rows (the training
/// path); `targets[i]` belongs to row i.
pub fn masked_rows_loss(tape: &mut Tape, masked_logits: Var, targets: &[usize]) -> Result<TmlmLoss> {
    if targets.is_empty() {
        let loss = tape.constant(Tensor::scalar(0.0));
        return Ok(TmlmLoss {
            loss,
            masked: 0,
            empty: true,
        });
    }
    let probs = tape.softmax_rows(masked_logits)?;
    let total = tape.nll_sum(probs, targets)?;
    let loss = tape.scale(total, 1.0 / targets.len() as f64)?;
    Ok(TmlmLoss {
        loss,
        masked: targets.len(),
        empty: false,
    })
}

/// Argmax predictions per row of a logits tensor (no gradients involved).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.last_dim();
    if n == 0 {
        return Vec::new();
    }
    logits
        .data()
        .chunks_exact(n)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}
