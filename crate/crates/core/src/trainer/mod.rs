//! Joint pre-training loop: batches alternate between modalities on a fixed
//! ratio, each step samples span masks, corrupts, runs the encoder and the
//! masked-token loss, and applies one Adam update under the warmup/decay
//! schedule. Fully deterministic given the config seed.

mod adam;
mod batch;
mod schedule;
mod state;

pub use adam::{adam_step, param_decays, AdamHyper, AdamState, StepOutcome};
pub use batch::{epoch_batches, Batch};
pub use schedule::lr_at;
pub use state::{
    read_train_state, write_train_state, ModalityAgg, StreamCursor, TrainState, STATE_MAGIC,
};

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::masking::{apply_mask, sample_mask, MaskConfig, MaskError};
use crate::model::{argmax_rows, JointModel, ModelError};
use crate::seeds::derive_seed;
use crate::tape::Tape;
use crate::tensor::TensorError;
use crate::text::{upsample, PhonemeVocab, RepeatSource, TextError, UpsampleConfig, UpsampleMode};
use crate::types::{Modality, TokenSequence};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] crate::io::CorpusError),
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub adam: AdamHyper,
    pub tokens_per_batch: usize,
    /// Modality schedule ratio; `text_ratio = 0` reproduces speech-only
    /// pre-training.
    pub speech_ratio: u32,
    pub text_ratio: u32,
    pub seed: u64,
    /// Steps between checkpoints; 0 emits only the initial and final ones.
    pub checkpoint_interval: u64,
    pub mask: MaskConfig,
    pub upsample_mode: UpsampleMode,
    pub upsample_source: RepeatSource,
    /// Keep one fixed up-sampling draw instead of redrawing per epoch.
    pub freeze_upsample: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        if self.warmup_steps >= self.total_steps {
            return Err(TrainError::Config(format!(
                "warmup_steps {} must be < total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0) {
            return Err(TrainError::Config("peak_lr must be > 0".into()));
        }
        if self.tokens_per_batch == 0 {
            return Err(TrainError::Config("tokens_per_batch must be >= 1".into()));
        }
        if self.speech_ratio == 0 && self.text_ratio == 0 {
            return Err(TrainError::Config(
                "speech_ratio and text_ratio cannot both be 0".into(),
            ));
        }
        Ok(())
    }

    /// Modality of a 1-based step under the ratio schedule.
    pub fn modality_at(&self, step: u64) -> Modality {
        let period = (self.speech_ratio + self.text_ratio) as u64;
        let idx = (step - 1) % period;
        if idx < self.speech_ratio as u64 {
            Modality::Speech
        } else {
            Modality::Text
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub modality: Modality,
    pub loss: f64,
    pub masked_acc: f64,
    pub lr: f64,
    pub mask_fraction: f64,
    pub grad_norm: f64,
    /// False when the optimizer step was skipped (empty mask or non-finite
    /// gradient).
    pub applied: bool,
}

/// Callbacks for streaming metrics and writing checkpoints; the trainer
/// itself never touches the filesystem.
pub trait TrainObserver {
    fn on_step(&mut self, _metrics: &StepMetrics) -> TrainResult<()> {
        Ok(())
    }
    fn on_checkpoint(
        &mut self,
        _step: u64,
        _model: &JointModel,
        _state: &TrainState,
    ) -> TrainResult<()> {
        Ok(())
    }
}

/// Observer that drops everything.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Observer that collects metrics in memory.
#[derive(Default)]
pub struct CollectingObserver {
    pub metrics: Vec<StepMetrics>,
}

impl TrainObserver for CollectingObserver {
    fn on_step(&mut self, metrics: &StepMetrics) -> TrainResult<()> {
        self.metrics.push(metrics.clone());
        Ok(())
    }
}

struct ModalityStream<'a> {
    label: &'static str,
    modality: Modality,
    raw: &'a [TokenSequence],
    cursor: StreamCursor,
    batches: Vec<Batch>,
    cfg: &'a TrainConfig,
    vocab: Option<&'a PhonemeVocab>,
}

impl<'a> ModalityStream<'a> {
    fn new(
        label: &'static str,
        modality: Modality,
        raw: &'a [TokenSequence],
        cursor: StreamCursor,
        cfg: &'a TrainConfig,
        vocab: Option<&'a PhonemeVocab>,
        max_len: usize,
    ) -> TrainResult<Self> {
        let mut stream = ModalityStream {
            label,
            modality,
            raw,
            cursor,
            batches: Vec::new(),
            cfg,
            vocab,
        };
        stream.build_epoch(max_len)?;
        Ok(stream)
    }

    fn epoch_corpus(&self) -> Vec<TokenSequence> {
        match self.modality {
            Modality::Speech => self.raw.to_vec(),
            Modality::Text => {
                if self.cfg.upsample_mode == UpsampleMode::Original {
                    return self.raw.to_vec();
                }
                let epoch_key = if self.cfg.freeze_upsample {
                    "frozen".to_owned()
                } else {
                    self.cursor.epoch.to_string()
                };
                let seed = derive_seed(self.cfg.seed, "upsample-epoch", &[&epoch_key]);
                let up_cfg = UpsampleConfig {
                    mode: UpsampleMode::Repeat,
                    source: self.cfg.upsample_source.clone(),
                    seed,
                };
                self.raw
                    .iter()
                    .map(|seq| upsample(seq, &up_cfg, self.vocab))
                    .collect()
            }
        }
    }

    fn build_epoch(&mut self, max_len: usize) -> TrainResult<()> {
        let corpus = self.epoch_corpus();
        self.batches = epoch_batches(
            &corpus,
            self.cfg.tokens_per_batch,
            max_len,
            self.cfg.seed,
            self.label,
            self.cursor.epoch,
        )?;
        Ok(())
    }

    fn next_batch(&mut self, max_len: usize) -> TrainResult<Batch> {
        loop {
            if (self.cursor.batch as usize) < self.batches.len() {
                let batch = self.batches[self.cursor.batch as usize].clone();
                self.cursor.batch += 1;
                return Ok(batch);
            }
            self.cursor.epoch += 1;
            self.cursor.batch = 0;
            self.build_epoch(max_len)?;
        }
    }
}

fn validate_corpus(
    corpus: &[TokenSequence],
    modality: Modality,
    model_vocab: usize,
) -> TrainResult<()> {
    for seq in corpus {
        if seq.modality != modality {
            return Err(TrainError::Config(format!(
                "sequence {} tagged {} found in the {} corpus",
                seq.utt_id, seq.modality, modality
            )));
        }
        if let Some(&max) = seq.ids.iter().max() {
            if max >= model_vocab {
                return Err(TrainError::Config(format!(
                    "sequence {} uses token id {max}, but the model's {modality} \
                     vocabulary has {model_vocab} entries",
                    seq.utt_id
                )));
            }
        }
    }
    Ok(())
}

/// Run training from `state.step` until `total_steps` (or `stop_after`).
/// The text corpus holds raw phoneme sequences; up-sampling happens per
/// epoch inside the loop.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut JointModel,
    speech: &[TokenSequence],
    text: &[TokenSequence],
    phoneme_vocab: Option<&PhonemeVocab>,
    cfg: &TrainConfig,
    mut state: TrainState,
    stop_after: Option<u64>,
    observer: &mut dyn TrainObserver,
) -> TrainResult<TrainState> {
    cfg.validate()?;
    let max_len = model.config.max_len;
    if cfg.speech_ratio > 0 {
        if speech.is_empty() {
            return Err(TrainError::Config(
                "speech is scheduled but the speech corpus is empty".into(),
            ));
        }
        validate_corpus(speech, Modality::Speech, model.config.speech_vocab)?;
    }
    if cfg.text_ratio > 0 {
        if text.is_empty() {
            return Err(TrainError::Config(
                "text is scheduled but the text corpus is empty".into(),
            ));
        }
        validate_corpus(text, Modality::Text, model.config.text_vocab)?;
    }
    if state.adam.moments.is_empty() {
        state.adam = AdamState::for_model(model);
    }

    let mut speech_stream = if cfg.speech_ratio > 0 {
        Some(ModalityStream::new(
            "speech",
            Modality::Speech,
            speech,
            state.speech_cursor,
            cfg,
            None,
            max_len,
        )?)
    } else {
        None
    };
    let mut text_stream = if cfg.text_ratio > 0 {
        Some(ModalityStream::new(
            "text",
            Modality::Text,
            text,
            state.text_cursor,
            cfg,
            phoneme_vocab,
            max_len,
        )?)
    } else {
        None
    };

    let end = stop_after
        .map(|s| s.min(cfg.total_steps))
        .unwrap_or(cfg.total_steps);
    if state.step == 0 {
        observer.on_checkpoint(0, model, &state)?;
    }

    while state.step < end {
        let step = state.step + 1;
        let modality = cfg.modality_at(step);
        let stream = match modality {
            Modality::Speech => speech_stream.as_mut().expect("validated above"),
            Modality::Text => text_stream.as_mut().expect("validated above"),
        };
        let batch = stream.next_batch(max_len)?;

        let mask_id = model.config.mask_id(modality);
        let vocab = model.config.vocab(modality);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let mut nll_total = None;
        let mut masked_total = 0usize;
        let mut token_total = 0usize;
        let mut correct = 0usize;
        let step_key = step.to_string();
        for seq in &batch.seqs {
            token_total += seq.len();
            if seq.is_empty() {
                continue;
            }
            let plan = sample_mask(
                seq.len(),
                &cfg.mask,
                derive_seed(cfg.seed, "mask-step", &[&step_key, &seq.utt_id]),
            );
            if plan.positions.is_empty() {
                continue;
            }
            let (corrupted, plan) = apply_mask(
                seq,
                &plan,
                mask_id,
                vocab,
                derive_seed(cfg.seed, "corrupt-step", &[&step_key, &seq.utt_id]),
                cfg.mask.policy,
            )?;
            let x = bound.embed(&mut tape, &corrupted)?;
            let enc = bound.encode(&mut tape, x)?;
            let logits =
                bound.tmlm_logits_masked(&mut tape, enc.hidden, &plan.positions, modality)?;
            for (pred, want) in argmax_rows(tape.value(logits)).iter().zip(&plan.targets) {
                if pred == want {
                    correct += 1;
                }
            }
            let probs = tape.softmax_rows(logits)?;
            let nll = tape.nll_sum(probs, &plan.targets)?;
            masked_total += plan.targets.len();
            nll_total = Some(match nll_total {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
        }

        let lr = lr_at(step, cfg.peak_lr, cfg.warmup_steps, cfg.total_steps)?;
        let (loss_value, grad_norm, applied) = match nll_total {
            Some(total) if masked_total > 0 => {
                let loss = tape.scale(total, 1.0 / masked_total as f64)?;
                let mut grads = tape.backward(loss)?;
                let mut named = BTreeMap::new();
                for name in model.param_names() {
                    if let Some(g) = grads.take(bound.var(&name)) {
                        named.insert(name, g);
                    }
                }
                let outcome = adam_step(model, &named, &mut state.adam, lr, &cfg.adam);
                let loss_value = tape.value(loss).item()?;
                match outcome {
                    StepOutcome::Applied { grad_norm } => (loss_value, grad_norm, true),
                    StepOutcome::SkippedNonFinite => (loss_value, f64::NAN, false),
                }
            }
            _ => (0.0, 0.0, false),
        };

        let masked_acc = if masked_total > 0 {
            correct as f64 / masked_total as f64
        } else {
            0.0
        };
        let mask_fraction = if token_total > 0 {
            masked_total as f64 / token_total as f64
        } else {
            0.0
        };
        state.step = step;
        state.speech_cursor = speech_stream
            .as_ref()
            .map(|s| s.cursor)
            .unwrap_or(state.speech_cursor);
        state.text_cursor = text_stream
            .as_ref()
            .map(|s| s.cursor)
            .unwrap_or(state.text_cursor);
        let agg = match modality {
            Modality::Speech => &mut state.speech_agg,
            Modality::Text => &mut state.text_agg,
        };
        agg.loss_sum += loss_value;
        agg.acc_sum += masked_acc;
        agg.steps += 1;

        observer.on_step(&StepMetrics {
            step,
            modality,
            loss: loss_value,
            masked_acc,
            lr,
            mask_fraction,
            grad_norm,
            applied,
        })?;
        let at_interval = cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0;
        if at_interval || step == end {
            observer.on_checkpoint(step, model, &state)?;
        }
    }
    Ok(state)
}
