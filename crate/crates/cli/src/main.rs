//! `duotok`: joint speech-text pre-training on discrete tokens.
//!
//! Exit codes: 0 success, 1 internal/numeric failure, 2 usage/input error.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig};

/// An error caused by bad invocation or bad input files (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "duotok",
    about = "Joint speech-text pre-training on discrete tokens",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract log-mel features from a directory of 16 kHz mono WAVs.
    ExtractFeatures {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 80)]
        n_mels: usize,
        #[arg(long, default_value_t = 25)]
        frame_ms: usize,
        #[arg(long, default_value_t = 20)]
        hop_ms: usize,
    },
    /// Train a k-means codebook over pooled frame features.
    TrainCodebook {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        /// Keep every n-th frame when pooling.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map frame features to discrete speech tokens.
    TokenizeSpeech {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Collapse runs of equal adjacent tokens.
        #[arg(long)]
        reduce: bool,
    },
    /// Convert sentences to positional phoneme tokens via a lexicon.
    TokenizeText {
        /// One pre-segmented sentence per line.
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Reuse an existing phoneme vocabulary instead of rebuilding it.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Write the phoneme vocabulary here.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// repeat | original
        #[arg(long, default_value = "original")]
        upsample: String,
        /// Duration statistics file for repeat mode.
        #[arg(long)]
        durations: Option<PathBuf>,
        /// Geometric fallback mean repeat when no stats file is given.
        #[arg(long, default_value_t = 4.0)]
        geometric_mean: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate phoneme duration statistics.
    EstimateDurations {
        /// Mode A: run-length histogram of a speech token corpus.
        #[arg(long)]
        speech_corpus: Option<PathBuf>,
        /// Mode B: externally aligned "PHONEME<TAB>count" lines.
        #[arg(long)]
        aligned: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint pre-training over speech and text token corpora.
    Pretrain(PretrainCli),
    /// Embedding-overlap reports for one or more checkpoints.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// pca | tsne
        #[arg(long, default_value = "pca")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write projection points as CSV.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct PretrainCli {
    #[arg(long)]
    speech_corpus: PathBuf,
    /// Phoneme token corpus (pre-up-sampling); up-sampling runs per epoch.
    #[arg(long)]
    text_corpus: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    preset: String,
    /// Flat key=value config file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Speech vocabulary size; inferred from the corpus when omitted.
    #[arg(long)]
    speech_vocab: Option<usize>,
    /// Text vocabulary size; taken from --phoneme-vocab or inferred.
    #[arg(long)]
    text_vocab: Option<usize>,
    #[arg(long)]
    phoneme_vocab: Option<PathBuf>,
    /// Duration statistics for text up-sampling (else geometric fallback).
    #[arg(long)]
    durations: Option<PathBuf>,
    /// repeat | original
    #[arg(long)]
    upsample: Option<String>,
    #[arg(long)]
    geometric_mean: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    tokens_per_batch: Option<usize>,
    #[arg(long)]
    speech_ratio: Option<u32>,
    #[arg(long)]
    text_ratio: Option<u32>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// full | 80-10-10
    #[arg(long)]
    mask_policy: Option<String>,
    /// Continue from the latest checkpoint pair in --out-dir.
    #[arg(long)]
    resume: bool,
    /// Stop (with a checkpoint) after this step; total_steps is unchanged.
    #[arg(long)]
    stop_after: Option<u64>,
}

impl PretrainCli {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("model.dim", self.dim.map(|v| v.to_string()));
        push("model.layers", self.layers.map(|v| v.to_string()));
        push("model.heads", self.heads.map(|v| v.to_string()));
        push("model.max_len", self.max_len.map(|v| v.to_string()));
        push("train.peak_lr", self.peak_lr.map(|v| v.to_string()));
        push(
            "train.warmup_steps",
            self.warmup_steps.map(|v| v.to_string()),
        );
        push("train.total_steps", self.total_steps.map(|v| v.to_string()));
        push(
            "train.tokens_per_batch",
            self.tokens_per_batch.map(|v| v.to_string()),
        );
        push(
            "train.speech_ratio",
            self.speech_ratio.map(|v| v.to_string()),
        );
        push("train.text_ratio", self.text_ratio.map(|v| v.to_string()));
        push(
            "train.checkpoint_interval",
            self.checkpoint_interval.map(|v| v.to_string()),
        );
        push("mask.policy", self.mask_policy.clone());
        push("upsample.mode", self.upsample.clone());
        push(
            "upsample.geometric_mean",
            self.geometric_mean.map(|v| v.to_string()),
        );
        out
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ExtractFeatures {
            wav_dir,
            out_dir,
            n_mels,
            frame_ms,
            hop_ms,
        } => commands::extract_features(&commands::ExtractArgs {
            wav_dir,
            out_dir,
            n_mels,
            frame_ms,
            hop_ms,
        }),
        Command::TrainCodebook {
            manifest,
            k,
            stride,
            seed,
            max_iters,
            tol,
            out,
        } => commands::train_codebook(&commands::TrainCodebookArgs {
            manifest,
            k,
            stride,
            seed,
            max_iters,
            tol,
            out,
        }),
        Command::TokenizeSpeech {
            manifest,
            codebook,
            out,
            reduce,
        } => commands::tokenize_speech(&commands::TokenizeSpeechArgs {
            manifest,
            codebook,
            out,
            reduce,
        }),
        Command::TokenizeText {
            text,
            lexicon,
            vocab,
            vocab_out,
            out,
            upsample,
            durations,
            geometric_mean,
            seed,
        } => commands::tokenize_text(&commands::TokenizeTextArgs {
            text,
            lexicon,
            vocab,
            vocab_out,
            out,
            upsample,
            durations,
            geometric_mean,
            seed,
        }),
        Command::EstimateDurations {
            speech_corpus,
            aligned,
            out,
        } => commands::estimate_durations(&commands::EstimateDurationsArgs {
            speech_corpus,
            aligned,
            out,
        }),
        Command::Pretrain(args) => {
            let preset: Preset = args
                .preset
                .parse()
                .map_err(|e: String| anyhow::Error::new(UsageError(e)))?;
            let run_config = RunConfig::layered(preset, args.config.as_deref(), &args.overrides())
                .map_err(|e| anyhow::Error::new(UsageError(e.to_string())))?;
            commands::pretrain(&commands::PretrainArgs {
                speech_corpus: args.speech_corpus,
                text_corpus: args.text_corpus,
                out_dir: args.out_dir,
                run_config,
                speech_vocab: args.speech_vocab,
                text_vocab: args.text_vocab,
                phoneme_vocab: args.phoneme_vocab,
                durations: args.durations,
                resume: args.resume,
                stop_after: args.stop_after,
            })
        }
        Command::Analyze {
            checkpoints,
            k,
            method,
            seed,
            out_dir,
            csv,
        } => commands::analyze(&commands::AnalyzeArgs {
            checkpoints,
            k,
            method,
            seed,
            out_dir,
            csv,
        }),
    }
}

/// Input-side failures exit 2; internal/numeric failures exit 1.
fn classify(err: &anyhow::Error) -> u8 {
    use duotok_core::analysis::AnalysisError;
    use duotok_core::io::CorpusError;
    use duotok_core::masking::MaskError;
    use duotok_core::model::ModelError;
    use duotok_core::speech::SpeechError;
    use duotok_core::text::TextError;
    use duotok_core::trainer::TrainError;
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some()
            || cause.downcast_ref::<CorpusError>().is_some()
        {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<SpeechError>() {
            return match e {
                SpeechError::Config(_) | SpeechError::DimMismatch { .. } | SpeechError::Io(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<TextError>() {
            return match e {
                TextError::Config(_) | TextError::Io(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) | TrainError::Io(_) | TrainError::Text(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Config(_) | ModelError::Io(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return match e {
                AnalysisError::Config(_) | AnalysisError::Io(_) => 2,
                AnalysisError::Contract(_) => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<MaskError>() {
            return match e {
                MaskError::Config(_) => 2,
                MaskError::LengthMismatch { .. } => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
