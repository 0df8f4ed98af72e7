//! Subcommand implementations.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use duotok_core::analysis::{overlap_report, write_report_csv, write_report_json, ProjectionMethod};
use duotok_core::io::{
    logmel_extract, parse_lexicon, read_duration_stats, read_manifest, read_token_corpus,
    read_wav_16k_mono, write_duration_stats, write_feature_file, write_manifest,
    write_token_corpus, CorpusError, LogMelConfig, Manifest, ManifestEntry,
};
use duotok_core::model::{read_checkpoint, write_checkpoint, JointModel};
use duotok_core::speech::{
    kmeans_assign, kmeans_train, pool_frames, read_codebook, run_length_reduce, write_codebook,
    KmeansConfig,
};
use duotok_core::text::{
    build_phoneme_vocab, estimate_duration_stats_aligned, estimate_duration_stats_from_speech,
    read_phoneme_vocab, upsample, words_to_phonemes, write_phoneme_vocab, PhonemeVocab,
    RepeatSource, UpsampleConfig, UpsampleMode,
};
use duotok_core::trainer::{
    read_train_state, train, write_train_state, StepMetrics, TrainError, TrainObserver,
    TrainResult, TrainState,
};
use duotok_core::types::TokenSequence;

use crate::config::RunConfig;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

// ── extract-features ────────────────────────────────────────────────────

pub struct ExtractArgs {
    pub wav_dir: PathBuf,
    pub out_dir: PathBuf,
    pub n_mels: usize,
    pub frame_ms: usize,
    pub hop_ms: usize,
}

pub fn extract_features(args: &ExtractArgs) -> Result<()> {
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(&args.wav_dir)
        .with_context(|| format!("reading {}", args.wav_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(usage(format!("no input files in {}", args.wav_dir.display())));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let cfg = LogMelConfig {
        n_mels: args.n_mels,
        frame_ms: args.frame_ms,
        hop_ms: args.hop_ms,
        sample_rate: 16_000,
    };
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    let mut too_short = 0usize;
    for wav in &wavs {
        let stem = wav
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let result = (|| -> Result<usize> {
            let samples = read_wav_16k_mono(wav)?;
            let out = logmel_extract(&stem, &samples, &cfg)?;
            if out.too_short {
                too_short += 1;
            }
            let feat_path = args.out_dir.join(format!("{stem}.tv2f"));
            write_feature_file(&feat_path, &out.features)?;
            Ok(out.features.num_frames())
        })();
        match result {
            Ok(frames) => entries.push(ManifestEntry {
                id: stem.clone(),
                path: format!("{stem}.tv2f"),
                frames,
            }),
            Err(e) => failures.push(format!("{}: {e}", wav.display())),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        return Err(usage(format!("{} input file(s) failed", failures.len())));
    }
    write_manifest(&args.out_dir.join("manifest.jsonl"), &Manifest { entries })?;
    if too_short > 0 {
        eprintln!("warning: {too_short} file(s) shorter than one frame");
    }
    println!(
        "extracted {} feature file(s) into {}",
        wavs.len(),
        args.out_dir.display()
    );
    Ok(())
}

// ── train-codebook ──────────────────────────────────────────────────────

pub struct TrainCodebookArgs {
    pub manifest: PathBuf,
    pub k: usize,
    pub stride: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub out: PathBuf,
}

fn load_features(manifest_path: &Path) -> Result<Vec<duotok_core::io::FeatureMatrix>> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut mats = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let p = PathBuf::from(&entry.path);
        let path = if p.is_absolute() { p } else { base.join(p) };
        let mut m = duotok_core::io::read_feature_file(&path)?;
        m.utt_id = entry.id.clone();
        if m.num_frames() != entry.frames {
            return Err(usage(format!(
                "{}: manifest says {} frames, file has {}",
                path.display(),
                entry.frames,
                m.num_frames()
            )));
        }
        mats.push(m);
    }
    Ok(mats)
}

pub fn train_codebook(args: &TrainCodebookArgs) -> Result<()> {
    let mats = load_features(&args.manifest)?;
    let pooled = pool_frames(&mats, args.stride)?;
    let codebook = kmeans_train(
        &pooled,
        args.k,
        &KmeansConfig {
            max_iters: args.max_iters,
            tol: args.tol,
            seed: args.seed,
        },
    )?;
    write_codebook(&args.out, &codebook)?;
    println!(
        "codebook: k={} dim={} iterations={} inertia={:.6}",
        codebook.k(),
        codebook.feat_dim(),
        codebook.iterations_run,
        codebook.final_inertia
    );
    Ok(())
}

// ── tokenize-speech ─────────────────────────────────────────────────────

pub struct TokenizeSpeechArgs {
    pub manifest: PathBuf,
    pub codebook: PathBuf,
    pub out: PathBuf,
    pub reduce: bool,
}

pub fn tokenize_speech(args: &TokenizeSpeechArgs) -> Result<()> {
    let codebook = read_codebook(&args.codebook)?;
    let mats = load_features(&args.manifest)?;
    let mut corpus = Vec::with_capacity(mats.len());
    for m in &mats {
        let seq = kmeans_assign(&codebook, m)?;
        corpus.push(if args.reduce {
            run_length_reduce(&seq)
        } else {
            seq
        });
    }
    write_token_corpus(&args.out, &corpus)?;
    println!(
        "tokenized {} utterance(s) (k={}, reduce={})",
        corpus.len(),
        codebook.k(),
        args.reduce
    );
    Ok(())
}

// ── tokenize-text ───────────────────────────────────────────────────────

pub struct TokenizeTextArgs {
    pub text: PathBuf,
    pub lexicon: PathBuf,
    pub vocab: Option<PathBuf>,
    pub vocab_out: Option<PathBuf>,
    pub out: PathBuf,
    pub upsample: String,
    pub durations: Option<PathBuf>,
    pub geometric_mean: f64,
    pub seed: u64,
}

fn upsample_source(
    durations: Option<&Path>,
    geometric_mean: f64,
) -> Result<RepeatSource> {
    match durations {
        Some(path) => {
            let (stats, normalized) = read_duration_stats(path)?;
            if normalized > 0 {
                eprintln!("warning: {normalized} duration row(s) re-normalized");
            }
            Ok(RepeatSource::Stats(stats))
        }
        None => Ok(RepeatSource::Geometric {
            mean: geometric_mean,
        }),
    }
}

pub fn tokenize_text(args: &TokenizeTextArgs) -> Result<()> {
    let lexicon = parse_lexicon(&args.lexicon)?;
    if lexicon.duplicate_count > 0 {
        eprintln!(
            "warning: {} duplicate lexicon entries ignored",
            lexicon.duplicate_count
        );
    }
    let vocab = match &args.vocab {
        Some(path) => read_phoneme_vocab(path)?,
        None => build_phoneme_vocab(&lexicon)?,
    };
    if let Some(path) = &args.vocab_out {
        write_phoneme_vocab(path, &vocab)?;
    }
    let mode = match args.upsample.as_str() {
        "original" => UpsampleMode::Original,
        "repeat" => UpsampleMode::Repeat,
        other => return Err(usage(format!("--upsample {other:?}: expected repeat|original"))),
    };
    let source = upsample_source(args.durations.as_deref(), args.geometric_mean)?;
    let up_cfg = UpsampleConfig::new(mode, source, args.seed)?;

    let text = std::fs::read_to_string(&args.text)
        .with_context(|| format!("reading {}", args.text.display()))?;
    let mut corpus = Vec::new();
    let mut oov_total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        let out = words_to_phonemes(&format!("t{i:06}"), &words, &lexicon, &vocab)?;
        oov_total += out.oov_count;
        corpus.push(upsample(&out.seq, &up_cfg, Some(&vocab)));
    }
    write_token_corpus(&args.out, &corpus)?;
    println!(
        "tokenized {} sentence(s), vocabulary {} positional phonemes, {} OOV word(s) dropped",
        corpus.len(),
        vocab.len(),
        oov_total
    );
    Ok(())
}

// ── estimate-durations ──────────────────────────────────────────────────

pub struct EstimateDurationsArgs {
    pub speech_corpus: Option<PathBuf>,
    pub aligned: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn estimate_durations(args: &EstimateDurationsArgs) -> Result<()> {
    let stats = match (&args.speech_corpus, &args.aligned) {
        (Some(corpus_path), None) => {
            let corpus = read_token_corpus(corpus_path)?;
            estimate_duration_stats_from_speech(&corpus)?
        }
        (None, Some(aligned_path)) => {
            let text = std::fs::read_to_string(aligned_path)
                .with_context(|| format!("reading {}", aligned_path.display()))?;
            let mut pairs = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (phoneme, count) = line.split_once('\t').ok_or_else(|| {
                    usage(format!(
                        "{}:{}: expected PHONEME<TAB>count",
                        aligned_path.display(),
                        i + 1
                    ))
                })?;
                let count: u32 = count.trim().parse().map_err(|_| {
                    usage(format!(
                        "{}:{}: bad count {count:?}",
                        aligned_path.display(),
                        i + 1
                    ))
                })?;
                pairs.push((phoneme.to_owned(), count));
            }
            estimate_duration_stats_aligned(&pairs)?
        }
        _ => {
            return Err(usage(
                "exactly one of --speech-corpus (mode A) or --aligned (mode B) is required",
            ))
        }
    };
    write_duration_stats(&args.out, &stats)?;
    println!(
        "duration stats: mean repeat {:.3}, {} per-phoneme distribution(s)",
        stats.fallback.mean(),
        stats.per_phoneme.len()
    );
    Ok(())
}

// ── pretrain ────────────────────────────────────────────────────────────

pub struct PretrainArgs {
    pub speech_corpus: PathBuf,
    pub text_corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub run_config: RunConfig,
    pub speech_vocab: Option<usize>,
    pub text_vocab: Option<usize>,
    pub phoneme_vocab: Option<PathBuf>,
    pub durations: Option<PathBuf>,
    pub resume: bool,
    pub stop_after: Option<u64>,
}

struct RunObserver {
    out_dir: PathBuf,
    metrics: std::io::BufWriter<std::fs::File>,
}

impl RunObserver {
    fn open(out_dir: &Path, append: bool) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .truncate(!append)
            .write(true)
            .open(out_dir.join("metrics.jsonl"))?;
        Ok(RunObserver {
            out_dir: out_dir.to_path_buf(),
            metrics: std::io::BufWriter::new(file),
        })
    }
}

impl TrainObserver for RunObserver {
    fn on_step(&mut self, metrics: &StepMetrics) -> TrainResult<()> {
        let line = serde_json::to_string(metrics).expect("metrics serialize");
        writeln!(self.metrics, "{line}").map_err(|e| TrainError::Io(CorpusError::Io(e)))?;
        Ok(())
    }

    fn on_checkpoint(
        &mut self,
        step: u64,
        model: &JointModel,
        state: &TrainState,
    ) -> TrainResult<()> {
        self.metrics
            .flush()
            .map_err(|e| TrainError::Io(CorpusError::Io(e)))?;
        let ckpt = self.out_dir.join(format!("checkpoint_{step:06}.tv2m"));
        let opt = self.out_dir.join(format!("optimizer_{step:06}.tv2s"));
        write_checkpoint(&ckpt, model)?;
        write_train_state(&opt, model, state)?;
        Ok(())
    }
}

fn infer_vocab(corpus: &[TokenSequence]) -> usize {
    corpus
        .iter()
        .flat_map(|s| s.ids.iter().copied())
        .max()
        .map(|m| m + 1)
        .unwrap_or(1)
}

/// Find the highest-step optimizer/checkpoint pair in a run directory.
fn latest_checkpoint(dir: &Path) -> Result<(u64, PathBuf, PathBuf)> {
    let mut best: Option<u64> = None;
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(num) = name
            .strip_prefix("optimizer_")
            .and_then(|s| s.strip_suffix(".tv2s"))
        {
            if let Ok(step) = num.parse::<u64>() {
                best = Some(best.map_or(step, |b: u64| b.max(step)));
            }
        }
    }
    let step = best.ok_or_else(|| usage(format!("no optimizer state found in {}", dir.display())))?;
    let ckpt = dir.join(format!("checkpoint_{step:06}.tv2m"));
    let opt = dir.join(format!("optimizer_{step:06}.tv2s"));
    if !ckpt.exists() {
        return Err(usage(format!("{} is missing", ckpt.display())));
    }
    Ok((step, ckpt, opt))
}

pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let cfg = &args.run_config;
    let text_ratio: u32 = cfg.parse("train.text_ratio")?;

    let speech = read_token_corpus(&args.speech_corpus)?;
    let text = match (&args.text_corpus, text_ratio) {
        (Some(path), _) => read_token_corpus(path)?,
        (None, 0) => Vec::new(),
        (None, _) => {
            return Err(usage(
                "--text-corpus is required unless train.text_ratio=0",
            ))
        }
    };

    let phoneme_vocab: Option<PhonemeVocab> = match &args.phoneme_vocab {
        Some(path) => Some(read_phoneme_vocab(path)?),
        None => None,
    };
    let speech_vocab = args.speech_vocab.unwrap_or_else(|| infer_vocab(&speech));
    let text_vocab = args
        .text_vocab
        .or_else(|| phoneme_vocab.as_ref().map(|v| v.len()))
        .unwrap_or_else(|| infer_vocab(&text));

    let source = upsample_source(args.durations.as_deref(), cfg.parse("upsample.geometric_mean")?)?;
    let train_cfg = cfg.train_config(source)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let config_path = args.out_dir.join("run.config");
    let (mut model, state) = if args.resume {
        let stored = crate::config::parse_config_file(&config_path)
            .map_err(|e| usage(format!("cannot resume: {e}")))?;
        if stored != cfg.values {
            return Err(usage(
                "resume config does not match the stored run.config; \
                 rerun with identical settings",
            ));
        }
        let (step, ckpt, opt) = latest_checkpoint(&args.out_dir)?;
        let mut model = read_checkpoint(&ckpt)?;
        let (state, masters) = read_train_state(&opt)?;
        if state.step != step {
            return Err(usage(format!(
                "optimizer state step {} does not match file name step {step}",
                state.step
            )));
        }
        for (name, tensor) in masters {
            *model.param_mut(&name) = tensor;
        }
        println!("resuming from step {step}");
        (model, state)
    } else {
        if config_path.exists() {
            return Err(usage(format!(
                "{} already exists; use --resume to continue or point --out-dir elsewhere",
                config_path.display()
            )));
        }
        cfg.write(&config_path)?;
        let model_cfg = cfg.model_config(speech_vocab, text_vocab)?;
        let model = JointModel::init(model_cfg, cfg.seed()?)?;
        (model, TrainState::default())
    };

    let mut observer = RunObserver::open(&args.out_dir, args.resume)?;
    let final_state = train(
        &mut model,
        &speech,
        &text,
        phoneme_vocab.as_ref(),
        &train_cfg,
        state,
        args.stop_after,
        &mut observer,
    )?;
    println!(
        "trained to step {} (speech mean loss {:.4} over {} steps, text mean loss {:.4} over {} steps)",
        final_state.step,
        final_state.speech_agg.mean_loss(),
        final_state.speech_agg.steps,
        final_state.text_agg.mean_loss(),
        final_state.text_agg.steps,
    );
    Ok(())
}

// ── analyze ─────────────────────────────────────────────────────────────

pub struct AnalyzeArgs {
    pub checkpoints: Vec<PathBuf>,
    pub k: usize,
    pub method: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub csv: bool,
}

fn step_from_name(path: &Path, fallback: u64) -> u64 {
    path.file_stem()
        .and_then(|s| s.to_string_lossy().rsplit('_').next().map(str::to_owned))
        .and_then(|s| s.parse().ok())
        .unwrap_or(fallback)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let method: ProjectionMethod = args
        .method
        .parse()
        .map_err(|e: String| usage(e))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut rates = Vec::new();
    for (i, ckpt) in args.checkpoints.iter().enumerate() {
        if !ckpt.exists() {
            return Err(usage(format!("checkpoint {} does not exist", ckpt.display())));
        }
        let model = read_checkpoint(ckpt)?;
        let step = step_from_name(ckpt, i as u64);
        let report = overlap_report(&model, step, args.k, method, args.seed)?;
        let json_path = args.out_dir.join(format!("report_{step:06}.json"));
        write_report_json(&json_path, &report)?;
        if args.csv {
            write_report_csv(&args.out_dir.join(format!("report_{step:06}.csv")), &report)?;
        }
        println!(
            "step {step}: mixing_rate={:.4} (k={}) -> {}",
            report.mixing_rate,
            args.k,
            json_path.display()
        );
        rates.push((step, report.mixing_rate));
    }
    if rates.len() > 1 {
        let first = rates.first().expect("non-empty");
        let last = rates.last().expect("non-empty");
        println!(
            "mixing rate {} from {:.4} (step {}) to {:.4} (step {})",
            if last.1 > first.1 { "increased" } else { "did not increase" },
            first.1,
            first.0,
            last.1,
            last.0
        );
    }
    Ok(())
}

