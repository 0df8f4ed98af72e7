//! Text tokenizer: words to positional-dependent phonemes via a lexicon,
//! plus stochastic up-sampling that stretches phoneme sequences to
//! speech-like lengths.

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::io::{CorpusError, DurationStats, Lexicon, RepeatDist};
use crate::seeds::stream_rng;
use crate::types::{Modality, TokenSequence};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, TextError>;

/// Bijective map between positional phonemes (e.g. "AH_I") and contiguous
/// integer ids starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeVocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl PhonemeVocab {
    fn from_names(names: Vec<String>) -> Self {
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        PhonemeVocab { names, ids }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(|s| s.as_str())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Within-word position tags: begin, inside, end, singleton.
fn tag_word_phonemes(phones: &[String]) -> Vec<String> {
    match phones.len() {
        0 => Vec::new(),
        1 => vec![format!("{}_S", phones[0])],
        n => phones
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let tag = if i == 0 {
                    "B"
                } else if i == n - 1 {
                    "E"
                } else {
                    "I"
                };
                format!("{p}_{tag}")
            })
            .collect(),
    }
}

/// Enumerate every positional phoneme actually realizable from the lexicon,
/// sorted lexicographically and numbered from 0.
pub fn build_phoneme_vocab(lexicon: &Lexicon) -> Result<PhonemeVocab> {
    if lexicon.is_empty() {
        return Err(TextError::Config("empty lexicon".into()));
    }
    let mut names = BTreeSet::new();
    for (_, phones) in lexicon.entries() {
        for tagged in tag_word_phonemes(phones) {
            names.insert(tagged);
        }
    }
    Ok(PhonemeVocab::from_names(names.into_iter().collect()))
}

/// Tokenization result; out-of-vocabulary words are dropped, not errors.
#[derive(Debug, Clone)]
pub struct TokenizedText {
    pub seq: TokenSequence,
    pub oov_count: usize,
}

/// Convert a word sequence to positional phoneme ids. Lookup is case-folded;
/// words missing from the lexicon are dropped and counted.
pub fn words_to_phonemes(
    utt_id: &str,
    words: &[&str],
    lexicon: &Lexicon,
    vocab: &PhonemeVocab,
) -> Result<TokenizedText> {
    let mut ids = Vec::new();
    let mut oov_count = 0usize;
    for word in words {
        let Some(phones) = lexicon.get(word) else {
            oov_count += 1;
            continue;
        };
        for tagged in tag_word_phonemes(phones) {
            let id = vocab.id(&tagged).ok_or_else(|| {
                TextError::Config(format!(
                    "positional phoneme {tagged:?} missing from vocabulary; \
                     was the vocabulary built from this lexicon?"
                ))
            })?;
            ids.push(id);
        }
    }
    Ok(TokenizedText {
        seq: TokenSequence::new(utt_id, Modality::Text, ids, vocab.len()),
        oov_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    /// Identity: keep original phoneme sequences.
    Original,
    /// Repeat each token by a draw from its duration distribution.
    Repeat,
}

/// Where repeat counts come from.
#[derive(Debug, Clone)]
pub enum RepeatSource {
    Stats(DurationStats),
    /// 1 + Geometric; `mean` >= 1 is the expected repeat count.
    Geometric { mean: f64 },
}

#[derive(Debug, Clone)]
pub struct UpsampleConfig {
    pub mode: UpsampleMode,
    pub source: RepeatSource,
    pub seed: u64,
}

impl UpsampleConfig {
    pub fn new(mode: UpsampleMode, source: RepeatSource, seed: u64) -> Result<Self> {
        if let RepeatSource::Geometric { mean } = source {
            if !(mean >= 1.0) {
                return Err(TextError::Config(format!(
                    "geometric mean repeat must be >= 1, got {mean}"
                )));
            }
        }
        Ok(UpsampleConfig { mode, source, seed })
    }

    pub fn original(seed: u64) -> Self {
        UpsampleConfig {
            mode: UpsampleMode::Original,
            source: RepeatSource::Geometric { mean: 1.0 },
            seed,
        }
    }
}

fn sample_geometric<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = rng.gen();
    let failures = ((1.0 - u).ln() / (1.0 - p).ln()).floor();
    1 + failures.min(1_000_000.0) as u32
}

/// Stochastically repeat each token of a text sequence. The RNG stream is
/// derived from `(config seed, utterance id)` so results are independent of
/// the order sentences are processed in.
///
/// Token identities are never reordered, inserted, or deleted; only
/// multiplicities change.
pub fn upsample(
    seq: &TokenSequence,
    config: &UpsampleConfig,
    vocab: Option<&PhonemeVocab>,
) -> TokenSequence {
    debug_assert_eq!(seq.modality, Modality::Text);
    if config.mode == UpsampleMode::Original {
        return seq.clone();
    }
    let mut rng = stream_rng(config.seed, "upsample", &[&seq.utt_id]);
    let mut ids = Vec::with_capacity(seq.ids.len() * 3);
    for &id in &seq.ids {
        let r = match &config.source {
            RepeatSource::Geometric { mean } => sample_geometric(*mean, &mut rng),
            RepeatSource::Stats(stats) => {
                let dist = vocab
                    .and_then(|v| v.name(id))
                    .map(|name| stats.dist_for(name))
                    .unwrap_or(&stats.fallback);
                dist.sample(&mut rng)
            }
        };
        ids.extend(std::iter::repeat(id).take(r.max(1) as usize));
    }
    TokenSequence::new(seq.utt_id.clone(), seq.modality, ids, seq.vocab_size)
}

/// Mode A duration estimation: the run-length histogram of a speech-token
/// corpus becomes the DEFAULT distribution applied to every phoneme.
pub fn estimate_duration_stats_from_speech(corpus: &[TokenSequence]) -> Result<DurationStats> {
    let mut histogram: HashMap<u32, f64> = HashMap::new();
    let mut total_runs = 0usize;
    for seq in corpus {
        let mut i = 0usize;
        while i < seq.ids.len() {
            let mut j = i + 1;
            while j < seq.ids.len() && seq.ids[j] == seq.ids[i] {
                j += 1;
            }
            *histogram.entry((j - i) as u32).or_insert(0.0) += 1.0;
            total_runs += 1;
            i = j;
        }
    }
    if total_runs == 0 {
        return Err(TextError::Config(
            "no token runs found; cannot estimate duration statistics".into(),
        ));
    }
    let pairs: Vec<(u32, f64)> = histogram.into_iter().collect();
    let fallback = RepeatDist::new(pairs).map_err(TextError::Io)?;
    Ok(DurationStats::uniform_fallback(fallback))
}

/// Mode B duration estimation from externally aligned (phoneme, repeat
/// count) pairs; also pools everything into the DEFAULT distribution.
pub fn estimate_duration_stats_aligned(durations: &[(String, u32)]) -> Result<DurationStats> {
    if durations.is_empty() {
        return Err(TextError::Config("no aligned durations supplied".into()));
    }
    let mut per: HashMap<String, HashMap<u32, f64>> = HashMap::new();
    let mut pooled: HashMap<u32, f64> = HashMap::new();
    for (phoneme, count) in durations {
        if *count < 1 {
            return Err(TextError::Config(format!(
                "aligned duration for {phoneme:?} must be >= 1, got {count}"
            )));
        }
        *per.entry(phoneme.clone()).or_default().entry(*count).or_insert(0.0) += 1.0;
        *pooled.entry(*count).or_insert(0.0) += 1.0;
    }
    let mut per_phoneme = std::collections::BTreeMap::new();
    for (phoneme, hist) in per {
        let dist = RepeatDist::new(hist.into_iter().collect()).map_err(TextError::Io)?;
        per_phoneme.insert(phoneme, dist);
    }
    let fallback = RepeatDist::new(pooled.into_iter().collect()).map_err(TextError::Io)?;
    Ok(DurationStats {
        per_phoneme,
        fallback,
    })
}

// ── vocabulary file: "PHONEME_TAG<TAB>id" lines ─────────────────────────

pub fn write_phoneme_vocab(path: &Path, vocab: &PhonemeVocab) -> Result<()> {
    let mut out = String::new();
    for (id, name) in vocab.names.iter().enumerate() {
        out.push_str(name);
        out.push('\t');
        out.push_str(&id.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(CorpusError::Io)?;
    Ok(())
}

pub fn read_phoneme_vocab(path: &Path) -> Result<PhonemeVocab> {
    let text = std::fs::read_to_string(path).map_err(CorpusError::Io)?;
    let p = path.display().to_string();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| {
            TextError::Io(CorpusError::Parse {
                path: p.clone(),
                line: i + 1,
                msg,
            })
        };
        let (name, id) = line
            .split_once('\t')
            .ok_or_else(|| err("expected PHONEME_TAG<TAB>id".into()))?;
        let id: usize = id
            .parse()
            .map_err(|_| err(format!("bad id {id:?}")))?;
        pairs.push((id, name.to_owned()));
    }
    pairs.sort();
    for (expect, (id, _)) in pairs.iter().enumerate() {
        if *id != expect {
            return Err(TextError::Config(format!(
                "vocabulary ids not contiguous from 0: found id {id} at position {expect}"
            )));
        }
    }
    Ok(PhonemeVocab::from_names(
        pairs.into_iter().map(|(_, n)| n).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speech::run_length_reduce;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_lexicon() -> Lexicon {
        Lexicon::from_entries([
            ("HELLO", vec!["HH", "AH", "L", "OW"]),
            ("A", vec!["AH"]),
            ("TO", vec!["T", "UW"]),
        ])
    }

    #[test]
    fn position_tags_follow_the_convention() {
        let lex = toy_lexicon();
        let vocab = build_phoneme_vocab(&lex).unwrap();
        let out = words_to_phonemes("u", &["HELLO"], &lex, &vocab).unwrap();
        let names: Vec<&str> = out.seq.ids.iter().map(|&i| vocab.name(i).unwrap()).collect();
        assert_eq!(names, ["HH_B", "AH_I", "L_I", "OW_E"]);

        let out = words_to_phonemes("u", &["A"], &lex, &vocab).unwrap();
        let names: Vec<&str> = out.seq.ids.iter().map(|&i| vocab.name(i).unwrap()).collect();
        assert_eq!(names, ["AH_S"]);
    }

    #[test]
    fn vocab_enumeration_is_sorted_and_minimal() {
        let lex = Lexicon::from_entries([("A", vec!["AH"]), ("TO", vec!["T", "UW"])]);
        let vocab = build_phoneme_vocab(&lex).unwrap();
        assert_eq!(vocab.len(), 3);
        assert_eq!(vocab.names(), ["AH_S", "T_B", "UW_E"].map(String::from));
        // deterministic rebuild
        assert_eq!(build_phoneme_vocab(&lex).unwrap(), vocab);
    }

    #[test]
    fn vocab_size_is_bounded_by_four_positions_per_base_phoneme() {
        let mut entries = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in 0..300 {
            let len = rng.gen_range(1..6);
            let phones: Vec<String> =
                (0..len).map(|_| format!("P{}", rng.gen_range(0..40))).collect();
            entries.push((format!("W{w}"), phones));
        }
        let lex = Lexicon::from_entries(entries);
        let base = lex.inventory().len();
        let vocab = build_phoneme_vocab(&lex).unwrap();
        assert!(vocab.len() <= 4 * base);
        assert!(vocab.len() >= base);
    }

    #[test]
    fn empty_lexicon_is_a_config_error() {
        let lex = Lexicon::from_entries(Vec::<(&str, Vec<&str>)>::new());
        assert!(matches!(
            build_phoneme_vocab(&lex),
            Err(TextError::Config(_))
        ));
    }

    #[test]
    fn sentence_length_is_the_sum_of_word_phoneme_counts() {
        let lex = toy_lexicon();
        let vocab = build_phoneme_vocab(&lex).unwrap();
        let out = words_to_phonemes("u", &["HELLO", "TO", "A"], &lex, &vocab).unwrap();
        assert_eq!(out.seq.len(), 4 + 2 + 1);
        assert_eq!(out.oov_count, 0);
        // hand-constructed lookup
        let want: Vec<usize> = ["HH_B", "AH_I", "L_I", "OW_E", "T_B", "UW_E", "AH_S"]
            .iter()
            .map(|n| vocab.id(n).unwrap())
            .collect();
        assert_eq!(out.seq.ids, want);
    }

    #[test]
    fn oov_words_are_dropped_and_counted() {
        let lex = toy_lexicon();
        let vocab = build_phoneme_vocab(&lex).unwrap();
        let out = words_to_phonemes("u", &["HELLO", "XYZZY", "a"], &lex, &vocab).unwrap();
        assert_eq!(out.oov_count, 1);
        assert_eq!(out.seq.len(), 5); // HELLO(4) + a(1), case-folded
    }

    #[test]
    fn upsample_original_is_identity() {
        let seq = TokenSequence::new("u", Modality::Text, vec![3, 1, 4, 1], 10);
        let cfg = UpsampleConfig::original(7);
        assert_eq!(upsample(&seq, &cfg, None), seq);
    }

    #[test]
    fn degenerate_stats_repeat_deterministically() {
        let seq = TokenSequence::new("u", Modality::Text, vec![7, 9], 10);
        let stats = DurationStats::uniform_fallback(RepeatDist::degenerate(3));
        let cfg = UpsampleConfig::new(UpsampleMode::Repeat, RepeatSource::Stats(stats), 0)
            .unwrap();
        let out = upsample(&seq, &cfg, None);
        assert_eq!(out.ids, vec![7, 7, 7, 9, 9, 9]);
    }

    #[test]
    fn geometric_fallback_hits_its_mean() {
        let ids: Vec<usize> = (0..10_000).map(|i| i % 40).collect();
        let seq = TokenSequence::new("u", Modality::Text, ids, 40);
        let cfg = UpsampleConfig::new(
            UpsampleMode::Repeat,
            RepeatSource::Geometric { mean: 4.0 },
            123,
        )
        .unwrap();
        let out = upsample(&seq, &cfg, None);
        let ratio = out.len() as f64 / seq.len() as f64;
        assert!((ratio - 4.0).abs() / 4.0 < 0.02, "mean repeat {ratio}");
    }

    #[test]
    fn geometric_mean_below_one_is_rejected() {
        assert!(UpsampleConfig::new(
            UpsampleMode::Repeat,
            RepeatSource::Geometric { mean: 0.5 },
            0
        )
        .is_err());
    }

    #[test]
    fn upsample_only_changes_multiplicities() {
        let dedup = |ids: &[usize]| {
            let mut out: Vec<usize> = Vec::new();
            for &id in ids {
                if out.last() != Some(&id) {
                    out.push(id);
                }
            }
            out
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let len = rng.gen_range(0..40);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..12)).collect();
            let seq = TokenSequence::new(format!("u{trial}"), Modality::Text, ids.clone(), 12);
            let cfg = UpsampleConfig::new(
                UpsampleMode::Repeat,
                RepeatSource::Geometric { mean: 2.5 },
                trial,
            )
            .unwrap();
            let out = upsample(&seq, &cfg, None);
            assert!(out.len() >= ids.len());
            assert_eq!(dedup(&out.ids), dedup(&ids));
            for v in 0..12 {
                let before = ids.iter().filter(|&&x| x == v).count();
                let after = out.ids.iter().filter(|&&x| x == v).count();
                assert!(after >= before);
                assert!(before > 0 || after == 0);
            }
        }
    }

    #[test]
    fn reduce_after_upsample_recovers_duplicate_free_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..200 {
            // duplicate-free adjacent ids
            let len = rng.gen_range(0..30);
            let mut ids: Vec<usize> = Vec::with_capacity(len);
            while ids.len() < len {
                let id = rng.gen_range(0..9);
                if ids.last() != Some(&id) {
                    ids.push(id);
                }
            }
            let seq = TokenSequence::new(format!("u{trial}"), Modality::Text, ids, 9);
            let cfg = UpsampleConfig::new(
                UpsampleMode::Repeat,
                RepeatSource::Geometric { mean: 3.0 },
                trial,
            )
            .unwrap();
            let up = upsample(&seq, &cfg, None);
            let mut speechish = up.clone();
            speechish.modality = Modality::Speech;
            let red = run_length_reduce(&speechish);
            assert_eq!(red.ids, seq.ids);
        }
    }

    #[test]
    fn upsample_is_deterministic_per_utterance() {
        let seq = TokenSequence::new("utt42", Modality::Text, vec![1, 2, 3, 4, 5], 6);
        let cfg = UpsampleConfig::new(
            UpsampleMode::Repeat,
            RepeatSource::Geometric { mean: 3.0 },
            9,
        )
        .unwrap();
        assert_eq!(upsample(&seq, &cfg, None), upsample(&seq, &cfg, None));
    }

    #[test]
    fn mode_a_run_length_histogram() {
        let corpus = vec![TokenSequence::new(
            "u",
            Modality::Speech,
            vec![1, 1, 2, 2, 2, 3],
            4,
        )];
        let stats = estimate_duration_stats_from_speech(&corpus).unwrap();
        let pairs = stats.fallback.pairs();
        assert_eq!(pairs.len(), 3);
        for &(c, p) in pairs {
            assert!([1, 2, 3].contains(&c));
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }

        let uniform = vec![TokenSequence::new(
            "u",
            Modality::Speech,
            vec![5, 5, 5, 5, 6, 6, 6, 6],
            7,
        )];
        let stats = estimate_duration_stats_from_speech(&uniform).unwrap();
        assert_eq!(stats.fallback.pairs(), &[(4, 1.0)]);

        assert!(estimate_duration_stats_from_speech(&[]).is_err());
    }

    #[test]
    fn mode_a_recovers_geometric_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut corpus = Vec::new();
        let mut runs = 0usize;
        let mut u = 0usize;
        while runs < 10_000 {
            let mut ids = Vec::new();
            let mut tok = 0usize;
            for _ in 0..50 {
                let r = sample_geometric(4.0, &mut rng);
                ids.extend(std::iter::repeat(tok % 97).take(r as usize));
                tok += 1;
                runs += 1;
            }
            corpus.push(TokenSequence::new(
                format!("u{u}"),
                Modality::Speech,
                ids,
                97,
            ));
            u += 1;
        }
        let stats = estimate_duration_stats_from_speech(&corpus).unwrap();
        assert!((stats.fallback.mean() - 4.0).abs() / 4.0 < 0.05);
    }

    #[test]
    fn mode_b_groups_per_phoneme() {
        let stats = estimate_duration_stats_aligned(&[
            ("AH_I".into(), 3),
            ("AH_I".into(), 3),
            ("AH_I".into(), 5),
            ("T_B".into(), 2),
        ])
        .unwrap();
        let ah = stats.dist_for("AH_I");
        assert_eq!(ah.pairs().len(), 2);
        assert!((ah.mean() - (3.0 * 2.0 + 5.0) / 3.0).abs() < 1e-12);
        assert_eq!(stats.dist_for("T_B").pairs(), &[(2, 1.0)]);
        // unseen phoneme falls back to the pooled distribution
        assert!((stats.dist_for("ZZ_E").mean() - 13.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_file_round_trip() {
        let lex = toy_lexicon();
        let vocab = build_phoneme_vocab(&lex).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        write_phoneme_vocab(&path, &vocab).unwrap();
        assert_eq!(read_phoneme_vocab(&path).unwrap(), vocab);
    }
}
