//! Readers and writers for every artifact file format, plus the built-in
//! log-mel extractor that lets raw audio enter the pipeline.
//!
//! Binary formats are little-endian with fixed magics; text formats are
//! line-oriented. All readers and writers are exact inverses on valid input.

mod durations;
mod features;
mod lexicon;
mod logmel;
mod manifest;
mod token_corpus;
mod wav;

pub use durations::{read_duration_stats, write_duration_stats, DurationStats, RepeatDist};
pub use features::{read_feature_file, write_feature_file, FeatureMatrix, FEATURE_MAGIC};
pub use lexicon::{parse_lexicon, Lexicon};
pub use logmel::{logmel_extract, mel_filter_band, LogMel, LogMelConfig};
pub use manifest::{read_manifest, write_manifest, Manifest, ManifestEntry};
pub use token_corpus::{read_token_corpus, write_token_corpus};
pub use wav::{read_wav_16k_mono, write_wav_16k_mono};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: bad magic at byte offset 0, expected {expected:?}")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: truncated at byte offset {offset}")]
    Truncated { path: String, offset: usize },
    #[error("{path}: {msg} at byte offset {offset}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;
