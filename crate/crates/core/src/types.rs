//! Token-sequence types shared across the pipeline.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which vocabulary a token sequence indexes into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality tag {other:?}")),
        }
    }
}

/// A modality-tagged sequence of discrete token ids for one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub utt_id: String,
    pub modality: Modality,
    pub ids: Vec<usize>,
    /// Size of the vocabulary the ids index into; every id is strictly less.
    pub vocab_size: usize,
}

impl TokenSequence {
    pub fn new(
        utt_id: impl Into<String>,
        modality: Modality,
        ids: Vec<usize>,
        vocab_size: usize,
    ) -> Self {
        let seq = TokenSequence {
            utt_id: utt_id.into(),
            modality,
            ids,
            vocab_size,
        };
        debug_assert!(seq.ids.iter().all(|&id| id < seq.vocab_size));
        seq
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}
