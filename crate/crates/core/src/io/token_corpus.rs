//! Token corpus files: one utterance per line,
//! "id<TAB>speech|text<TAB>space-separated integer ids".

use std::path::Path;

use super::{CorpusError, Result};
use crate::types::{Modality, TokenSequence};

pub fn write_token_corpus(path: &Path, corpus: &[TokenSequence]) -> Result<()> {
    let mut out = String::new();
    for seq in corpus {
        out.push_str(&seq.utt_id);
        out.push('\t');
        out.push_str(seq.modality.as_str());
        out.push('\t');
        let ids: Vec<String> = seq.ids.iter().map(|id| id.to_string()).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a token corpus, order-preserving. The file format carries no
/// vocabulary size; each sequence gets `max id in its modality + 1`, and
/// consumers validate against their actual vocabulary.
pub fn read_token_corpus(path: &Path) -> Result<Vec<TokenSequence>> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut parsed: Vec<(String, Modality, Vec<usize>)> = Vec::new();
    let mut max_id = [0usize; 2]; // per modality
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| CorpusError::Parse {
            path: p.clone(),
            line: i + 1,
            msg,
        };
        let mut fields = line.splitn(3, '\t');
        let id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| parse_err("missing utterance id".into()))?;
        let modality: Modality = fields
            .next()
            .ok_or_else(|| parse_err("missing modality tag".into()))?
            .parse()
            .map_err(|e: String| parse_err(e))?;
        let ids_field = fields.next().unwrap_or("");
        let mut ids = Vec::new();
        for tok in ids_field.split_whitespace() {
            let v: usize = tok
                .parse()
                .map_err(|_| parse_err(format!("non-integer token {tok:?}")))?;
            ids.push(v);
        }
        let slot = match modality {
            Modality::Speech => &mut max_id[0],
            Modality::Text => &mut max_id[1],
        };
        if let Some(&m) = ids.iter().max() {
            *slot = (*slot).max(m);
        }
        parsed.push((id.to_owned(), modality, ids));
    }
    Ok(parsed
        .into_iter()
        .map(|(id, modality, ids)| {
            let vocab = match modality {
                Modality::Speech => max_id[0] + 1,
                Modality::Text => max_id[1] + 1,
            };
            TokenSequence::new(id, modality, ids, vocab)
        })
        .collect())
}
