//! Epoch batching: seeded shuffle, random-window crop to max_len, greedy
//! token-budget packing. Every sequence appears exactly once per epoch.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{TrainError, TrainResult};
use crate::seeds::stream_rng;
use crate::types::TokenSequence;

#[derive(Debug, Clone)]
pub struct Batch {
    pub seqs: Vec<TokenSequence>,
}

impl Batch {
    pub fn token_count(&self) -> usize {
        self.seqs.iter().map(|s| s.len()).sum()
    }
}

/// Crop a sequence to a random `max_len` window; the window position is a
/// deterministic function of (seed, epoch, utterance id).
fn crop(seq: &TokenSequence, max_len: usize, seed: u64, epoch: u64) -> TokenSequence {
    if seq.len() <= max_len {
        return seq.clone();
    }
    let mut rng = stream_rng(seed, "crop", &[&epoch.to_string(), &seq.utt_id]);
    let start = rng.gen_range(0..=seq.len() - max_len);
    TokenSequence::new(
        seq.utt_id.clone(),
        seq.modality,
        seq.ids[start..start + max_len].to_vec(),
        seq.vocab_size,
    )
}

/// Build one epoch's batches. The shuffle order depends on (seed, stream
/// label, epoch); packing is greedy in shuffled order.
pub fn epoch_batches(
    corpus: &[TokenSequence],
    tokens_per_batch: usize,
    max_len: usize,
    seed: u64,
    stream: &str,
    epoch: u64,
) -> TrainResult<Vec<Batch>> {
    if corpus.is_empty() {
        return Err(TrainError::Config(format!(
            "empty corpus for stream {stream:?}"
        )));
    }
    if tokens_per_batch == 0 {
        return Err(TrainError::Config("tokens_per_batch must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = stream_rng(seed, "shuffle", &[stream, &epoch.to_string()]);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut current: Vec<TokenSequence> = Vec::new();
    let mut tokens = 0usize;
    for idx in order {
        let seq = crop(&corpus[idx], max_len, seed, epoch);
        if seq.len() > tokens_per_batch {
            return Err(TrainError::Config(format!(
                "sequence {} has {} tokens after cropping, exceeding the batch budget {}",
                seq.utt_id,
                seq.len(),
                tokens_per_batch
            )));
        }
        if tokens + seq.len() > tokens_per_batch && !current.is_empty() {
            batches.push(Batch {
                seqs: std::mem::take(&mut current),
            });
            tokens = 0;
        }
        tokens += seq.len();
        current.push(seq);
    }
    if !current.is_empty() {
        batches.push(Batch { seqs: current });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;

    fn seqs(lens: &[usize]) -> Vec<TokenSequence> {
        lens.iter()
            .enumerate()
            .map(|(i, &l)| {
                TokenSequence::new(format!("u{i}"), Modality::Speech, vec![1; l], 5)
            })
            .collect()
    }

    #[test]
    fn greedy_packing_example() {
        // The shuffle permutes [10,10,10]; all orders pack to [10,10],[10].
        let batches = epoch_batches(&seqs(&[10, 10, 10]), 25, 100, 0, "speech", 0).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].token_count(), 20);
        assert_eq!(batches[1].token_count(), 10);
    }

    #[test]
    fn big_budget_gives_one_batch() {
        let batches = epoch_batches(&seqs(&[10, 10, 10]), 1000, 100, 0, "speech", 0).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].seqs.len(), 3);
    }

    #[test]
    fn epoch_covers_the_corpus_exactly_once() {
        let lens: Vec<usize> = (0..1000).map(|i| (i * 7) % 40).collect();
        let corpus = seqs(&lens);
        let batches = epoch_batches(&corpus, 256, 100, 9, "speech", 3).unwrap();
        let mut seen: Vec<String> = batches
            .iter()
            .flat_map(|b| b.seqs.iter().map(|s| s.utt_id.clone()))
            .collect();
        seen.sort();
        let mut want: Vec<String> = corpus.iter().map(|s| s.utt_id.clone()).collect();
        want.sort();
        assert_eq!(seen, want);
        for b in &batches {
            assert!(b.token_count() <= 256 || b.seqs.len() == 1);
        }
    }

    #[test]
    fn shuffle_depends_on_epoch_and_is_deterministic() {
        let corpus = seqs(&[5, 6, 7, 8, 9, 10, 11]);
        let a = epoch_batches(&corpus, 16, 100, 1, "speech", 0).unwrap();
        let b = epoch_batches(&corpus, 16, 100, 1, "speech", 0).unwrap();
        let ids = |bs: &[Batch]| -> Vec<String> {
            bs.iter()
                .flat_map(|b| b.seqs.iter().map(|s| s.utt_id.clone()))
                .collect()
        };
        assert_eq!(ids(&a), ids(&b));
        let c = epoch_batches(&corpus, 16, 100, 1, "speech", 1).unwrap();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn crops_are_stable_within_an_epoch() {
        let long = TokenSequence::new("long", Modality::Speech, (0..50).collect(), 50);
        let a = crop(&long, 8, 3, 2);
        let b = crop(&long, 8, 3, 2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let c = crop(&long, 8, 3, 5);
        // a different epoch usually picks a different window
        assert_eq!(c.len(), 8);
    }

    #[test]
    fn oversized_sequence_is_a_config_error() {
        let corpus = seqs(&[30]);
        assert!(matches!(
            epoch_batches(&corpus, 10, 100, 0, "speech", 0),
            Err(TrainError::Config(_))
        ));
        // but cropping first can save it
        assert!(epoch_batches(&corpus, 10, 10, 0, "speech", 0).is_ok());
    }

    #[test]
    fn empty_corpus_is_a_config_error() {
        assert!(matches!(
            epoch_batches(&[], 10, 10, 0, "speech", 0),
            Err(TrainError::Config(_))
        ));
    }
}
