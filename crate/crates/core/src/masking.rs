//! Span masking: pick span starts with a fixed probability, stretch each by
//! a normally distributed length, mask the union.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seeds::stream_rng;
use crate::types::TokenSequence;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask plan length {plan} does not match sequence length {seq}")]
    LengthMismatch { plan: usize, seq: usize },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MaskError>;

/// What a masked position is replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    MaskToken,
    RandomToken,
    Keep,
}

/// How masked positions are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionPolicy {
    /// Every masked position becomes the mask token.
    FullMask,
    /// 80% mask token, 10% uniform random token, 10% unchanged.
    EightyTenTen,
}

#[derive(Debug, Clone)]
pub struct MaskConfig {
    /// Probability that a position starts a span.
    pub start_prob: f64,
    pub span_mean: f64,
    pub span_std: f64,
    pub policy: CorruptionPolicy,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            start_prob: 0.08,
            span_mean: 10.0,
            span_std: 10.0,
            policy: CorruptionPolicy::FullMask,
        }
    }
}

/// The set of masked positions for one sequence, plus (once applied) the
/// original targets and the corruption drawn per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub len: usize,
    /// Strictly sorted, duplicate-free masked indices.
    pub positions: Vec<usize>,
    /// Original token at each masked position; filled by [`apply_mask`].
    pub targets: Vec<usize>,
    /// Corruption choice per masked position; filled by [`apply_mask`].
    pub choices: Vec<Corruption>,
}

impl MaskPlan {
    pub fn masked_count(&self) -> usize {
        self.positions.len()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.positions.len() as f64 / self.len as f64
        }
    }

    pub fn has_targets(&self) -> bool {
        self.targets.len() == self.positions.len() && !self.positions.is_empty()
    }
}

/// Select span starts independently with `start_prob`, expand each start
/// rightward by `clamp(round(normal(mean, std)), 1, remaining)`, and take the
/// union of all spans. Deterministic given the seed.
pub fn sample_mask(length: usize, config: &MaskConfig, seed: u64) -> MaskPlan {
    let mut covered = vec![false; length];
    let mut rng = stream_rng(seed, "mask", &[]);
    let normal = Normal::new(config.span_mean, config.span_std)
        .expect("span_std validated by construction");
    for start in 0..length {
        let u: f64 = rng.gen();
        if u >= config.start_prob {
            continue;
        }
        let draw: f64 = normal.sample(&mut rng);
        let remaining = length - start;
        let span = (draw.round() as i64).clamp(1, remaining as i64) as usize;
        for slot in covered[start..start + span].iter_mut() {
            *slot = true;
        }
    }
    let positions: Vec<usize> = covered
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    MaskPlan {
        len: length,
        positions,
        targets: Vec::new(),
        choices: Vec::new(),
    }
}

/// Corrupt a sequence according to a plan. Records the original targets
/// before any corruption and returns the completed plan alongside the
/// corrupted sequence. `mask_token_id` is the extra vocabulary row
/// (`vocab_size`); random replacements are uniform over the real vocabulary.
pub fn apply_mask(
    seq: &TokenSequence,
    plan: &MaskPlan,
    mask_token_id: usize,
    vocab_size: usize,
    seed: u64,
    policy: CorruptionPolicy,
) -> Result<(TokenSequence, MaskPlan)> {
    if plan.len != seq.len() {
        return Err(MaskError::LengthMismatch {
            plan: plan.len,
            seq: seq.len(),
        });
    }
    if vocab_size == 0 {
        return Err(MaskError::Config("vocab_size must be >= 1".into()));
    }
    let targets: Vec<usize> = plan.positions.iter().map(|&p| seq.ids[p]).collect();
    let mut rng = stream_rng(seed, "corrupt", &[]);
    let mut ids = seq.ids.clone();
    let mut choices = Vec::with_capacity(plan.positions.len());
    for &p in &plan.positions {
        let choice = match policy {
            CorruptionPolicy::FullMask => Corruption::MaskToken,
            CorruptionPolicy::EightyTenTen => {
                let u: f64 = rng.gen();
                if u < 0.8 {
                    Corruption::MaskToken
                } else if u < 0.9 {
                    Corruption::RandomToken
                } else {
                    Corruption::Keep
                }
            }
        };
        match choice {
            Corruption::MaskToken => ids[p] = mask_token_id,
            Corruption::RandomToken => ids[p] = rng.gen_range(0..vocab_size),
            Corruption::Keep => {}
        }
        choices.push(choice);
    }
    let corrupted = TokenSequence::new(
        seq.utt_id.clone(),
        seq.modality,
        ids,
        seq.vocab_size.max(mask_token_id + 1),
    );
    let completed = MaskPlan {
        len: plan.len,
        positions: plan.positions.clone(),
        targets,
        choices,
    };
    Ok((corrupted, completed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Modality;

    #[test]
    fn zero_length_gives_empty_plan() {
        let plan = sample_mask(0, &MaskConfig::default(), 1);
        assert_eq!(plan.len, 0);
        assert!(plan.positions.is_empty());
        assert_eq!(plan.masked_fraction(), 0.0);
    }

    #[test]
    fn saturation_masks_everything() {
        let cfg = MaskConfig {
            start_prob: 1.0,
            span_mean: 1.0,
            span_std: 0.0,
            policy: CorruptionPolicy::FullMask,
        };
        let plan = sample_mask(50, &cfg, 2);
        assert_eq!(plan.positions, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn zero_start_prob_masks_nothing() {
        let cfg = MaskConfig {
            start_prob: 0.0,
            ..MaskConfig::default()
        };
        for seed in 0..20 {
            assert!(sample_mask(200, &cfg, seed).positions.is_empty());
        }
    }

    #[test]
    fn positions_are_sorted_unique_and_in_bounds() {
        let cfg = MaskConfig::default();
        for seed in 0..50 {
            let len = 1 + (seed as usize * 37) % 300;
            let plan = sample_mask(len, &cfg, seed);
            for w in plan.positions.windows(2) {
                assert!(w[0] < w[1]);
            }
            if let Some(&last) = plan.positions.last() {
                assert!(last < len);
            }
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let cfg = MaskConfig::default();
        let a = sample_mask(500, &cfg, 42);
        let b = sample_mask(500, &cfg, 42);
        assert_eq!(a, b);
        let c = sample_mask(500, &cfg, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn apply_full_mask_example() {
        let seq = TokenSequence::new("u", Modality::Speech, vec![5, 6, 7], 50);
        let plan = MaskPlan {
            len: 3,
            positions: vec![1, 2],
            targets: vec![],
            choices: vec![],
        };
        let (corrupted, done) =
            apply_mask(&seq, &plan, 99, 50, 0, CorruptionPolicy::FullMask).unwrap();
        assert_eq!(corrupted.ids, vec![5, 99, 99]);
        assert_eq!(done.targets, vec![6, 7]);
        assert!(done.choices.iter().all(|&c| c == Corruption::MaskToken));
    }

    #[test]
    fn empty_plan_leaves_sequence_unchanged() {
        let seq = TokenSequence::new("u", Modality::Speech, vec![1, 2, 3], 10);
        let plan = sample_mask(
            3,
            &MaskConfig {
                start_prob: 0.0,
                ..MaskConfig::default()
            },
            0,
        );
        let (corrupted, _) =
            apply_mask(&seq, &plan, 10, 10, 0, CorruptionPolicy::FullMask).unwrap();
        assert_eq!(corrupted.ids, seq.ids);
    }

    #[test]
    fn length_mismatch_is_a_contract_error() {
        let seq = TokenSequence::new("u", Modality::Speech, vec![1, 2, 3], 10);
        let plan = sample_mask(4, &MaskConfig::default(), 0);
        assert!(matches!(
            apply_mask(&seq, &plan, 10, 10, 0, CorruptionPolicy::FullMask),
            Err(MaskError::LengthMismatch { plan: 4, seq: 3 })
        ));
    }

    #[test]
    fn targets_record_pre_corruption_tokens() {
        let cfg = MaskConfig {
            start_prob: 0.5,
            span_mean: 2.0,
            span_std: 1.0,
            policy: CorruptionPolicy::EightyTenTen,
        };
        let ids: Vec<usize> = (0..100).map(|i| i % 20).collect();
        let seq = TokenSequence::new("u", Modality::Speech, ids.clone(), 20);
        let plan = sample_mask(100, &cfg, 7);
        let (corrupted, done) =
            apply_mask(&seq, &plan, 20, 20, 8, CorruptionPolicy::EightyTenTen).unwrap();
        for (i, &p) in done.positions.iter().enumerate() {
            assert_eq!(done.targets[i], ids[p]);
        }
        // unmasked positions untouched
        let masked: std::collections::BTreeSet<usize> = done.positions.iter().copied().collect();
        for i in 0..100 {
            if !masked.contains(&i) {
                assert_eq!(corrupted.ids[i], ids[i]);
            }
        }
    }

    #[test]
    fn eighty_ten_ten_frequencies() {
        let n = 100_000usize;
        let ids: Vec<usize> = vec![3; n];
        let seq = TokenSequence::new("u", Modality::Speech, ids, 50);
        let plan = MaskPlan {
            len: n,
            positions: (0..n).collect(),
            targets: vec![],
            choices: vec![],
        };
        let (_, done) =
            apply_mask(&seq, &plan, 50, 50, 11, CorruptionPolicy::EightyTenTen).unwrap();
        let mut counts = [0usize; 3];
        for &c in &done.choices {
            match c {
                Corruption::MaskToken => counts[0] += 1,
                Corruption::RandomToken => counts[1] += 1,
                Corruption::Keep => counts[2] += 1,
            }
        }
        let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        assert!((freqs[0] - 0.8).abs() < 0.01);
        assert!((freqs[1] - 0.1).abs() < 0.01);
        assert!((freqs[2] - 0.1).abs() < 0.01);
    }
}
