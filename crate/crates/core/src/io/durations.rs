//! Phoneme repeat-count statistics: TSV "PHONEME<TAB>count:prob,...", with a
//! DEFAULT row for unseen phonemes. Distributions are over integer repeat
//! counts >= 1 and are normalized on read.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::{CorpusError, Result};

/// Empirical distribution over repeat counts.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatDist {
    /// (count, probability) pairs sorted by count; probabilities sum to 1.
    pairs: Vec<(u32, f64)>,
}

impl RepeatDist {
    /// Build from raw (count, weight) pairs; weights are normalized.
    pub fn new(mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(CorpusError::Config(
                "repeat distribution needs at least one count".into(),
            ));
        }
        if pairs.iter().any(|&(c, _)| c < 1) {
            return Err(CorpusError::Config("repeat counts must be >= 1".into()));
        }
        if pairs.iter().any(|&(_, p)| p < 0.0 || !p.is_finite()) {
            return Err(CorpusError::Config(
                "repeat probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = pairs.iter().map(|&(_, p)| p).sum();
        if total <= 0.0 {
            return Err(CorpusError::Config(
                "repeat probabilities must not all be zero".into(),
            ));
        }
        pairs.sort_by_key(|&(c, _)| c);
        for (_, p) in pairs.iter_mut() {
            *p /= total;
        }
        Ok(RepeatDist { pairs })
    }

    pub fn degenerate(count: u32) -> Self {
        RepeatDist {
            pairs: vec![(count.max(1), 1.0)],
        }
    }

    pub fn pairs(&self) -> &[(u32, f64)] {
        &self.pairs
    }

    pub fn mean(&self) -> f64 {
        self.pairs.iter().map(|&(c, p)| c as f64 * p).sum()
    }

    /// Inverse-CDF sample; deterministic given the RNG stream.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(c, p) in &self.pairs {
            acc += p;
            if u < acc {
                return c;
            }
        }
        self.pairs.last().expect("non-empty").0
    }
}

/// Per-phoneme repeat distributions plus the DEFAULT fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationStats {
    pub per_phoneme: BTreeMap<String, RepeatDist>,
    pub fallback: RepeatDist,
}

impl DurationStats {
    pub fn uniform_fallback(fallback: RepeatDist) -> Self {
        DurationStats {
            per_phoneme: BTreeMap::new(),
            fallback,
        }
    }

    pub fn dist_for(&self, phoneme: &str) -> &RepeatDist {
        self.per_phoneme.get(phoneme).unwrap_or(&self.fallback)
    }
}

const DEFAULT_KEY: &str = "DEFAULT";

pub fn write_duration_stats(path: &Path, stats: &DurationStats) -> Result<()> {
    let mut out = String::new();
    let row = |key: &str, dist: &RepeatDist, out: &mut String| {
        out.push_str(key);
        out.push('\t');
        let cells: Vec<String> = dist
            .pairs()
            .iter()
            .map(|(c, p)| format!("{c}:{p}"))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    };
    row(DEFAULT_KEY, &stats.fallback, &mut out);
    for (phoneme, dist) in &stats.per_phoneme {
        row(phoneme, dist, &mut out);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read stats; returns the stats and how many rows needed re-normalization
/// (probabilities off by more than 1e-9).
pub fn read_duration_stats(path: &Path) -> Result<(DurationStats, usize)> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut per_phoneme = BTreeMap::new();
    let mut fallback = None;
    let mut normalized_rows = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| CorpusError::Parse {
            path: p.clone(),
            line: i + 1,
            msg,
        };
        let (key, cells) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected PHONEME<TAB>count:prob,...".into()))?;
        let mut pairs = Vec::new();
        for cell in cells.split(',') {
            let (c, pr) = cell
                .split_once(':')
                .ok_or_else(|| parse_err(format!("bad cell {cell:?}")))?;
            let count: i64 = c
                .parse()
                .map_err(|_| parse_err(format!("bad count {c:?}")))?;
            let prob: f64 = pr
                .parse()
                .map_err(|_| parse_err(format!("bad probability {pr:?}")))?;
            if count < 1 {
                return Err(parse_err(format!("count {count} must be >= 1")));
            }
            if prob < 0.0 {
                return Err(parse_err(format!("probability {prob} must be >= 0")));
            }
            pairs.push((count as u32, prob));
        }
        let total: f64 = pairs.iter().map(|&(_, pr)| pr).sum();
        if (total - 1.0).abs() > 1e-9 {
            normalized_rows += 1;
        }
        let dist = RepeatDist::new(pairs).map_err(|e| parse_err(e.to_string()))?;
        if key == DEFAULT_KEY {
            fallback = Some(dist);
        } else {
            per_phoneme.insert(key.to_owned(), dist);
        }
    }
    let fallback = fallback.ok_or_else(|| CorpusError::Parse {
        path: p,
        line: 0,
        msg: "missing DEFAULT row".into(),
    })?;
    Ok((
        DurationStats {
            per_phoneme,
            fallback,
        },
        normalized_rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "DEFAULT\t2:1\nAH_I\t3:0.5,4:0.5\n").unwrap();
        let (stats, warn) = read_duration_stats(&path).unwrap();
        assert_eq!(warn, 0);
        assert_eq!(stats.dist_for("AH_I").pairs(), &[(3, 0.5), (4, 0.5)]);
        assert_eq!(stats.dist_for("ZZ_B").pairs(), &[(2, 1.0)]);
    }

    #[test]
    fn unnormalized_rows_are_normalized_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "DEFAULT\t1:0.2,2:0.2,3:0.2\n").unwrap();
        let (stats, warn) = read_duration_stats(&path).unwrap();
        assert_eq!(warn, 1);
        for &(_, p) in stats.fallback.pairs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_values_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "DEFAULT\t-1:1.0\n").unwrap();
        assert!(read_duration_stats(&path).is_err());
        std::fs::write(&path, "DEFAULT\t1:-0.5\n").unwrap();
        assert!(read_duration_stats(&path).is_err());
    }

    #[test]
    fn missing_default_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "AH_I\t1:1.0\n").unwrap();
        assert!(read_duration_stats(&path).is_err());
    }

    #[test]
    fn round_trip_preserves_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut per_phoneme = BTreeMap::new();
        for i in 0..20 {
            let pairs: Vec<(u32, f64)> = (1..=4)
                .map(|c| (c, rng.gen_range(0.01..1.0)))
                .collect();
            per_phoneme.insert(format!("P{i}_B"), RepeatDist::new(pairs).unwrap());
        }
        let stats = DurationStats {
            per_phoneme,
            fallback: RepeatDist::new(vec![(1, 0.25), (2, 0.75)]).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        write_duration_stats(&path, &stats).unwrap();
        let (back, warn) = read_duration_stats(&path).unwrap();
        assert_eq!(warn, 0);
        for (key, dist) in &stats.per_phoneme {
            let got = back.per_phoneme.get(key).unwrap();
            for (a, b) in dist.pairs().iter().zip(got.pairs()) {
                assert_eq!(a.0, b.0);
                assert!((a.1 - b.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_follows_the_distribution() {
        let dist = RepeatDist::new(vec![(1, 0.25), (3, 0.75)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40_000;
        let mean: f64 =
            (0..n).map(|_| dist.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - dist.mean()).abs() < 0.02);
    }
}
