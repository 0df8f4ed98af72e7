//! Minimal WAV support: 16-bit PCM mono at 16 kHz, nothing else.

use std::path::Path;

use super::{CorpusError, Result};

pub const WAV_SAMPLE_RATE: u32 = 16_000;

/// Read a 16-bit PCM mono 16 kHz WAV into samples scaled to [-1, 1).
pub fn read_wav_16k_mono(path: &Path) -> Result<Vec<f64>> {
    let p = path.display().to_string();
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| CorpusError::Config(format!("{p}: {e}")))?;
    let spec = reader.spec();
    if spec.sample_rate != WAV_SAMPLE_RATE {
        return Err(CorpusError::Config(format!(
            "{p}: sample rate {} Hz, expected {WAV_SAMPLE_RATE} Hz",
            spec.sample_rate
        )));
    }
    if spec.channels != 1 {
        return Err(CorpusError::Config(format!(
            "{p}: {} channels, expected mono",
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(CorpusError::Config(format!(
            "{p}: expected 16-bit integer PCM, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| {
            s.map(|v| v as f64 / 32768.0)
                .map_err(|e| CorpusError::Config(format!("{p}: {e}")))
        })
        .collect()
}

/// Write samples in [-1, 1] as 16-bit PCM mono at 16 kHz.
pub fn write_wav_16k_mono(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: WAV_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let p = path.display().to_string();
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| CorpusError::Config(format!("{p}: {e}")))?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| CorpusError::Config(format!("{p}: {e}")))?;
    }
    writer
        .finalize()
        .map_err(|e| CorpusError::Config(format!("{p}: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let samples: Vec<f64> = (0..1600)
            .map(|i| (i as f64 * 0.05).sin() * 0.5)
            .collect();
        write_wav_16k_mono(&path, &samples).unwrap();
        let back = read_wav_16k_mono(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in back.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-9);
        }
    }
}
