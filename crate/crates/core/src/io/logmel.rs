//! Log-mel filterbank extraction from 16 kHz mono audio.

use rustfft::{num_complex::Complex, FftPlanner};

use super::features::FeatureMatrix;
use super::{CorpusError, Result};
use crate::tensor::Tensor;

/// Energy floor applied before the log.
pub const MEL_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LogMelConfig {
    pub n_mels: usize,
    pub frame_ms: usize,
    pub hop_ms: usize,
    pub sample_rate: u32,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        LogMelConfig {
            n_mels: 80,
            frame_ms: 25,
            hop_ms: 20,
            sample_rate: 16_000,
        }
    }
}

impl LogMelConfig {
    pub fn frame_len(&self) -> usize {
        self.sample_rate as usize * self.frame_ms / 1000
    }

    pub fn hop_len(&self) -> usize {
        self.sample_rate as usize * self.hop_ms / 1000
    }
}

/// Extraction result; `too_short` flags inputs shorter than one frame.
#[derive(Debug, Clone)]
pub struct LogMel {
    pub features: FeatureMatrix,
    pub too_short: bool,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins, peak value 1.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let n_bins = n_fft / 2 + 1;
    let fmax = sample_rate / 2.0;
    let mel_lo = hz_to_mel(0.0);
    let mel_hi = hz_to_mel(fmax);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate / n_fft as f64;
    let mut filters = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut taps = Vec::new();
        for bin in 0..n_bins {
            let f = bin as f64 * bin_hz;
            let w = if f >= lo && f <= center && center > lo {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi && hi > center {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                taps.push((bin, w));
            }
        }
        filters.push(taps);
    }
    filters
}

/// Frequency range [lo, hi] covered by mel filter `m`.
pub fn mel_filter_band(cfg: &LogMelConfig, m: usize) -> (f64, f64) {
    let fmax = cfg.sample_rate as f64 / 2.0;
    let mel_hi = hz_to_mel(fmax);
    let step = mel_hi / (cfg.n_mels + 1) as f64;
    (
        mel_to_hz(step * m as f64),
        mel_to_hz(step * (m + 2) as f64),
    )
}

/// Log mel-filterbank energies: one row per frame.
///
/// Frame count is `1 + floor((len - frame_len) / hop_len)`; inputs shorter
/// than one frame produce an empty matrix with the `too_short` flag set.
pub fn logmel_extract(utt_id: &str, samples: &[f64], cfg: &LogMelConfig) -> Result<LogMel> {
    if cfg.sample_rate != 16_000 {
        return Err(CorpusError::Config(format!(
            "log-mel extraction requires 16 kHz input, got {} Hz",
            cfg.sample_rate
        )));
    }
    if cfg.n_mels == 0 {
        return Err(CorpusError::Config("n_mels must be >= 1".into()));
    }
    let frame_len = cfg.frame_len();
    let hop = cfg.hop_len();
    if samples.len() < frame_len {
        return Ok(LogMel {
            features: FeatureMatrix::new(utt_id, Tensor::zeros(vec![0, cfg.n_mels])),
            too_short: true,
        });
    }
    let num_frames = 1 + (samples.len() - frame_len) / hop;
    let n_fft = frame_len.next_power_of_two();
    let filters = mel_filterbank(cfg.n_mels, n_fft, cfg.sample_rate as f64);
    let window: Vec<f64> = (0..frame_len)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / frame_len as f64;
            0.5 - 0.5 * theta.cos()
        })
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let mut data = Vec::with_capacity(num_frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for f in 0..num_frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = if i < frame_len {
                samples[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        let n_bins = n_fft / 2 + 1;
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for taps in &filters {
            let energy: f64 = taps.iter().map(|&(bin, w)| power[bin] * w).sum();
            data.push(energy.max(MEL_FLOOR).ln());
        }
    }
    let frames = Tensor::from_vec(vec![num_frames, cfg.n_mels], data)
        .map_err(|e| CorpusError::Config(format!("log-mel produced invalid tensor: {e}")))?;
    Ok(LogMel {
        features: FeatureMatrix::new(utt_id, frames),
        too_short: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_arithmetic() {
        let cfg = LogMelConfig::default();
        assert_eq!(cfg.frame_len(), 400);
        assert_eq!(cfg.hop_len(), 320);
        let samples = vec![0.0; 16_000];
        let out = logmel_extract("u", &samples, &cfg).unwrap();
        assert_eq!(out.features.num_frames(), 49);
        assert!(!out.too_short);
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let cfg = LogMelConfig::default();
        let out = logmel_extract("s", &vec![0.0; 8000], &cfg).unwrap();
        let want = MEL_FLOOR.ln();
        for &v in out.features.frames.data() {
            assert_eq!(v, want);
        }
    }

    #[test]
    fn too_short_audio_yields_empty_output_with_flag() {
        let cfg = LogMelConfig::default();
        let out = logmel_extract("t", &vec![0.1; 399], &cfg).unwrap();
        assert!(out.too_short);
        assert_eq!(out.features.num_frames(), 0);
        assert_eq!(out.features.feat_dim(), 80);
    }

    #[test]
    fn wrong_sample_rate_is_a_config_error() {
        let cfg = LogMelConfig {
            sample_rate: 8000,
            ..LogMelConfig::default()
        };
        assert!(matches!(
            logmel_extract("w", &vec![0.0; 16000], &cfg),
            Err(CorpusError::Config(_))
        ));
    }

    #[test]
    fn sine_concentrates_energy_near_its_frequency() {
        let cfg = LogMelConfig::default();
        let hz = 440.0;
        let samples: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / 16_000.0).sin() * 0.8)
            .collect();
        let out = logmel_extract("sine", &samples, &cfg).unwrap();
        assert_eq!(out.features.num_frames(), 49);

        // Independent DFT oracle on the first frame: the peak FFT bin must
        // sit at the sine frequency.
        let frame: Vec<f64> = (0..400)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / 400.0;
                samples[i] * (0.5 - 0.5 * theta.cos())
            })
            .collect();
        let n_fft = 512usize;
        let mut best = (0usize, 0.0f64);
        for bin in 0..=n_fft / 2 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &v) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * bin as f64 * i as f64 / n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (bin, mag);
            }
        }
        let peak_hz = best.0 as f64 * 16_000.0 / n_fft as f64;
        assert!((peak_hz - hz).abs() < 16_000.0 / n_fft as f64 + 1.0);

        // The argmax mel bin must cover the sine frequency, in every frame.
        let mut argmax_bins = std::collections::BTreeSet::new();
        for f in 0..out.features.num_frames() {
            let row = out.features.frame(f);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            argmax_bins.insert(argmax);
            let (lo, hi) = mel_filter_band(&cfg, argmax);
            assert!(
                lo <= hz && hz <= hi,
                "frame {f}: argmax bin {argmax} covers [{lo:.1}, {hi:.1}] Hz"
            );
        }
        assert_eq!(argmax_bins.len(), 1, "argmax bin stable across frames");
    }
}
