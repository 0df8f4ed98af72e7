//! Layered run configuration: defaults < preset < config file < flags.
//! The fully resolved configuration is written into every run directory as
//! sorted `section.key=value` lines so a run can be re-created from its
//! artifacts alone.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use duotok_core::masking::{CorruptionPolicy, MaskConfig};
use duotok_core::model::ModelConfig;
use duotok_core::text::UpsampleMode;
use duotok_core::trainer::{AdamHyper, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Laptop-scale smoke-to-medium runs.
    Desk,
    /// The full-scale recipe, for documentation; not expected to run on a
    /// desk machine.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(format!("unknown preset {other:?} (expected desk|paper)")),
        }
    }
}

/// Every tunable of a pretraining run, fully resolved.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub values: BTreeMap<String, String>,
}

fn desk_defaults() -> BTreeMap<String, String> {
    let pairs = [
        ("seed", "0"),
        ("model.dim", "256"),
        ("model.layers", "6"),
        ("model.heads", "4"),
        ("model.max_len", "512"),
        ("model.tau", "0.1"),
        ("model.final_ln", "true"),
        ("model.strict_mlp", "false"),
        ("train.peak_lr", "0.0005"),
        ("train.warmup_steps", "1000"),
        ("train.total_steps", "20000"),
        ("train.weight_decay", "0.01"),
        ("train.beta1", "0.9"),
        ("train.beta2", "0.98"),
        ("train.eps", "0.00000001"),
        ("train.tokens_per_batch", "4096"),
        ("train.speech_ratio", "1"),
        ("train.text_ratio", "1"),
        ("train.checkpoint_interval", "1000"),
        ("train.clip_norm", "1"),
        ("mask.start_prob", "0.08"),
        ("mask.span_mean", "10"),
        ("mask.span_std", "10"),
        ("mask.policy", "full"),
        ("upsample.mode", "repeat"),
        ("upsample.geometric_mean", "4"),
        ("upsample.freeze", "false"),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn apply_paper_preset(values: &mut BTreeMap<String, String>) {
    for (k, v) in [
        ("model.dim", "768"),
        ("model.layers", "12"),
        ("model.heads", "12"),
        ("train.warmup_steps", "32000"),
        ("train.total_steps", "400000"),
        ("train.tokens_per_batch", "16384"),
        ("train.checkpoint_interval", "25000"),
    ] {
        values.insert(k.to_string(), v.to_string());
    }
}

/// Parse a flat `section.key=value` file; '#' starts a comment line.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), i + 1))?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// defaults < preset < config file < explicit overrides (flags).
    pub fn layered(
        preset: Preset,
        config_file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut values = desk_defaults();
        if preset == Preset::Paper {
            apply_paper_preset(&mut values);
        }
        if let Some(path) = config_file {
            for (k, v) in parse_config_file(path)? {
                if !values.contains_key(&k) {
                    bail!("unknown config key {k:?} in {}", path.display());
                }
                values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            if !values.contains_key(k) {
                bail!("unknown config key {k:?}");
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig { values })
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| anyhow!("missing config key {key:?}"))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key)?;
        raw.parse::<T>()
            .map_err(|e| anyhow!("config key {key}={raw:?}: {e}"))
    }

    pub fn parse_bool(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => bail!("config key {key}={other:?}: expected a boolean"),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn model_config(&self, speech_vocab: usize, text_vocab: usize) -> Result<ModelConfig> {
        Ok(ModelConfig {
            dim: self.parse("model.dim")?,
            layers: self.parse("model.layers")?,
            heads: self.parse("model.heads")?,
            max_len: self.parse("model.max_len")?,
            speech_vocab,
            text_vocab,
            tau: self.parse("model.tau")?,
            final_ln: self.parse_bool("model.final_ln")?,
            strict_equation_mlp: self.parse_bool("model.strict_mlp")?,
        })
    }

    pub fn mask_config(&self) -> Result<MaskConfig> {
        let policy = match self.get("mask.policy")? {
            "full" | "full-mask" => CorruptionPolicy::FullMask,
            "80-10-10" => CorruptionPolicy::EightyTenTen,
            other => bail!("mask.policy={other:?}: expected full|80-10-10"),
        };
        Ok(MaskConfig {
            start_prob: self.parse("mask.start_prob")?,
            span_mean: self.parse("mask.span_mean")?,
            span_std: self.parse("mask.span_std")?,
            policy,
        })
    }

    pub fn upsample_mode(&self) -> Result<UpsampleMode> {
        match self.get("upsample.mode")? {
            "repeat" => Ok(UpsampleMode::Repeat),
            "original" => Ok(UpsampleMode::Original),
            other => bail!("upsample.mode={other:?}: expected repeat|original"),
        }
    }

    pub fn train_config(
        &self,
        upsample_source: duotok_core::text::RepeatSource,
    ) -> Result<TrainConfig> {
        let clip_raw = self.get("train.clip_norm")?;
        let clip_norm = if clip_raw == "none" {
            None
        } else {
            Some(
                clip_raw
                    .parse::<f64>()
                    .map_err(|e| anyhow!("train.clip_norm={clip_raw:?}: {e}"))?,
            )
        };
        Ok(TrainConfig {
            peak_lr: self.parse("train.peak_lr")?,
            warmup_steps: self.parse("train.warmup_steps")?,
            total_steps: self.parse("train.total_steps")?,
            adam: AdamHyper {
                beta1: self.parse("train.beta1")?,
                beta2: self.parse("train.beta2")?,
                eps: self.parse("train.eps")?,
                weight_decay: self.parse("train.weight_decay")?,
                clip_norm,
            },
            tokens_per_batch: self.parse("train.tokens_per_batch")?,
            speech_ratio: self.parse("train.speech_ratio")?,
            text_ratio: self.parse("train.text_ratio")?,
            seed: self.seed()?,
            checkpoint_interval: self.parse("train.checkpoint_interval")?,
            mask: self.mask_config()?,
            upsample_mode: self.upsample_mode()?,
            upsample_source,
            freeze_upsample: self.parse_bool("upsample.freeze")?,
        })
    }

    /// Sorted key=value lines, one per setting.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(&cfg_path, "# comment\ntrain.peak_lr=0.001\nmodel.dim=64\n").unwrap();
        let cfg = RunConfig::layered(
            Preset::Desk,
            Some(&cfg_path),
            &[("model.dim".into(), "32".into())],
        )
        .unwrap();
        assert_eq!(cfg.get("train.peak_lr").unwrap(), "0.001"); // file beats preset
        assert_eq!(cfg.get("model.dim").unwrap(), "32"); // flag beats file
        assert_eq!(cfg.get("model.layers").unwrap(), "6"); // desk default
    }

    #[test]
    fn paper_preset_overrides_scale_knobs() {
        let cfg = RunConfig::layered(Preset::Paper, None, &[]).unwrap();
        assert_eq!(cfg.get("model.dim").unwrap(), "768");
        assert_eq!(cfg.get("train.total_steps").unwrap(), "400000");
        assert_eq!(cfg.get("train.peak_lr").unwrap(), "0.0005");
        assert_eq!(cfg.get("train.tokens_per_batch").unwrap(), "16384");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::layered(Preset::Desk, None, &[("oops".into(), "1".into())]);
        assert!(err.is_err());
    }

    #[test]
    fn render_is_sorted_and_reparseable() {
        let cfg = RunConfig::layered(Preset::Desk, None, &[]).unwrap();
        let rendered = cfg.render();
        let mut last = String::new();
        for line in rendered.lines() {
            let (k, _) = line.split_once('=').unwrap();
            assert!(k > last.as_str());
            last = k.to_string();
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("resolved.cfg");
        cfg.write(&p).unwrap();
        let back = parse_config_file(&p).unwrap();
        assert_eq!(back, cfg.values);
    }
}
