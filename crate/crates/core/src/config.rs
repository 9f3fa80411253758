//! Flat `key = value` experiment configuration with namespaced keys.
//! Every key has a default; unknown keys are rejected so typos surface
//! instead of silently falling back.

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::features::SynthSpec;
use crate::multitask::FeedbackRouting;
use crate::training::{LossSpec, OptimizerSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub cell: usize,
    pub rproj: usize,
    pub pproj: usize,
    pub init_scale: f64,
    pub cross_init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cell: 32,
            rproj: 16,
            pproj: 16,
            init_scale: 0.25,
            cross_init_scale: 0.05,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Frame count for the short-utterance condition.
    pub short_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { short_frames: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub routing: FeedbackRouting,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            routing: FeedbackRouting::cell_candidate_both(),
            loss: LossSpec::default(),
            optimizer: OptimizerSpec::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.routing.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.model.cell == 0 || self.model.rproj == 0 || self.model.pproj == 0 {
            return Err(CoreError::validation("model dims must be positive"));
        }
        if self.eval.short_frames == 0 {
            return Err(CoreError::validation("eval.short_frames must be positive"));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| CoreError::validation(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "synth.n_speakers_per_language" => {
                self.synth.n_speakers_per_language = num(key, value)?
            }
            "synth.n_utts_per_speaker" => self.synth.n_utts_per_speaker = num(key, value)?,
            "synth.frames_min" => self.synth.frames_min = num(key, value)?,
            "synth.frames_max" => self.synth.frames_max = num(key, value)?,
            "synth.dim" => self.synth.dim = num(key, value)?,
            "synth.language_shift_scale" => self.synth.language_shift_scale = num(key, value)?,
            "synth.speaker_shift_scale" => self.synth.speaker_shift_scale = num(key, value)?,
            "synth.channel_noise_scale" => self.synth.channel_noise_scale = num(key, value)?,
            "synth.temporal_mixing" => self.synth.temporal_mixing = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            "model.cell" => self.model.cell = num(key, value)?,
            "model.rproj" => self.model.rproj = num(key, value)?,
            "model.pproj" => self.model.pproj = num(key, value)?,
            "model.init_scale" => self.model.init_scale = num(key, value)?,
            "model.cross_init_scale" => self.model.cross_init_scale = num(key, value)?,
            "model.seed" => self.model.seed = num(key, value)?,
            "routing.sinks" => {
                if value == "none" {
                    self.routing = FeedbackRouting::none();
                } else {
                    let parsed = FeedbackRouting::parse(value, "r")?;
                    self.routing.sinks = parsed.sinks;
                    if self.routing.sources.is_empty() {
                        self.routing.sources = FeedbackRouting::cell_candidate_both().sources;
                    }
                }
            }
            "routing.sources" => {
                let parsed = FeedbackRouting::parse("g", value)?;
                self.routing.sources = parsed.sources;
            }
            "train.lambda_lre" => self.loss.lambda_lre = num(key, value)?,
            "train.lambda_sre" => self.loss.lambda_sre = num(key, value)?,
            "train.learning_rate" => self.optimizer.learning_rate = num(key, value)?,
            "train.momentum" => self.optimizer.momentum = num(key, value)?,
            "train.batch_size" => self.optimizer.batch_size = num(key, value)?,
            "train.epochs" => self.optimizer.epochs = num(key, value)?,
            "train.lr_decay" => self.optimizer.lr_decay = num(key, value)?,
            "train.clip_norm" => self.optimizer.clip_norm = num(key, value)?,
            "train.seed" => self.optimizer.seed = num(key, value)?,
            "eval.short_frames" => self.eval.short_frames = num(key, value)?,
            other => {
                return Err(CoreError::validation(format!("unknown config key `{other}`")))
            }
        }
        Ok(())
    }

    pub fn from_str_at(path: &Path, text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CoreError::parse(path, ln + 1, "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CoreError::parse(path, ln + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_str_at(path, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multitask::{Sink, Source};

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "\
# comment line
synth.n_speakers_per_language = 5
model.cell = 12
routing.sinks = i,g
routing.sources = p
train.learning_rate = 0.05
eval.short_frames = 50
";
        let cfg = ExperimentConfig::from_str_at(Path::new("mem"), text).unwrap();
        assert_eq!(cfg.synth.n_speakers_per_language, 5);
        assert_eq!(cfg.model.cell, 12);
        assert_eq!(cfg.routing.sinks, vec![Sink::InputGate, Sink::CellCandidate]);
        assert_eq!(cfg.routing.sources, vec![Source::Pproj]);
        assert_eq!(cfg.optimizer.learning_rate, 0.05);
        assert_eq!(cfg.eval.short_frames, 50);
        // untouched keys keep defaults
        assert_eq!(cfg.synth.dim, SynthSpec::default().dim);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::from_str_at(Path::new("mem"), "synth.bogus = 3").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn bad_value_is_rejected() {
        assert!(ExperimentConfig::from_str_at(Path::new("mem"), "model.cell = soon").is_err());
    }

    #[test]
    fn routing_none_disables_feedback() {
        let cfg = ExperimentConfig::from_str_at(Path::new("mem"), "routing.sinks = none").unwrap();
        assert!(!cfg.routing.enabled());
    }
}
