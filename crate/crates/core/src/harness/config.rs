use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SyntheticTaskSpec;
use crate::decode::{Combination, DecodeOptions, Recipe};
use crate::error::{Error, Result};
use crate::model::{InputSpec, JointConfig, ModelConfig, TransformerConfig};
use crate::tensor::AdamConfig;
use crate::text::Granularity;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    /// Transcript units (ASR output, Ext-MT input).
    pub source_granularity: Granularity,
    pub source_size: usize,
    /// Translation units are always BPE.
    pub target_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Weight of the transcript loss in the joint objective.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr_scale: f64,
    pub warmup: u64,
    pub clip_norm: Option<f64>,
    /// Write a checkpoint every this many updates.
    pub checkpoint_every: u64,
    /// Average this many best-by-dev-loss checkpoints into the final model.
    pub average_best: usize,
    pub log_every: u64,
    /// Start the joint model's ASR half from the trained Ext-ASR.
    pub warm_start_joint: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthPenalty {
    pub character: f64,
    pub bpe: f64,
}

impl LengthPenalty {
    pub fn for_granularity(&self, g: Granularity) -> f64 {
        match g {
            Granularity::Character => self.character,
            Granularity::Bpe => self.bpe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub asr_beam: usize,
    pub mt_beam: usize,
    pub max_len: usize,
    /// Keyed by the transcript granularity of the cascade.
    pub length_penalty: LengthPenalty,
    pub combination: Combination,
    pub recipe: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// Existing dataset manifest; `None` means `<run>/data/manifest.json`.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: SyntheticTaskSpec,
    pub vocab: VocabSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub paths: PathSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            task: SyntheticTaskSpec::default(),
            vocab: VocabSection { source_granularity: Granularity::Bpe, source_size: 32, target_size: 32 },
            model: ModelSection {
                d_model: 64,
                encoder_layers: 2,
                decoder_layers: 2,
                d_ff: 128,
                heads: 4,
                dropout: 0.1,
                label_smoothing: 0.1,
                lambda: 0.5,
            },
            train: TrainSection {
                seed: 1,
                steps: 2000,
                batch_size: 8,
                lr_scale: 0.1,
                warmup: 200,
                clip_norm: Some(5.0),
                checkpoint_every: 200,
                average_best: 3,
                log_every: 20,
                warm_start_joint: true,
            },
            decode: DecodeSection {
                asr_beam: 10,
                mt_beam: 5,
                max_len: 24,
                length_penalty: LengthPenalty { character: 0.3, bpe: 1.0 },
                combination: Combination::Raw,
                recipe: "[Ext-ASR]⟹[Ext-MT]".into(),
            },
            paths: PathSection { manifest: None },
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses, validates and checks that referenced files exist. Relative
    /// paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::parse(&fs::read_to_string(path)?)?;
        if let Some(m) = &cfg.paths.manifest {
            let resolved = if m.is_relative() { path.parent().unwrap_or(Path::new(".")).join(m) } else { m.clone() };
            if !resolved.exists() {
                return Err(Error::MissingFile(resolved));
            }
            cfg.paths.manifest = Some(resolved);
        }
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_toml())` returns the same value.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        self.task.validate()?;
        let lp = &self.decode.length_penalty;
        for (name, a) in [("character", lp.character), ("bpe", lp.bpe)] {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::Config(format!("length penalty for {name} must be finite and non-negative")));
            }
        }
        if self.decode.asr_beam == 0 || self.decode.mt_beam == 0 || self.decode.max_len == 0 {
            return Err(Error::Config("beams and max_len must be positive".into()));
        }
        self.recipe()?;
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || t.checkpoint_every == 0 || t.average_best == 0 || t.log_every == 0 {
            return Err(Error::Config("train steps, batch size, cadences and averaging count must be positive".into()));
        }
        if !(t.lr_scale > 0.0 && t.lr_scale.is_finite()) {
            return Err(Error::Config("lr_scale must be positive".into()));
        }
        for c in [self.ext_asr(), self.ext_mt(self.vocab.source_size), self.joint()] {
            c.validate()?;
        }
        Ok(())
    }

    pub fn recipe(&self) -> Result<Recipe> {
        self.decode.recipe.parse()
    }

    fn transformer(&self, input: InputSpec, vocab: usize, granularity: Granularity) -> TransformerConfig {
        let m = &self.model;
        TransformerConfig {
            encoder_layers: m.encoder_layers,
            decoder_layers: m.decoder_layers,
            d_model: m.d_model,
            d_ff: m.d_ff,
            heads: m.heads,
            dropout: m.dropout,
            label_smoothing: m.label_smoothing,
            input,
            target_vocab: vocab,
            target_granularity: granularity,
        }
    }

    /// The vocabulary sizes in the model configs are the requested sizes;
    /// the built vocabularies may be smaller, so the harness passes the
    /// actual sizes through [`ExperimentConfig::models_for`].
    pub fn ext_asr(&self) -> ModelConfig {
        self.models_for(self.vocab.source_size, self.vocab.target_size).0
    }

    pub fn ext_mt(&self, source_vocab: usize) -> ModelConfig {
        self.models_for(source_vocab, self.vocab.target_size).1
    }

    pub fn joint(&self) -> ModelConfig {
        self.models_for(self.vocab.source_size, self.vocab.target_size).2
    }

    /// Ext-ASR, Ext-MT and joint configs for the given vocabulary sizes.
    pub fn models_for(&self, source_vocab: usize, target_vocab: usize) -> (ModelConfig, ModelConfig, ModelConfig) {
        let speech = InputSpec::Speech { feature_dim: 3 * crate::audio::MelConfig::default().n_mels };
        let src = self.vocab.source_granularity;
        let asr = self.transformer(speech, source_vocab, src);
        let mt = self.transformer(InputSpec::Tokens { vocab: source_vocab, granularity: src }, target_vocab, Granularity::Bpe);
        let joint_mt = self.transformer(InputSpec::Hidden { width: self.model.d_model }, target_vocab, Granularity::Bpe);
        (
            ModelConfig::Asr(asr.clone()),
            ModelConfig::Mt(mt),
            ModelConfig::Joint(JointConfig { asr, mt: joint_mt, lambda: self.model.lambda }),
        )
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr_scale: self.train.lr_scale,
            warmup: self.train.warmup,
            d_model: self.model.d_model,
            clip_norm: self.train.clip_norm,
            ..AdamConfig::default()
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        let alpha = self.decode.length_penalty.for_granularity(self.vocab.source_granularity);
        DecodeOptions {
            asr_beam: self.decode.asr_beam,
            mt_beam: self.decode.mt_beam,
            asr_max_len: self.decode.max_len,
            mt_max_len: self.decode.max_len,
            asr_alpha: alpha,
            mt_alpha: alpha,
            combination: self.decode.combination,
        }
    }
}
