use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Granularity;

/// What the encoder consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    /// Acoustic frames of width `feature_dim`, subsampled 4x by two strided convolutions.
    Speech { feature_dim: usize },
    /// Discrete source tokens.
    Tokens { vocab: usize, granularity: Granularity },
    /// External hidden vectors of width `width` (bridge states).
    Hidden { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub input: InputSpec,
    pub target_vocab: usize,
    pub target_granularity: Granularity,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model == 0 || self.d_ff == 0 || self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::InvalidArgument("layer counts and widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument("dropout and label smoothing must be in [0, 1)".into()));
        }
        if self.target_vocab < 5 {
            return Err(Error::InvalidArgument(format!("target vocabulary {} is too small", self.target_vocab)));
        }
        Ok(())
    }

    /// Speech transformer with the reference shape: 12 encoder and 6
    /// decoder layers, width 512, feed-forward 2048, 8 heads.
    pub fn reference_asr(feature_dim: usize, vocab: usize, granularity: Granularity) -> Self {
        TransformerConfig {
            encoder_layers: 12,
            decoder_layers: 6,
            d_model: 512,
            d_ff: 2048,
            heads: 8,
            dropout: 0.1,
            label_smoothing: 0.1,
            input: InputSpec::Speech { feature_dim },
            target_vocab: vocab,
            target_granularity: granularity,
        }
    }

    /// Reference text transformer: 6 + 6 layers, feed-forward 2048, width 256 or 512.
    pub fn reference_mt(d_model: usize, input: InputSpec, vocab: usize) -> Self {
        TransformerConfig {
            encoder_layers: 6,
            decoder_layers: 6,
            d_model,
            d_ff: 2048,
            heads: 8,
            dropout: 0.1,
            label_smoothing: 0.1,
            input,
            target_vocab: vocab,
            target_granularity: Granularity::Bpe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub asr: TransformerConfig,
    pub mt: TransformerConfig,
    /// Weight of the auxiliary transcript loss.
    pub lambda: f64,
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        self.asr.validate()?;
        self.mt.validate()?;
        if !matches!(self.asr.input, InputSpec::Speech { .. }) {
            return Err(Error::InvalidArgument("joint ASR module must consume speech".into()));
        }
        match self.mt.input {
            InputSpec::Hidden { width } if width == self.asr.d_model => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "joint MT module must consume hidden vectors of width {}",
                    self.asr.d_model
                )))
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Asr(TransformerConfig),
    Mt(TransformerConfig),
    Joint(JointConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Asr(c) => {
                c.validate()?;
                if !matches!(c.input, InputSpec::Speech { .. }) {
                    return Err(Error::InvalidArgument("ASR model must consume speech".into()));
                }
                Ok(())
            }
            ModelConfig::Mt(c) => {
                c.validate()?;
                if matches!(c.input, InputSpec::Speech { .. }) {
                    return Err(Error::InvalidArgument("MT model cannot consume speech".into()));
                }
                Ok(())
            }
            ModelConfig::Joint(j) => j.validate(),
        }
    }

    pub fn d_model(&self) -> usize {
        match self {
            ModelConfig::Asr(c) | ModelConfig::Mt(c) => c.d_model,
            ModelConfig::Joint(j) => j.mt.d_model,
        }
    }
}

/// Dotted path of the first field where two configurations differ.
pub fn first_difference(a: &ModelConfig, b: &ModelConfig) -> Option<String> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: String) -> Option<String> {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                keys.into_iter().find_map(|k| {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, p),
                        _ => Some(p),
                    }
                })
            }
            _ if a == b => None,
            _ => Some(if path.is_empty() { "<root>".into() } else { path }),
        }
    }
    let a = serde_json::to_value(a).ok()?;
    let b = serde_json::to_value(b).ok()?;
    walk(&a, &b, String::new())
}
