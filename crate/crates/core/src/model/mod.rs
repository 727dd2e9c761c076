//! Transformer ASR, MT and the jointly trained cascade.

mod checkpoint;
mod config;
mod layers;
mod networks;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::{ParamCounter, ParamStore, Tensor};

pub use checkpoint::{average_checkpoints, Checkpoint, VocabFingerprint};
pub use config::{first_difference, InputSpec, JointConfig, ModelConfig, TransformerConfig};
pub use layers::{sinusoidal_positions, Graph};
pub use networks::{AsrModel, JointForward, JointModel, LossReport, MtModel, MtSource, TeacherForced};

#[derive(Clone, Debug)]
pub enum Network {
    Asr(AsrModel),
    Mt(MtModel),
    Joint(JointModel),
}

/// One training example; which fields are needed depends on the model.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub features: Option<&'a FeatureMatrix>,
    /// Source-language transcript tokens (ASR target, MT source).
    pub transcript: &'a [u32],
    /// Target-language tokens.
    pub target: &'a [u32],
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub network: Network,
    pub params: ParamStore,
}

fn build(config: &ModelConfig, sink: &mut impl crate::tensor::ParamSink) -> Result<Network> {
    config.validate()?;
    Ok(match config {
        ModelConfig::Asr(c) => Network::Asr(AsrModel::build(c, sink, "")?),
        ModelConfig::Mt(c) => Network::Mt(MtModel::build(c, sink, "")?),
        ModelConfig::Joint(j) => Network::Joint(JointModel::build(j, sink)?),
    })
}

/// Number of scalar parameters for `config`, computed without allocating.
pub fn parameter_count(config: &ModelConfig) -> Result<usize> {
    let mut counter = ParamCounter::default();
    build(config, &mut counter)?;
    Ok(counter.elements)
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new(seed);
        let network = build(&config, &mut params)?;
        Ok(Model { config, network, params })
    }

    /// Rebuilds the network for `config` and installs `tensors` by name.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors for a model with {} parameters", tensors.len(), model.params.len()),
            ));
        }
        for (name, t) in tensors {
            model.params.set(&name, t)?;
        }
        Ok(model)
    }

    pub fn asr(&self) -> Option<&AsrModel> {
        match &self.network {
            Network::Asr(a) => Some(a),
            Network::Joint(j) => Some(&j.asr),
            Network::Mt(_) => None,
        }
    }

    pub fn mt(&self) -> Option<&MtModel> {
        match &self.network {
            Network::Mt(m) => Some(m),
            Network::Joint(j) => Some(&j.mt),
            Network::Asr(_) => None,
        }
    }

    pub fn joint(&self) -> Option<&JointModel> {
        match &self.network {
            Network::Joint(j) => Some(j),
            _ => None,
        }
    }

    /// Loss report and per-parameter gradients for one example.
    ///
    /// `dropout_seed` enables dropout; `None` evaluates deterministically
    /// (used for dev loss and gradient checks).
    pub fn loss_and_grads(&self, ex: &Example, dropout_seed: Option<u64>) -> Result<(LossReport, Vec<Option<Tensor>>)> {
        let mut g = Graph::training(&self.params, dropout_seed);
        let (loss, report) = self.forward(&mut g, ex)?;
        let grads = g.tape.backward(loss)?;
        Ok((report, g.param_grads(&grads)))
    }

    /// Loss without gradients.
    pub fn loss(&self, ex: &Example) -> Result<LossReport> {
        let mut g = Graph::inference(&self.params);
        Ok(self.forward(&mut g, ex)?.1)
    }

    fn forward(&self, g: &mut Graph, ex: &Example) -> Result<(crate::tensor::Var, LossReport)> {
        let need_features = || ex.features.ok_or_else(|| Error::Empty("features".into()));
        match &self.network {
            Network::Asr(asr) => {
                let out = asr.forward(g, need_features()?, ex.transcript)?;
                let l = g.tape.value(out.loss).item();
                let report = LossReport { l_total: l, l_mt: 0.0, l_asr: l, mt_tokens: 0, asr_tokens: out.tokens };
                Ok((out.loss, report))
            }
            Network::Mt(mt) => {
                let out = mt.forward(g, MtSource::Tokens(ex.transcript), ex.target)?;
                let l = g.tape.value(out.loss).item();
                let report = LossReport { l_total: l, l_mt: l, l_asr: 0.0, mt_tokens: out.tokens, asr_tokens: 0 };
                Ok((out.loss, report))
            }
            Network::Joint(joint) => {
                let out = joint.forward(g, need_features()?, ex.transcript, ex.target)?;
                Ok((out.total, joint.report(g, &out)))
            }
        }
    }
}
