use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::model::{AsrModel, MtModel};
use crate::tensor::{ParamStore, Tensor};

/// Anything that maps target prefixes (without bos) to next-token
/// log-probabilities.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

/// An ASR model with its encoder output precomputed.
pub struct AsrScorer<'m> {
    model: &'m AsrModel,
    params: &'m ParamStore,
    memory: Tensor,
}

impl<'m> AsrScorer<'m> {
    pub fn new(model: &'m AsrModel, params: &'m ParamStore, features: &FeatureMatrix) -> Result<Self> {
        Ok(AsrScorer { model, params, memory: model.memory(params, features)? })
    }
}

impl StepScorer for AsrScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.target_vocab
    }

    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        self.model.next_log_probs(self.params, &self.memory, prefixes)
    }
}

/// An MT model conditioned on either source tokens or bridge states.
pub struct MtScorer<'m> {
    model: &'m MtModel,
    params: &'m ParamStore,
    memory: Tensor,
}

impl<'m> MtScorer<'m> {
    pub fn from_tokens(model: &'m MtModel, params: &'m ParamStore, tokens: &[u32]) -> Result<Self> {
        Ok(MtScorer { model, params, memory: model.memory(params, Some(tokens), None)? })
    }

    pub fn from_states(model: &'m MtModel, params: &'m ParamStore, states: &Tensor) -> Result<Self> {
        Ok(MtScorer { model, params, memory: model.memory(params, None, Some(states))? })
    }
}

impl StepScorer for MtScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.target_vocab
    }

    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        self.model.next_log_probs(self.params, &self.memory, prefixes)
    }
}

/// Weighted members whose next-token distributions are averaged in
/// probability space.
pub struct EnsembleSpec<'a> {
    members: Vec<Box<dyn StepScorer + 'a>>,
    weights: Vec<f64>,
}

impl<'a> EnsembleSpec<'a> {
    /// Uniform weights.
    pub fn new(members: Vec<Box<dyn StepScorer + 'a>>) -> Result<Self> {
        let k = members.len();
        Self::with_weights(members, vec![1.0 / k.max(1) as f64; k])
    }

    pub fn with_weights(members: Vec<Box<dyn StepScorer + 'a>>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble members".into()));
        }
        if weights.len() != members.len() {
            return Err(Error::InvalidArgument(format!("{} weights for {} members", weights.len(), members.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("ensemble weights must be nonnegative and sum to 1".into()));
        }
        let v = members[0].vocab_size();
        if let Some(m) = members.iter().find(|m| m.vocab_size() != v) {
            return Err(Error::VocabMismatch(format!(
                "ensemble members have vocabularies of size {v} and {}",
                m.vocab_size()
            )));
        }
        Ok(EnsembleSpec { members, weights })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// `sum_i w_i * softmax_i` for every prefix.
pub fn ensemble_step(spec: &mut EnsembleSpec, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    let v = spec.members[0].vocab_size();
    let mut out = vec![vec![0.0; v]; prefixes.len()];
    for (member, &w) in spec.members.iter_mut().zip(&spec.weights) {
        if member.vocab_size() != v {
            return Err(Error::VocabMismatch("ensemble member vocabulary changed".into()));
        }
        if w == 0.0 {
            continue;
        }
        let dists = member.next_log_probs(prefixes)?;
        for (acc, d) in out.iter_mut().zip(&dists) {
            if d.len() != v {
                return Err(Error::VocabMismatch(format!("member returned {} probabilities, expected {v}", d.len())));
            }
            for (a, lp) in acc.iter_mut().zip(d) {
                *a += w * lp.exp();
            }
        }
    }
    Ok(out)
}

impl StepScorer for EnsembleSpec<'_> {
    fn vocab_size(&self) -> usize {
        self.members[0].vocab_size()
    }

    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        // a single member skips the exp/ln round trip
        if self.members.len() == 1 {
            return self.members[0].next_log_probs(prefixes);
        }
        Ok(ensemble_step(self, prefixes)?.into_iter().map(|d| d.into_iter().map(f64::ln).collect()).collect())
    }
}
