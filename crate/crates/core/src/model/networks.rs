use super::config::{InputSpec, JointConfig, TransformerConfig};
use super::layers::{sinusoidal_positions, Decoder, Encoder, Graph, Linear};
use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamSink, ParamStore, Tensor, Var};
use crate::text::{BOS, EOS};

/// Forward result of a teacher-forced decoder pass.
#[derive(Clone, Copy, Debug)]
pub struct TeacherForced {
    /// Mean smoothed cross-entropy per target token.
    pub loss: Var,
    /// Decoder-top states, one per target position (transcript + eos).
    pub states: Var,
    pub tokens: usize,
}

fn teacher_force(
    decoder: &Decoder,
    g: &mut Graph,
    memory: Var,
    target: &[u32],
    smoothing: f64,
    dropout: f64,
) -> Result<TeacherForced> {
    let mut prefix = Vec::with_capacity(target.len() + 1);
    prefix.push(BOS);
    prefix.extend_from_slice(target);
    let mut gold: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    gold.push(EOS as usize);
    let states = decoder.states(g, memory, &prefix, dropout)?;
    let logits = decoder.logits(g, states)?;
    let loss = g.tape.cross_entropy(logits, &gold, smoothing)?;
    Ok(TeacherForced { loss, states, tokens: gold.len() })
}

/// Next-token log-probabilities at the last position of each prefix.
fn next_log_probs(decoder: &Decoder, params: &ParamStore, memory: &Tensor, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::inference(params);
    let mem = g.tape.constant(memory.clone());
    let mut out = Vec::with_capacity(prefixes.len());
    for body in prefixes {
        let mut prefix = Vec::with_capacity(body.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(body);
        let states = decoder.states(&mut g, mem, &prefix, 0.0)?;
        let logits = decoder.logits(&mut g, states)?;
        let row = g.tape.value(logits).row(prefix.len() - 1);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.push(row.iter().map(|v| v - lse).collect());
    }
    Ok(out)
}

/// Speech transformer: two stride-2 convolutions (4x subsampling), encoder, token decoder.
#[derive(Clone, Debug)]
pub struct AsrModel {
    pub config: TransformerConfig,
    feature_dim: usize,
    conv1: Linear,
    conv2: Linear,
    encoder: Encoder,
    pub decoder: Decoder,
}

impl AsrModel {
    pub fn build(config: &TransformerConfig, sink: &mut impl ParamSink, prefix: &str) -> Result<Self> {
        config.validate()?;
        let InputSpec::Speech { feature_dim } = config.input else {
            return Err(Error::InvalidArgument("ASR model needs speech input".into()));
        };
        let d = config.d_model;
        Ok(AsrModel {
            config: config.clone(),
            feature_dim,
            conv1: Linear::new(sink, &format!("{prefix}front.conv1"), 3 * feature_dim, d),
            conv2: Linear::new(sink, &format!("{prefix}front.conv2"), 3 * d, d),
            encoder: Encoder::new(sink, &format!("{prefix}encoder"), config.encoder_layers, d, config.d_ff, config.heads),
            decoder: Decoder::new(
                sink,
                &format!("{prefix}decoder"),
                config.decoder_layers,
                d,
                config.d_ff,
                config.heads,
                config.target_vocab,
            ),
        })
    }

    pub fn encode(&self, g: &mut Graph, features: &FeatureMatrix) -> Result<Var> {
        if features.dim != self.feature_dim {
            return Err(Error::shape("asr_encode", format!("features of width {}, model expects {}", features.dim, self.feature_dim)));
        }
        if features.frames == 0 {
            return Err(Error::Empty("feature frames".into()));
        }
        let x = g.tape.constant(Tensor::new(vec![features.frames, features.dim], features.data.clone())?);
        let x = g.tape.unfold(x, 3, 2, 1)?;
        let x = self.conv1.forward(g, x)?;
        let x = g.tape.relu(x)?;
        let x = g.tape.unfold(x, 3, 2, 1)?;
        let x = self.conv2.forward(g, x)?;
        let x = g.tape.relu(x)?;
        let t = g.tape.shape(x)[0];
        let pe = g.tape.constant(sinusoidal_positions(t, self.config.d_model));
        let x = g.tape.add(x, pe)?;
        let x = g.dropout(x, self.config.dropout)?;
        self.encoder.forward(g, x, self.config.dropout)
    }

    /// Teacher-forced transcript loss plus the bridge states.
    pub fn forward(&self, g: &mut Graph, features: &FeatureMatrix, transcript: &[u32]) -> Result<TeacherForced> {
        if transcript.is_empty() {
            return Err(Error::Empty("transcript".into()));
        }
        self.check_tokens(transcript)?;
        let memory = self.encode(g, features)?;
        teacher_force(&self.decoder, g, memory, transcript, self.config.label_smoothing, self.config.dropout)
    }

    /// Encoder output for decoding.
    pub fn memory(&self, params: &ParamStore, features: &FeatureMatrix) -> Result<Tensor> {
        let mut g = Graph::inference(params);
        let m = self.encode(&mut g, features)?;
        Ok(g.tape.value(m).clone())
    }

    pub fn next_log_probs(&self, params: &ParamStore, memory: &Tensor, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        next_log_probs(&self.decoder, params, memory, prefixes)
    }

    /// Decoder-top states for `bos + tokens` (one row per position, so
    /// `tokens.len() + 1` rows) and the argmax token at the final position.
    pub fn forced_states(&self, params: &ParamStore, memory: &Tensor, tokens: &[u32]) -> Result<(Tensor, u32)> {
        self.check_tokens(tokens)?;
        let mut g = Graph::inference(params);
        let mem = g.tape.constant(memory.clone());
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(tokens);
        let states = self.decoder.states(&mut g, mem, &prefix, 0.0)?;
        let logits = self.decoder.logits(&mut g, states)?;
        let last = g.tape.value(logits).row(prefix.len() - 1);
        let next = last.iter().enumerate().fold(0, |b, (i, v)| if *v > last[b] { i } else { b }) as u32;
        Ok((g.tape.value(states).clone(), next))
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.target_vocab) {
            Some(&id) => Err(Error::TokenOutOfRange { id, size: self.config.target_vocab }),
            None => Ok(()),
        }
    }
}

/// Source of an MT forward pass. A model accepts exactly one of these,
/// fixed by its [`InputSpec`].
#[derive(Clone, Copy, Debug)]
pub enum MtSource<'a> {
    Tokens(&'a [u32]),
    /// Bridge states recorded on the same graph.
    States(Var),
}

impl MtSource<'_> {
    fn mode(&self) -> &'static str {
        match self {
            MtSource::Tokens(_) => "tokens",
            MtSource::States(_) => "hidden states",
        }
    }
}

#[derive(Clone, Debug)]
enum MtFront {
    Embedding { table: ParamId, vocab: usize },
    Adapter(Linear),
}

/// Text transformer consuming either source tokens or external hidden vectors.
#[derive(Clone, Debug)]
pub struct MtModel {
    pub config: TransformerConfig,
    front: MtFront,
    encoder: Encoder,
    pub decoder: Decoder,
}

impl MtModel {
    pub fn build(config: &TransformerConfig, sink: &mut impl ParamSink, prefix: &str) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let front = match config.input {
            InputSpec::Tokens { vocab, .. } => MtFront::Embedding {
                table: sink.add(
                    &format!("{prefix}source_embedding"),
                    &[vocab, d],
                    Init::Uniform((3.0 / d as f64).sqrt()),
                ),
                vocab,
            },
            InputSpec::Hidden { width } => MtFront::Adapter(Linear::new(sink, &format!("{prefix}bridge_adapter"), width, d)),
            InputSpec::Speech { .. } => return Err(Error::InvalidArgument("MT model cannot consume speech".into())),
        };
        Ok(MtModel {
            config: config.clone(),
            front,
            encoder: Encoder::new(sink, &format!("{prefix}encoder"), config.encoder_layers, d, config.d_ff, config.heads),
            decoder: Decoder::new(
                sink,
                &format!("{prefix}decoder"),
                config.decoder_layers,
                d,
                config.d_ff,
                config.heads,
                config.target_vocab,
            ),
        })
    }

    pub fn expects_tokens(&self) -> bool {
        matches!(self.front, MtFront::Embedding { .. })
    }

    /// Token sources get an eos appended before embedding.
    pub fn encode(&self, g: &mut Graph, source: MtSource) -> Result<Var> {
        let d = self.config.d_model;
        let x = match (&self.front, source) {
            (MtFront::Embedding { table, vocab }, MtSource::Tokens(tokens)) => {
                if let Some(&id) = tokens.iter().find(|&&t| t as usize >= *vocab) {
                    return Err(Error::TokenOutOfRange { id, size: *vocab });
                }
                let mut ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
                ids.push(EOS as usize);
                let t = g.param(*table);
                let x = g.tape.embedding(t, &ids)?;
                g.tape.scale(x, (d as f64).sqrt())?
            }
            (MtFront::Adapter(adapter), MtSource::States(states)) => adapter.forward(g, states)?,
            (front, src) => {
                let expected = match front {
                    MtFront::Embedding { .. } => "tokens",
                    MtFront::Adapter(_) => "hidden states",
                };
                return Err(Error::ModeMismatch { expected, got: src.mode() });
            }
        };
        let len = g.tape.shape(x)[0];
        let pe = g.tape.constant(sinusoidal_positions(len, d));
        let x = g.tape.add(x, pe)?;
        let x = g.dropout(x, self.config.dropout)?;
        self.encoder.forward(g, x, self.config.dropout)
    }

    pub fn forward(&self, g: &mut Graph, source: MtSource, target: &[u32]) -> Result<TeacherForced> {
        if target.is_empty() {
            return Err(Error::Empty("target".into()));
        }
        if let Some(&id) = target.iter().find(|&&t| t as usize >= self.config.target_vocab) {
            return Err(Error::TokenOutOfRange { id, size: self.config.target_vocab });
        }
        let memory = self.encode(g, source)?;
        teacher_force(&self.decoder, g, memory, target, self.config.label_smoothing, self.config.dropout)
    }

    /// Encoder output for decoding; `states` must be given in hidden mode.
    pub fn memory(&self, params: &ParamStore, tokens: Option<&[u32]>, states: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::inference(params);
        let source = match (tokens, states) {
            (Some(t), None) => MtSource::Tokens(t),
            (None, Some(s)) => MtSource::States(g.tape.constant(s.clone())),
            _ => return Err(Error::InvalidArgument("exactly one MT source must be given".into())),
        };
        let m = self.encode(&mut g, source)?;
        Ok(g.tape.value(m).clone())
    }

    pub fn next_log_probs(&self, params: &ParamStore, memory: &Tensor, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        next_log_probs(&self.decoder, params, memory, prefixes)
    }
}

/// Per-example losses of a joint forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub l_total: f64,
    pub l_mt: f64,
    pub l_asr: f64,
    pub mt_tokens: usize,
    pub asr_tokens: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct JointForward {
    pub total: Var,
    pub mt: TeacherForced,
    pub asr: TeacherForced,
}

/// ASR and MT modules in one graph: the MT encoder reads the ASR
/// decoder-top states, and the objective is `L_mt + lambda * L_asr`.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub asr: AsrModel,
    pub mt: MtModel,
    pub lambda: f64,
}

impl JointModel {
    pub fn build(config: &JointConfig, sink: &mut impl ParamSink) -> Result<Self> {
        config.validate()?;
        Ok(JointModel {
            asr: AsrModel::build(&config.asr, sink, "asr.")?,
            mt: MtModel::build(&config.mt, sink, "mt.")?,
            lambda: config.lambda,
        })
    }

    pub fn forward(&self, g: &mut Graph, features: &FeatureMatrix, transcript: &[u32], target: &[u32]) -> Result<JointForward> {
        if target.is_empty() {
            return Err(Error::Empty("target".into()));
        }
        let asr = self.asr.forward(g, features, transcript)?;
        let mt = self.mt.forward(g, MtSource::States(asr.states), target)?;
        let weighted = g.tape.scale(asr.loss, self.lambda)?;
        let total = g.tape.add(mt.loss, weighted)?;
        Ok(JointForward { total, mt, asr })
    }

    pub fn report(&self, g: &Graph, f: &JointForward) -> LossReport {
        LossReport {
            l_total: g.tape.value(f.total).item(),
            l_mt: g.tape.value(f.mt.loss).item(),
            l_asr: g.tape.value(f.asr.loss).item(),
            mt_tokens: f.mt.tokens,
            asr_tokens: f.asr.tokens,
        }
    }

    /// Teacher-forces the ASR decoder with an externally produced
    /// hypothesis, then takes one more decoding step. Returns the
    /// `hypothesis.len() + 1` bridge states and the token generated by
    /// that extra step.
    pub fn forced_continuation(&self, params: &ParamStore, features: &FeatureMatrix, hypothesis: &[u32]) -> Result<(Tensor, u32)> {
        let memory = self.asr.memory(params, features)?;
        self.asr.forced_states(params, &memory, hypothesis)
    }
}
