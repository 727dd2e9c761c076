use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Gradients, Init, Mask, ParamId, ParamSink, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// A forward pass in progress: a tape plus lazily bound parameters.
///
/// In training mode parameters are bound as trainable leaves and dropout is
/// active; in inference mode they are constants and dropout is the identity.
pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    bound: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
    trainable: bool,
}

impl<'p> Graph<'p> {
    /// Trainable parameters; dropout active when `dropout_seed` is given.
    pub fn training(params: &'p ParamStore, dropout_seed: Option<u64>) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            dropout_rng: dropout_seed.map(ChaCha8Rng::seed_from_u64),
            trainable: true,
        }
    }

    pub fn inference(params: &'p ParamStore) -> Self {
        Graph { tape: Tape::new(), params, bound: vec![None; params.len()], dropout_rng: None, trainable: false }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.index()] {
            return v;
        }
        let t = self.params.get(id).clone();
        let v = if self.trainable { self.tape.param(t) } else { self.tape.constant(t) };
        self.bound[id.index()] = Some(v);
        v
    }

    /// The var a parameter was bound to, if the forward pass touched it.
    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bound[id.index()]
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        let Some(rng) = self.dropout_rng.as_mut() else { return Ok(x) };
        if p <= 0.0 {
            return Ok(x);
        }
        let shape = self.tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() >= p { scale } else { 0.0 }).collect();
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Per-parameter gradients aligned with the store; `None` where the
    /// parameter was unused or received no gradient.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.bound.iter().map(|b| b.and_then(|v| grads.try_get(v))).collect()
    }
}

pub fn sinusoidal_positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * rate;
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, d], data).expect("positive positional shape")
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(sink: &mut impl ParamSink, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::with_init(sink, name, fan_in, fan_out, Init::xavier(fan_in, fan_out))
    }

    pub fn with_init(sink: &mut impl ParamSink, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Self {
        Linear {
            weight: sink.add(&format!("{name}.weight"), &[fan_in, fan_out], init),
            bias: sink.add(&format!("{name}.bias"), &[fan_out], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(sink: &mut impl ParamSink, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: sink.add(&format!("{name}.gain"), &[d], Init::Ones),
            bias: sink.add(&format!("{name}.bias"), &[d], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.tape.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(sink: &mut impl ParamSink, name: &str, d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            query: Linear::new(sink, &format!("{name}.query"), d, d),
            key: Linear::new(sink, &format!("{name}.key"), d, d),
            value: Linear::new(sink, &format!("{name}.value"), d, d),
            out: Linear::new(sink, &format!("{name}.out"), d, d),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: Option<&Mask>) -> Result<Var> {
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        let a = g.tape.attention(q, k, v, mask, self.heads)?;
        self.out.forward(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    pub fn new(sink: &mut impl ParamSink, name: &str, d: usize, d_ff: usize) -> Self {
        FeedForward {
            inner: Linear::new(sink, &format!("{name}.inner"), d, d_ff),
            outer: Linear::new(sink, &format!("{name}.outer"), d_ff, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.tape.relu(h)?;
        let h = g.dropout(h, dropout)?;
        self.outer.forward(g, h)
    }
}

/// Pre-norm encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    norm_attn: LayerNorm,
    attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl EncoderLayer {
    pub fn new(sink: &mut impl ParamSink, name: &str, d: usize, d_ff: usize, heads: usize) -> Self {
        EncoderLayer {
            norm_attn: LayerNorm::new(sink, &format!("{name}.norm_attn"), d),
            attn: MultiHeadAttention::new(sink, &format!("{name}.attn"), d, heads),
            norm_ff: LayerNorm::new(sink, &format!("{name}.norm_ff"), d),
            ff: FeedForward::new(sink, &format!("{name}.ff"), d, d_ff),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Result<Var> {
        let h = self.norm_attn.forward(g, x)?;
        let h = self.attn.forward(g, h, h, None)?;
        let h = g.dropout(h, dropout)?;
        let x = g.tape.add(x, h)?;
        let h = self.norm_ff.forward(g, x)?;
        let h = self.ff.forward(g, h, dropout)?;
        let h = g.dropout(h, dropout)?;
        g.tape.add(x, h)
    }
}

/// Pre-norm decoder layer with causal self-attention and cross-attention.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_ff: LayerNorm,
    ff: FeedForward,
}

impl DecoderLayer {
    pub fn new(sink: &mut impl ParamSink, name: &str, d: usize, d_ff: usize, heads: usize) -> Self {
        DecoderLayer {
            norm_self: LayerNorm::new(sink, &format!("{name}.norm_self"), d),
            self_attn: MultiHeadAttention::new(sink, &format!("{name}.self_attn"), d, heads),
            norm_cross: LayerNorm::new(sink, &format!("{name}.norm_cross"), d),
            cross_attn: MultiHeadAttention::new(sink, &format!("{name}.cross_attn"), d, heads),
            norm_ff: LayerNorm::new(sink, &format!("{name}.norm_ff"), d),
            ff: FeedForward::new(sink, &format!("{name}.ff"), d, d_ff),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, causal: &Mask, dropout: f64) -> Result<Var> {
        let h = self.norm_self.forward(g, x)?;
        let h = self.self_attn.forward(g, h, h, Some(causal))?;
        let h = g.dropout(h, dropout)?;
        let x = g.tape.add(x, h)?;
        let h = self.norm_cross.forward(g, x)?;
        let h = self.cross_attn.forward(g, h, memory, None)?;
        let h = g.dropout(h, dropout)?;
        let x = g.tape.add(x, h)?;
        let h = self.norm_ff.forward(g, x)?;
        let h = self.ff.forward(g, h, dropout)?;
        let h = g.dropout(h, dropout)?;
        g.tape.add(x, h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

impl Encoder {
    pub fn new(sink: &mut impl ParamSink, name: &str, n: usize, d: usize, d_ff: usize, heads: usize) -> Self {
        Encoder {
            layers: (0..n).map(|i| EncoderLayer::new(sink, &format!("{name}.layer{i}"), d, d_ff, heads)).collect(),
            norm: LayerNorm::new(sink, &format!("{name}.norm"), d),
        }
    }

    /// `x` already carries positional information.
    pub fn forward(&self, g: &mut Graph, mut x: Var, dropout: f64) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(g, x, dropout)?;
        }
        self.norm.forward(g, x)
    }
}

/// Token decoder: embedding, layers, final norm and output projection.
///
/// The final-norm output is the pre-softmax state that feeds the output
/// projection; [`Decoder::states`] stops there.
#[derive(Clone, Debug)]
pub struct Decoder {
    embedding: ParamId,
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
    pub projection: Linear,
    d_model: usize,
}

impl Decoder {
    pub fn new(sink: &mut impl ParamSink, name: &str, n: usize, d: usize, d_ff: usize, heads: usize, vocab: usize) -> Self {
        Decoder {
            embedding: sink.add(&format!("{name}.embedding"), &[vocab, d], Init::Uniform((3.0 / d as f64).sqrt())),
            layers: (0..n).map(|i| DecoderLayer::new(sink, &format!("{name}.layer{i}"), d, d_ff, heads)).collect(),
            norm: LayerNorm::new(sink, &format!("{name}.norm"), d),
            // logits start with std ~0.3 so the untrained output is close to uniform
            projection: Linear::with_init(sink, &format!("{name}.projection"), d, vocab, Init::Uniform(0.5 / (d as f64).sqrt())),
            d_model: d,
        }
    }

    /// Decoder-top states `[prefix.len(), d]` for a bos-initial prefix.
    pub fn states(&self, g: &mut Graph, memory: Var, prefix: &[u32], dropout: f64) -> Result<Var> {
        let ids: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
        let table = g.param(self.embedding);
        let x = g.tape.embedding(table, &ids)?;
        let x = g.tape.scale(x, (self.d_model as f64).sqrt())?;
        let pe = g.tape.constant(sinusoidal_positions(ids.len(), self.d_model));
        let x = g.tape.add(x, pe)?;
        let mut x = g.dropout(x, dropout)?;
        let causal = Mask::causal(ids.len());
        for layer in &self.layers {
            x = layer.forward(g, x, memory, &causal, dropout)?;
        }
        self.norm.forward(g, x)
    }

    pub fn logits(&self, g: &mut Graph, states: Var) -> Result<Var> {
        self.projection.forward(g, states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_sin_cos_pairs() {
        let pe = sinusoidal_positions(3, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe.row(2)[3] - (2.0 / 100f64).cos()).abs() < 1e-15);
    }

    #[test]
    fn inference_graph_has_no_gradients_and_no_dropout() {
        let mut store = ParamStore::new(1);
        let lin = Linear::new(&mut store, "l", 3, 2);
        let mut g = Graph::inference(&store);
        let x = g.tape.constant(Tensor::full(&[2, 3], 1.0));
        let y = lin.forward(&mut g, x).unwrap();
        let y2 = g.dropout(y, 0.5).unwrap();
        assert_eq!(y, y2);
    }
}
