//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use cascade_core::audio::{FeatureKind, FeatureMatrix};
use cascade_core::decode::StepScorer;
use cascade_core::model::{Example, InputSpec, JointConfig, Model, ModelConfig, TransformerConfig};
use cascade_core::tensor::{grad_check, Mask, Tape, Tensor, Var};
use cascade_core::text::{Granularity, EOS};
use cascade_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let t = random(&[frames, dim], seed);
    FeatureMatrix::new(t.data().to_vec(), frames, dim, 0.01, FeatureKind::Normalized).unwrap()
}

// ---------------------------------------------------------------- gradients

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Random linear functional of `y`, so every output coordinate matters.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = t.constant(random(&t.shape(y).to_vec(), seed));
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn check(point: Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    grad_check(f, &point, GRAD_EPS).unwrap()
}

fn attention_case(which: usize, masked: bool, heads: usize) -> f64 {
    let (n, m, d) = (3, 4, 4);
    let inputs = [random(&[n, d], 40), random(&[m, d], 41), random(&[m, d], 42)];
    let mask = masked.then(|| {
        let allowed = vec![true, false, false, false, true, true, false, true, true, true, true, false];
        Mask::new(n, m, allowed).unwrap()
    });
    check(inputs[which].clone(), |t, x| {
        let vars: Vec<Var> =
            (0..3).map(|i| if i == which { x } else { t.constant(inputs[i].clone()) }).collect();
        let y = t.attention(vars[0], vars[1], vars[2], mask.as_ref(), heads)?;
        project(t, y, 43)
    })
}

fn layer_norm_case(which: usize) -> f64 {
    let inputs = [random(&[4, 6], 33), random(&[6], 31), random(&[6], 32)];
    check(inputs[which].clone(), |t, x| {
        let v: Vec<Var> = (0..3).map(|i| if i == which { x } else { t.constant(inputs[i].clone()) }).collect();
        let y = t.layer_norm(v[0], v[1], v[2], 1e-6)?;
        project(t, y, 34 + which as u64)
    })
}

/// Every differentiable tape operation, by name.
pub const PRIMITIVES: &[&str] = &[
    "matmul lhs",
    "matmul rhs",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "add_bias input",
    "add_bias bias",
    "sum",
    "softmax rows",
    "softmax columns",
    "layer_norm input",
    "layer_norm gain",
    "layer_norm bias",
    "attention query",
    "attention key",
    "attention value",
    "attention two heads",
    "masked attention query",
    "masked attention key",
    "masked attention value",
    "embedding",
    "unfold",
    "cross_entropy",
    "smoothed cross_entropy",
    "residual block",
];

/// Max relative error of the autodiff gradient against central
/// differences for one named primitive.
pub fn primitive_error(name: &str) -> f64 {
    let other = random(&[3, 4], 7);
    match name {
        "matmul lhs" => check(random(&[2, 4], 2), |t, x| {
            let b = t.constant(random(&[4, 3], 1));
            let y = t.matmul(x, b)?;
            project(t, y, 3)
        }),
        "matmul rhs" => check(random(&[4, 3], 5), |t, x| {
            let a = t.constant(random(&[2, 4], 4));
            let y = t.matmul(a, x)?;
            project(t, y, 6)
        }),
        "add" => check(random(&[3, 4], 8), |t, x| {
            let o = t.constant(other.clone());
            let y = t.add(x, o)?;
            let y = t.mul(y, y)?;
            project(t, y, 9)
        }),
        "sub" => check(random(&[3, 4], 10), |t, x| {
            let o = t.constant(other.clone());
            let y = t.sub(o, x)?;
            project(t, y, 11)
        }),
        "mul" => check(random(&[3, 4], 12), |t, x| {
            let o = t.constant(other.clone());
            let y = t.mul(x, o)?;
            let y = t.mul(y, x)?;
            project(t, y, 13)
        }),
        "scale" => check(random(&[3, 4], 14), |t, x| {
            let y = t.scale(x, -2.5)?;
            project(t, y, 15)
        }),
        "relu" => {
            // keep every coordinate away from the kink
            let mut p = random(&[3, 4], 16);
            for v in p.data_mut() {
                *v += 0.1f64.copysign(*v);
            }
            check(p, |t, x| {
                let y = t.relu(x)?;
                project(t, y, 17)
            })
        }
        "add_bias input" => check(random(&[5, 3], 19), |t, x| {
            let b = t.constant(random(&[3], 20));
            let y = t.add_bias(x, b)?;
            let y = t.mul(y, y)?;
            t.sum(y)
        }),
        "add_bias bias" => check(random(&[3], 17), |t, b| {
            let x = t.constant(random(&[5, 3], 18));
            let y = t.add_bias(x, b)?;
            let y = t.mul(y, y)?;
            project(t, y, 18)
        }),
        "sum" => check(random(&[2, 5], 21), |t, x| {
            let y = t.mul(x, x)?;
            t.sum(y)
        }),
        "softmax rows" | "softmax columns" => {
            let axis = usize::from(name == "softmax columns");
            check(random(&[3, 5], 22 + axis as u64), move |t, x| {
                let y = t.softmax(x, axis)?;
                project(t, y, 30)
            })
        }
        "layer_norm input" => layer_norm_case(0),
        "layer_norm gain" => layer_norm_case(1),
        "layer_norm bias" => layer_norm_case(2),
        "attention query" => attention_case(0, false, 1),
        "attention key" => attention_case(1, false, 1),
        "attention value" => attention_case(2, false, 1),
        "attention two heads" => (0..3).map(|w| attention_case(w, false, 2)).fold(0.0, f64::max),
        "masked attention query" => attention_case(0, true, 2),
        "masked attention key" => attention_case(1, true, 2),
        "masked attention value" => attention_case(2, true, 2),
        "embedding" => check(random(&[5, 3], 50), |t, table| {
            let y = t.embedding(table, &[4, 0, 4, 2])?;
            project(t, y, 51)
        }),
        "unfold" => check(random(&[7, 2], 52), |t, x| {
            let y = t.unfold(x, 3, 2, 1)?;
            project(t, y, 53)
        }),
        "cross_entropy" => check(random(&[4, 6], 54), |t, x| t.cross_entropy(x, &[0, 5, 2, 2], 0.0)),
        "smoothed cross_entropy" => check(random(&[4, 6], 55), |t, x| t.cross_entropy(x, &[0, 5, 2, 2], 0.1)),
        "residual block" => check(random(&[4, 4], 60), |t, x| {
            let g = t.constant(random(&[4], 61));
            let b = t.constant(random(&[4], 62));
            let w = t.constant(random(&[4, 4], 63));
            let h = t.layer_norm(x, g, b, 1e-6)?;
            let h = t.matmul(h, w)?;
            let a = t.attention(h, h, h, Some(&Mask::causal(4)), 2)?;
            let r = t.add(x, a)?;
            t.cross_entropy(r, &[1, 3, 0, 2], 0.1)
        }),
        _ => panic!("unknown primitive {name}"),
    }
}

pub fn tiny_transformer(d: usize, input: InputSpec, vocab: usize) -> TransformerConfig {
    TransformerConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        d_model: d,
        d_ff: 2 * d,
        heads: 2,
        dropout: 0.0,
        label_smoothing: 0.1,
        input,
        target_vocab: vocab,
        target_granularity: Granularity::Bpe,
    }
}

pub fn tiny_joint(d: usize, feature_dim: usize, lambda: f64) -> ModelConfig {
    ModelConfig::Joint(JointConfig {
        asr: tiny_transformer(d, InputSpec::Speech { feature_dim }, 7),
        mt: tiny_transformer(d, InputSpec::Hidden { width: d }, 9),
        lambda,
    })
}

/// Checks every coordinate of every parameter of a small joint model
/// against a fourth-order central difference of the full loss
/// `L_mt + lambda * L_asr`. Returns (coordinates, worst relative error,
/// name of the worst coordinate).
pub fn joint_model_gradient() -> (usize, f64, String) {
    let mut model = Model::new(tiny_joint(8, 4, 0.5), 3).unwrap();
    let feats = random_features(10, 4, 70);
    let (z, y) = (vec![4u32, 6, 5], vec![8u32, 4, 7, 5]);
    let ex = Example { features: Some(&feats), transcript: &z, target: &y };
    let (_, grads) = model.loss_and_grads(&ex, None).unwrap();

    let ids: Vec<_> = model.params.ids().collect();
    let (mut count, mut worst, mut at) = (0, 0.0f64, String::new());
    for id in ids {
        let n = model.params.get(id).numel();
        let analytic = grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(model.params.get(id).shape()));
        for i in 0..n {
            let orig = model.params.get(id).data()[i];
            // the fourth-order stencil keeps round-off below the tiniest gradients
            let mut loss_at = |delta: f64| {
                model.params.get_mut(id).data_mut()[i] = orig + delta;
                model.loss(&ex).unwrap().l_total
            };
            let h = 1e-3;
            let numeric = (loss_at(-2.0 * h) - 8.0 * loss_at(-h) + 8.0 * loss_at(h) - loss_at(2.0 * h)) / (12.0 * h);
            model.params.get_mut(id).data_mut()[i] = orig;
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > worst {
                worst = err;
                at = format!("{}[{i}]", model.params.name(id));
            }
            count += 1;
        }
    }
    (count, worst, at)
}

// ---------------------------------------------------------------- search

/// Distribution that is a fixed random function of (seed, prefix).
#[derive(Clone)]
pub struct RandomScorer {
    pub vocab: usize,
    pub seed: u64,
    pub sharpness: f64,
}

impl RandomScorer {
    pub fn dist(&self, prefix: &[u32]) -> Vec<f64> {
        let mut h = DefaultHasher::new();
        (self.seed, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * rng.gen::<f64>()).collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }
}

impl StepScorer for RandomScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn next_log_probs(&mut self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes.iter().map(|p| self.dist(p)).collect())
    }
}

/// Best eos-terminated sequence of at most `max_len` tokens by raw score.
pub fn exhaustive(s: &RandomScorer, max_len: usize) -> (Vec<u32>, f64) {
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut frontier = vec![(Vec::<u32>::new(), 0.0)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (prefix, ll) in frontier {
            let d = s.dist(&prefix);
            for v in 0..s.vocab as u32 {
                let mut t = prefix.clone();
                t.push(v);
                let l = ll + d[v as usize];
                if v == EOS {
                    let better = match &best {
                        None => true,
                        Some((bt, bl)) => l > *bl || (l == *bl && (t.len(), &t) < (bt.len(), bt)),
                    };
                    if better {
                        best = Some((t, l));
                    }
                } else {
                    next.push((t, l));
                }
            }
        }
        frontier = next;
    }
    best.unwrap()
}

/// Log-likelihood of `tokens` under `scorer`, one step at a time.
pub fn forced_log_likelihood(scorer: &mut dyn StepScorer, tokens: &[u32]) -> f64 {
    (0..tokens.len()).map(|k| scorer.next_log_probs(&[&tokens[..k]]).unwrap()[0][tokens[k] as usize]).sum()
}

// ---------------------------------------------------------------- metrics

/// Levenshtein distance by plain memoized recursion.
pub fn brute_edit_distance<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    fn go<T: PartialEq>(r: &[T], h: &[T], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if r.is_empty() || h.is_empty() {
            return r.len() + h.len();
        }
        if let Some(&v) = memo.get(&(r.len(), h.len())) {
            return v;
        }
        let sub = go(&r[1..], &h[1..], memo) + usize::from(r[0] != h[0]);
        let del = go(&r[1..], h, memo) + 1;
        let ins = go(r, &h[1..], memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((r.len(), h.len()), v);
        v
    }
    go(r, h, &mut HashMap::new())
}

/// Minimal summed edit distance over every way of cutting `stream` into
/// `references.len()` consecutive pieces.
pub fn brute_segmentation<T: PartialEq>(stream: &[T], references: &[Vec<T>]) -> usize {
    fn go<T: PartialEq>(stream: &[T], refs: &[Vec<T>]) -> usize {
        match refs {
            [] => unreachable!(),
            [last] => brute_edit_distance(last, stream),
            [first, rest @ ..] => (0..=stream.len())
                .map(|cut| brute_edit_distance(first, &stream[..cut]) + go(&stream[cut..], rest))
                .min()
                .unwrap(),
        }
    }
    go(stream, references)
}

/// All words of length `0..=max_len` over `alphabet`.
pub fn all_words(alphabet: &[&'static str], max_len: usize) -> Vec<Vec<&'static str>> {
    let mut out = vec![vec![]];
    let mut layer: Vec<Vec<&'static str>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|w| alphabet.iter().map(move |a| w.iter().copied().chain([*a]).collect::<Vec<_>>()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}
