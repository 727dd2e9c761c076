//! Fixtures for the kernel benchmarks.

use cascade_core::audio::Waveform;
use cascade_core::model::{InputSpec, Model, ModelConfig, TransformerConfig};
use cascade_core::tensor::Tensor;
use cascade_core::text::Granularity;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Desk-sized token-input MT model.
pub fn desk_mt(vocab: usize) -> Model {
    let cfg = TransformerConfig {
        encoder_layers: 2,
        decoder_layers: 2,
        d_model: 64,
        d_ff: 128,
        heads: 4,
        dropout: 0.0,
        label_smoothing: 0.1,
        input: InputSpec::Tokens { vocab, granularity: Granularity::Bpe },
        target_vocab: vocab,
        target_granularity: Granularity::Bpe,
    };
    Model::new(ModelConfig::Mt(cfg), 1).unwrap()
}

/// A second of two-tone audio with light noise.
pub fn tone(seconds: f64, sample_rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = (seconds * sample_rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 960.0 * t).sin()
                + rng.gen_range(-0.01..0.01)
        })
        .collect();
    Waveform::new(samples, sample_rate).unwrap()
}

/// Whitespace sentences over a small word list.
pub fn sentences(n: usize, seed: u64) -> Vec<String> {
    const WORDS: [&str; 12] = ["pe", "su", "ny", "le", "pu", "sy", "ne", "lu", "py", "se", "nu", "ly"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..rng.gen_range(3..12)).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" "))
        .collect()
}
