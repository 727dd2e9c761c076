//! Synthetic speech translation task: tone-coded source words, rule-based
//! target sentences, grouped into pseudo-talks.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, Utterance};
use crate::audio::{write_wav, Waveform};
use crate::error::{Error, Result};

const SOURCE_ONSETS: [char; 3] = ['k', 'm', 't'];
const SOURCE_VOWELS: [char; 3] = ['a', 'o', 'i'];
const TARGET_ONSETS: [char; 4] = ['p', 's', 'n', 'l'];
const TARGET_VOWELS: [char; 3] = ['e', 'u', 'y'];

/// How a source sentence becomes its translation. Each rule is a bijection
/// on word sequences, so a perfect translation always exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Map every word, then reverse the sentence.
    Reverse,
    /// Map every word to the target word one position further along.
    Shift,
    /// Map every word, then swap adjacent pairs.
    LocalReorder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub seed: u64,
    /// Number of distinct source words (at most 9).
    pub vocabulary: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub rule: Rule,
    pub sample_rate: u32,
    /// Frequency of the first word's tone; later words step up by `step_hz`.
    pub base_hz: f64,
    pub step_hz: f64,
    pub word_ms: f64,
    pub gap_ms: f64,
    /// Standard deviation of additive Gaussian noise (signal peak is 0.5).
    pub noise: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub talk_size: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            seed: 7,
            vocabulary: 8,
            min_words: 2,
            max_words: 5,
            rule: Rule::Reverse,
            sample_rate: 16_000,
            base_hz: 300.0,
            step_hz: 220.0,
            word_ms: 120.0,
            gap_ms: 40.0,
            noise: 0.02,
            train: 800,
            dev: 40,
            test: 60,
            talk_size: 10,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let max_vocab = SOURCE_ONSETS.len() * SOURCE_VOWELS.len();
        if self.vocabulary < 2 || self.vocabulary > max_vocab {
            return Err(Error::InvalidArgument(format!("vocabulary must be in 2..={max_vocab}, got {}", self.vocabulary)));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::InvalidArgument("need 1 <= min_words <= max_words".into()));
        }
        if self.talk_size == 0 || self.train == 0 || self.dev == 0 || self.test == 0 {
            return Err(Error::InvalidArgument("split and talk sizes must be positive".into()));
        }
        if !(self.noise >= 0.0) || self.word_ms <= 0.0 || self.gap_ms < 0.0 || self.sample_rate < 8000 {
            return Err(Error::InvalidArgument("invalid acoustic rendering parameters".into()));
        }
        let top = self.base_hz + self.step_hz * (self.vocabulary - 1) as f64;
        if self.base_hz <= 0.0 || top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::InvalidArgument(format!("tone frequencies must lie in (0, Nyquist); top is {top}")));
        }
        Ok(())
    }

    pub fn source_words(&self) -> Vec<String> {
        SOURCE_ONSETS
            .iter()
            .flat_map(|c| SOURCE_VOWELS.iter().map(move |v| format!("{c}{v}")))
            .take(self.vocabulary)
            .collect()
    }

    pub fn target_words(&self) -> Vec<String> {
        TARGET_ONSETS
            .iter()
            .flat_map(|c| TARGET_VOWELS.iter().map(move |v| format!("{c}{v}")))
            .take(self.vocabulary)
            .collect()
    }

    pub fn tone_hz(&self, word: usize) -> f64 {
        self.base_hz + self.step_hz * word as f64
    }

    /// Target sentence for a sequence of source word indices.
    pub fn translate(&self, source: &[usize]) -> Vec<usize> {
        let n = self.vocabulary;
        match self.rule {
            Rule::Reverse => source.iter().rev().copied().collect(),
            Rule::Shift => source.iter().map(|&w| (w + 1) % n).collect(),
            Rule::LocalReorder => {
                let mut out = source.to_vec();
                for pair in out.chunks_mut(2) {
                    pair.reverse();
                }
                out
            }
        }
    }

    /// Tone-per-word waveform with short fades, silence between words and
    /// 50 ms of silence at either end.
    pub fn render(&self, words: &[usize], rng: &mut impl Rng) -> Result<Waveform> {
        let sr = self.sample_rate as f64;
        let word_n = (self.word_ms / 1000.0 * sr).round() as usize;
        let gap_n = (self.gap_ms / 1000.0 * sr).round() as usize;
        let edge_n = (0.05 * sr) as usize;
        let fade_n = ((0.01 * sr) as usize).min(word_n / 2).max(1);
        let mut samples = vec![0.0; edge_n];
        for (k, &w) in words.iter().enumerate() {
            if k > 0 {
                samples.extend(std::iter::repeat(0.0).take(gap_n));
            }
            let f = self.tone_hz(w);
            for i in 0..word_n {
                let env = if i < fade_n {
                    i as f64 / fade_n as f64
                } else if i + fade_n > word_n {
                    (word_n - i) as f64 / fade_n as f64
                } else {
                    1.0
                };
                samples.push(0.5 * env * (2.0 * PI * f * i as f64 / sr).sin());
            }
        }
        samples.extend(std::iter::repeat(0.0).take(edge_n));
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for s in samples.iter_mut() {
                *s += normal.sample(rng);
            }
        }
        Waveform::new(samples, self.sample_rate)
    }
}

/// Writes waveforms under `dir/wav` and returns the manifest (also saved
/// as `dir/manifest.json`). The same spec always yields the same bytes.
pub fn generate_synthetic_task(spec: &SyntheticTaskSpec, dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let src_words = spec.source_words();
    let tgt_words = spec.target_words();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut utterances = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (split, count) in [("train", spec.train), ("dev", spec.dev), ("test", spec.test)] {
        for i in 0..count {
            // held-out splits avoid sentences seen earlier when the space allows it
            let mut words;
            let mut tries = 0;
            loop {
                let len = rng.gen_range(spec.min_words..=spec.max_words);
                words = (0..len).map(|_| rng.gen_range(0..spec.vocabulary)).collect::<Vec<_>>();
                tries += 1;
                if split == "train" || !seen.contains(&words) || tries > 50 {
                    break;
                }
            }
            seen.insert(words.clone());
            let target = spec.translate(&words);
            let id = format!("{split}-{i:05}");
            let wave = spec.render(&words, &mut rng)?;
            let rel = Path::new("wav").join(format!("{id}.wav"));
            write_wav(&dir.join(&rel), &wave)?;
            utterances.push(Utterance {
                id,
                talk: format!("{split}-talk{:03}", i / spec.talk_size),
                split: split.to_string(),
                wav: rel,
                source: words.iter().map(|&w| src_words[w].as_str()).collect::<Vec<_>>().join(" "),
                target: target.iter().map(|&w| tgt_words[w].as_str()).collect::<Vec<_>>().join(" "),
            });
        }
    }
    let manifest = Manifest::new(dir.to_path_buf(), utterances)?;
    manifest.save(&dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Random permutation of `0..n` from a seed, used for epoch shuffling.
pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}
