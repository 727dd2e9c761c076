use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::manifest::{Manifest, Utterance};
use crate::audio::{extract, read_wav, FeatureMatrix, MelConfig};
use crate::error::{Error, Result};
use crate::model::VocabFingerprint;
use crate::text::{normalize_text, Granularity, SubwordModel, UNK};

/// Source (transcript) and target (translation) vocabularies of a run.
#[derive(Clone, Debug)]
pub struct Vocabularies {
    pub source: SubwordModel,
    pub target: SubwordModel,
}

impl Vocabularies {
    /// Learns both vocabularies from the training split.
    pub fn build(config: &ExperimentConfig, manifest: &Manifest) -> Result<Self> {
        let train = manifest.split("train");
        if train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let sources: Vec<String> = train.iter().map(|u| normalize_text(&u.source)).collect();
        let targets: Vec<String> = train.iter().map(|u| normalize_text(&u.target)).collect();
        let source = match config.vocab.source_granularity {
            Granularity::Character => SubwordModel::learn_characters(&sources)?,
            Granularity::Bpe => SubwordModel::learn_bpe(&sources, config.vocab.source_size)?,
        };
        let target = SubwordModel::learn_bpe(&targets, config.vocab.target_size)?;
        Ok(Vocabularies { source, target })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.source.save(&dir.join("source.vocab"))?;
        self.target.save(&dir.join("target.vocab"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load = |name: &str| {
            let p = dir.join(name);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            SubwordModel::load(&p)
        };
        Ok(Vocabularies { source: load("source.vocab")?, target: load("target.vocab")? })
    }

    pub fn fingerprints(&self) -> Vec<VocabFingerprint> {
        vec![
            VocabFingerprint::new("source", self.source.fingerprint()),
            VocabFingerprint::new("target", self.target.fingerprint()),
        ]
    }
}

/// One utterance ready for training or decoding.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub talk: String,
    pub features: FeatureMatrix,
    pub transcript: Vec<u32>,
    pub target: Vec<u32>,
}

fn encode(vocab: &SubwordModel, text: &str, what: &str, id: &str) -> Result<Vec<u32>> {
    let ids = vocab.encode(&normalize_text(text)).ids;
    if ids.is_empty() {
        return Err(Error::Empty(format!("{what} of {id}")));
    }
    if ids.contains(&UNK) {
        log::warn!("{what} of {id} contains out-of-vocabulary symbols");
    }
    Ok(ids)
}

/// Features for every utterance of `split`, extracted in parallel, in
/// manifest order.
pub fn load_split(manifest: &Manifest, split: &str, vocabs: &Vocabularies) -> Result<Vec<Sample>> {
    let mel = MelConfig::default();
    manifest
        .split(split)
        .par_iter()
        .map(|u: &&Utterance| {
            let features = extract(&read_wav(&manifest.wav_path(u))?, &mel)?;
            Ok(Sample {
                id: u.id.clone(),
                talk: u.talk.clone(),
                features,
                transcript: encode(&vocabs.source, &u.source, "transcript", &u.id)?,
                target: encode(&vocabs.target, &u.target, "translation", &u.id)?,
            })
        })
        .collect()
}

/// Standard layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest_path(&self, config: &ExperimentConfig) -> PathBuf {
        config.paths.manifest.clone().unwrap_or_else(|| self.data().join("manifest.json"))
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab")
    }

    pub fn model_dir(&self, system: &str) -> PathBuf {
        self.root.join("models").join(system)
    }

    pub fn final_model(&self, system: &str) -> PathBuf {
        self.model_dir(system).join("final.ckpt")
    }

    pub fn decode_dir(&self, slug: &str) -> PathBuf {
        self.root.join("decode").join(slug)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn references(&self, split: &str, side: &str) -> PathBuf {
        self.root.join("refs").join(format!("{split}.{side}.tsv"))
    }
}
