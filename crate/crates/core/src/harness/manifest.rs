use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub talk: String,
    pub split: String,
    /// Relative to the manifest directory.
    pub wav: PathBuf,
    pub source: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub utterances: Vec<Utterance>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    utterances: Vec<Utterance>,
}

impl Manifest {
    pub fn new(root: PathBuf, utterances: Vec<Utterance>) -> Result<Self> {
        let mut ids = HashSet::new();
        for u in &utterances {
            if !ids.insert(u.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate utterance id {}", u.id)));
            }
        }
        Ok(Manifest { root, utterances })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let file: ManifestFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.version != 1 {
            return Err(Error::format("manifest", format!("unsupported version {}", file.version)));
        }
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let m = Manifest::new(root, file.utterances)?;
        m.check_paths()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ManifestFile { version: 1, utterances: self.utterances.clone() };
        fs::write(path, serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    /// Every waveform path must resolve.
    pub fn check_paths(&self) -> Result<()> {
        for u in &self.utterances {
            let p = self.wav_path(u);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn wav_path(&self, u: &Utterance) -> PathBuf {
        self.root.join(&u.wav)
    }

    pub fn split(&self, name: &str) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == name).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}
