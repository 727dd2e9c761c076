//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CSTCKPT\0"
//! version    u32      1
//! config     u32 length + UTF-8 JSON of the ModelConfig
//! step       u64
//! vocabs     u32 count, then per entry: u32 length + UTF-8 role, 32-byte SHA-256
//! tensors    u32 count, then per tensor:
//!              u32 length + UTF-8 name, u32 rank, rank x u64 dims,
//!              prod(dims) x f64 values (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{first_difference, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CSTCKPT\0";
const VERSION: u32 = 1;

/// Identity of a vocabulary a model was trained against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabFingerprint {
    /// `transcript` or `translation`.
    pub role: String,
    pub sha256: [u8; 32],
}

impl VocabFingerprint {
    pub fn new(role: &str, sha256: [u8; 32]) -> Self {
        VocabFingerprint { role: role.to_string(), sha256 }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabs: Vec<VocabFingerprint>,
    pub step: u64,
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::format("checkpoint", format!("string length {n}")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::format("checkpoint", e.to_string()))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        put_str(w, &serde_json::to_string(&self.model.config)?)?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.vocabs.len() as u32).to_le_bytes())?;
        for v in &self.vocabs {
            put_str(w, &v.role)?;
            w.write_all(&v.sha256)?;
        }
        w.write_all(&(self.model.params.len() as u32).to_le_bytes())?;
        for (name, t) in self.model.params.iter() {
            put_str(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let config: ModelConfig = serde_json::from_str(&get_str(r)?)?;
        let step = get_u64(r)?;
        let n_vocabs = get_u32(r)?;
        let mut vocabs = Vec::new();
        for _ in 0..n_vocabs {
            let role = get_str(r)?;
            let mut sha256 = [0u8; 32];
            r.read_exact(&mut sha256)?;
            vocabs.push(VocabFingerprint { role, sha256 });
        }
        let n_tensors = get_u32(r)?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = get_str(r)?;
            let rank = get_u32(r)? as usize;
            let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { model: Model::from_tensors(config, tensors)?, vocabs, step })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Loads and rejects a checkpoint whose configuration or vocabularies
    /// differ from what the caller expects.
    pub fn load_checked(path: &Path, config: &ModelConfig, vocabs: &[VocabFingerprint]) -> Result<Self> {
        let ck = Self::load(path)?;
        if let Some(field) = first_difference(config, &ck.model.config) {
            return Err(Error::ConfigMismatch(field));
        }
        ck.check_vocabs(vocabs)?;
        Ok(ck)
    }

    pub fn check_vocabs(&self, expected: &[VocabFingerprint]) -> Result<()> {
        for e in expected {
            match self.vocabs.iter().find(|v| v.role == e.role) {
                Some(v) if v.sha256 == e.sha256 => {}
                Some(_) => return Err(Error::VocabMismatch(format!("{} vocabulary differs", e.role))),
                None => return Err(Error::VocabMismatch(format!("checkpoint has no {} vocabulary", e.role))),
            }
        }
        Ok(())
    }
}

/// Element-wise arithmetic mean of every parameter tensor.
pub fn average_checkpoints(checkpoints: &[Checkpoint]) -> Result<Checkpoint> {
    let first = checkpoints.first().ok_or_else(|| Error::Empty("checkpoint list".into()))?;
    for ck in &checkpoints[1..] {
        if let Some(field) = first_difference(&first.model.config, &ck.model.config) {
            return Err(Error::ConfigMismatch(field));
        }
        if ck.vocabs != first.vocabs {
            return Err(Error::VocabMismatch("checkpoints were trained on different vocabularies".into()));
        }
    }
    let k = checkpoints.len() as f64;
    let mut model = first.model.clone();
    for id in first.model.params.ids() {
        let mut acc = vec![0.0; first.model.params.get(id).numel()];
        for ck in checkpoints {
            for (a, v) in acc.iter_mut().zip(ck.model.params.get(id).data()) {
                *a += v;
            }
        }
        let shape = first.model.params.get(id).shape().to_vec();
        let name = first.model.params.name(id).to_string();
        model.params.set(&name, Tensor::new(shape, acc.into_iter().map(|v| v / k).collect())?)?;
    }
    let step = checkpoints.iter().map(|c| c.step).max().unwrap_or(0);
    Ok(Checkpoint { model, vocabs: first.vocabs.clone(), step })
}
