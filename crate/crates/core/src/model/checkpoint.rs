//! Checkpoint files.
//!
//! ```text
//! b"PXCKPT01" | u32 meta_len | meta (TOML text) | u32 tensor_count
//! per tensor: u32 name_len | name | u32 rank | rank * u32 dims | f32 LE values
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{Params, Tensor};
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 8] = b"PXCKPT01";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Free-form metadata stored next to the model configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub step: u64,
    /// Size of the tokenizer the model was trained with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub n_outputs: usize,
    pub labels: Vec<String>,
    pub modality: String,
    pub render_mode: String,
    pub metric: String,
    pub pair_input: bool,
    pub patch_budget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(meta: CheckpointMeta, params: &Params<f32>) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor { name, shape: t.shape.clone(), data: t.data.clone() })
            .collect();
        Self { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuild the model parameters; tensors not belonging to the base
    /// model (e.g. task heads) are ignored.
    pub fn params(&self) -> Result<Params<f32>> {
        let cfg = &self.meta.model;
        cfg.validate()?;
        let mut params = Params::<f32>::zeros(cfg);
        for (name, slot) in params.tensors_mut() {
            let t = self.get(&name).ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
            if t.shape != slot.shape {
                return Err(Error::ConfigMismatch(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    t.shape, slot.shape
                )));
            }
            *slot = Tensor { shape: t.shape.clone(), data: t.data.clone() };
        }
        Ok(params)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let meta_len = read_u32(&mut r)? as usize;
        if meta_len > 1 << 20 {
            return Err(Error::CorruptCheckpoint("implausible metadata length".into()));
        }
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(corrupt)?;
        let meta = String::from_utf8(meta).map_err(|_| Error::CorruptCheckpoint("metadata is not UTF-8".into()))?;
        let meta: CheckpointMeta = toml::from_str(&meta).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(Error::CorruptCheckpoint("implausible tensor name length".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(corrupt)?;
            let name = String::from_utf8(name).map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::CorruptCheckpoint(format!("tensor {name} has rank {rank}")));
            }
            let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            if numel > 1 << 30 {
                return Err(Error::CorruptCheckpoint(format!("tensor {name} is implausibly large")));
            }
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf).map_err(corrupt)?;
            let data = buf.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn corrupt(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::CorruptCheckpoint("unexpected end of file".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(corrupt)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let cfg = ModelConfig::tiny();
        let params: Params<f32> = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let ckpt = Checkpoint::from_params(CheckpointMeta { model: cfg, step: 12, tokenizer_size: Some(300), task: None }, &params);
        let mut bytes = Vec::new();
        ckpt.write(&mut bytes).unwrap();
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.params().unwrap(), params);
        let mut bad = bytes.clone();
        bad[3] ^= 0xff;
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(Error::CorruptCheckpoint(_))));
        assert!(matches!(Checkpoint::read(&bytes[..bytes.len() - 1]), Err(Error::CorruptCheckpoint(_))));
    }
}
