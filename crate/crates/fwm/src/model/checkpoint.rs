//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic     4 bytes "FWMC"
//! version   u32     1
//! meta_len  u32
//! meta      JSON    config + training metadata
//! tensors   u32     entry count
//! per entry:
//!   name_len u32, name bytes
//!   kind     u8    0 = trainable, 1 = buffer
//!   ndim     u32, dims u32 * ndim
//!   data     f32 * numel
//! ```
//!
//! Entries are written in parameter insertion order, so save → load →
//! save reproduces identical bytes; loaded models produce bit-identical
//! forward passes.

use super::{ModelConfig, WorldModel};
use crate::autodiff::{ParamKind, ParamSet};
use crate::tensor::Tensor;
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FWMC";
const CHECKPOINT_VERSION: u32 = 1;

/// Provenance of a trained model.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub dataset_hash: String,
    pub probe_trained: bool,
    pub inhand_trained: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub train: TrainMeta,
}

pub fn save_checkpoint(path: &Path, model: &WorldModel, meta: &TrainMeta) -> Result<()> {
    let full = CheckpointMeta { config: model.config.clone(), train: meta.clone() };
    let meta_json = serde_json::to_vec(&full)
        .map_err(|e| Error::Checkpoint(format!("meta serialization: {e}")))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(meta_json.len() as u32).to_le_bytes())?;
    out.write_all(&meta_json)?;
    let entries: Vec<_> = model.params.iter().collect();
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor, kind) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&[match kind {
            ParamKind::Trainable => 0u8,
            ParamKind::Buffer => 1u8,
        }])?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(WorldModel, CheckpointMeta)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    file.read_exact(&mut word)?;
    let meta_len = u32::from_le_bytes(word) as usize;
    let mut meta_raw = vec![0u8; meta_len];
    file.read_exact(&mut meta_raw)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_raw)
        .map_err(|e| Error::Checkpoint(format!("meta parse: {e}")))?;
    meta.config.validate()?;

    file.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word);
    let mut params = ParamSet::new();
    for _ in 0..count {
        file.read_exact(&mut word)?;
        let name_len = u32::from_le_bytes(word) as usize;
        let mut name_raw = vec![0u8; name_len];
        file.read_exact(&mut name_raw)?;
        let name = String::from_utf8(name_raw)
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
        let mut kind_raw = [0u8; 1];
        file.read_exact(&mut kind_raw)?;
        let kind = match kind_raw[0] {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            other => return Err(Error::Checkpoint(format!("unknown tensor kind {other}"))),
        };
        file.read_exact(&mut word)?;
        let ndim = u32::from_le_bytes(word) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            file.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f32; numel];
        let mut buf = vec![0u8; numel * 4];
        file.read_exact(&mut buf)?;
        for (v, c) in data.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
        params.insert(&name, Tensor::from_vec(&shape, data)?, kind);
    }
    Ok((WorldModel { config: meta.config.clone(), params }, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing;
    use crate::model::LatentState;
    use crate::sim::Action;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = ModelConfig {
            latent_dim: 8,
            hidden: 32,
            encoder_fc: 16,
            ..ModelConfig::default()
        };
        let model = WorldModel::new(cfg, 42).unwrap();
        let meta = TrainMeta { seed: 42, epochs: 3, dataset_hash: "abc".into(), ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fwmc");
        let p2 = dir.path().join("b.fwmc");
        save_checkpoint(&p1, &model, &meta).unwrap();
        let (loaded, meta2) = load_checkpoint(&p1).unwrap();
        assert_eq!(meta2.train, meta);
        assert_eq!(meta2.config, model.config);
        save_checkpoint(&p2, &loaded, &meta2.train).unwrap();
        assert_eq!(hashing::hash_file(&p1).unwrap(), hashing::hash_file(&p2).unwrap());

        // Forward outputs are bit-identical after a round trip.
        let z = LatentState { k: 3, dim: 8, data: (0..24).map(|i| (i as f32 * 0.37).sin()).collect() };
        let a = Action::pick(12.0, 8.0);
        let out_a = model.transition_value(&z, &a).unwrap();
        let out_b = loaded.transition_value(&z, &a).unwrap();
        assert_eq!(out_a.data, out_b.data);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.fwmc");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
