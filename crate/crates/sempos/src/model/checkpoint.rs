//! Model checkpoints (`SEMP`): binary, little-endian.
//!
//! Header `b"SEMP"`, version `u16`; then the architecture — `hidden`,
//! `embed`, `spatial_dim`, `temporal_dim`, `noun_dim`, `vocab`, `max_len`
//! as `u32`s, the distance kind as a `u8` (0 = MSE, 1 = cosine), the
//! wiring bitmask as a `u8` — and the parameter count as a `u32`. Each
//! parameter follows in registry order: UTF-8 name (`u32` length prefix),
//! rank `u8`, dims as `u32`s, payload as `f64`s. Parameters are stored at
//! full precision so save/load round-trips are bit-exact; equal models
//! produce byte-identical files.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;

use super::{DistanceKind, LossWeights, Model, ModelConfig, ModelError, Wiring};

const CHECKPOINT_MAGIC: &[u8; 4] = b"SEMP";
const CHECKPOINT_VERSION: u16 = 1;

/// Upper bounds rejecting absurd sizes before allocation.
const MAX_DIM: u32 = 1 << 20;
const MAX_ELEMENTS: u64 = 1 << 28;
const MAX_NAME: u32 = 4096;

fn corrupt(reason: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint {
        reason: reason.into(),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|_| corrupt("unexpected end of file"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, ModelError> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), ModelError> {
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, ModelError> {
    let rank = read_u8(r)? as usize;
    if rank > 3 {
        return Err(corrupt(format!("tensor rank {rank} exceeds 3")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut elements: u64 = 1;
    for _ in 0..rank {
        let d = read_u32(r)?;
        if d > MAX_DIM {
            return Err(corrupt(format!("dimension {d} exceeds limit")));
        }
        elements = elements.saturating_mul(u64::from(d));
        shape.push(d as usize);
    }
    if elements > MAX_ELEMENTS {
        return Err(corrupt("tensor too large"));
    }
    let mut data = Vec::with_capacity(elements as usize);
    let mut b = [0u8; 8];
    for _ in 0..elements {
        read_exact(r, &mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
}

/// Saves a model. The loss weights are a training concern and are not
/// stored; neither is the vocabulary itself (only its size), which lives
/// with the corpus annotations.
pub fn save_model(path: &Path, model: &Model) -> Result<(), ModelError> {
    let cfg = model.config();
    let params = model.named_params();
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for v in [
        cfg.hidden,
        cfg.embed,
        cfg.spatial_dim,
        cfg.temporal_dim,
        cfg.noun_dim,
        cfg.vocab,
        cfg.max_len,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let distance = match cfg.distance {
        DistanceKind::Mse => 0u8,
        DistanceKind::Cosine => 1u8,
    };
    w.write_all(&[distance, model.wiring().bitmask()])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in &params {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(&mut w, &p.value())?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a model from a checkpoint. The stored architecture must
/// describe exactly the parameter set that follows — any count, name, or
/// shape disagreement is rejected.
pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    read_exact(&mut r, &mut version)?;
    let version = u16::from_le_bytes(version);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }

    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    let distance = match read_u8(&mut r)? {
        0 => DistanceKind::Mse,
        1 => DistanceKind::Cosine,
        other => return Err(corrupt(format!("unknown distance kind {other}"))),
    };
    let wiring = Wiring::from_bitmask(read_u8(&mut r)?)?;
    let cfg = ModelConfig {
        hidden: dims[0],
        embed: dims[1],
        spatial_dim: dims[2],
        temporal_dim: dims[3],
        noun_dim: dims[4],
        vocab: dims[5],
        max_len: dims[6],
        distance,
    };

    // Init seed is irrelevant: every parameter is overwritten below.
    let model = Model::new(cfg, wiring, LossWeights::default(), 0)?;
    let params = model.named_params();
    let count = read_u32(&mut r)? as usize;
    if count != params.len() {
        return Err(corrupt(format!(
            "checkpoint has {count} parameters, architecture needs {}",
            params.len()
        )));
    }
    for (name, p) in &params {
        let len = read_u32(&mut r)?;
        if len > MAX_NAME {
            return Err(corrupt("parameter name too long"));
        }
        let mut bytes = vec![0u8; len as usize];
        read_exact(&mut r, &mut bytes)?;
        let stored =
            String::from_utf8(bytes).map_err(|_| corrupt("parameter name is not valid UTF-8"))?;
        if &stored != name {
            return Err(corrupt(format!(
                "parameter order mismatch: found {stored:?}, expected {name:?}"
            )));
        }
        let t = read_tensor(&mut r)?;
        if t.shape() != p.shape() {
            return Err(corrupt(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                t.shape(),
                p.shape()
            )));
        }
        p.with_value_mut(|v| v.data_mut().copy_from_slice(t.data()));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes after last parameter"));
    }
    Ok(model)
}
