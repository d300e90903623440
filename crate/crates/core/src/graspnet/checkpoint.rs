//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    7 bytes  "GACKPT1"
//! version  u32
//! arch     u32 length + JSON architecture descriptor
//! theta    u32 count, then per tensor:
//!            u32 name length + UTF-8 name, u32 rank, rank × u32 extents,
//!            product(extents) × f64 values
//! phi      same as theta
//! ```
//!
//! Tensors appear in declaration order, so saving an unmodified checkpoint
//! reproduces the file byte for byte.

use std::path::Path;

use thiserror::Error;

use super::{build_network, ArchConfig, ClassifierParams, NetworkParams};
use crate::binio::{ByteReader, ByteWriter, Truncated};
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"GACKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint does not match its architecture: {0}")]
    ArchMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Truncated> for CheckpointError {
    fn from(t: Truncated) -> Self {
        CheckpointError::Truncated(t.offset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetworkParams,
    pub classifier: ClassifierParams,
}

fn write_params(w: &mut ByteWriter, params: &ParamSet) {
    w.u32(params.len() as u32);
    for (name, t) in params.iter() {
        w.blob(name.as_bytes());
        w.u32(t.rank() as u32);
        for &d in t.shape() {
            w.u32(d as u32);
        }
        for &v in t.values() {
            w.f64(v);
        }
    }
}

fn read_params(r: &mut ByteReader<'_>, expected: &mut ParamSet, section: &str) -> Result<(), CheckpointError> {
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(CheckpointError::ArchMismatch(format!(
            "{section} has {count} tensors, architecture declares {}",
            expected.len()
        )));
    }
    for i in 0..count {
        let name = std::str::from_utf8(r.blob()?)
            .map_err(|_| CheckpointError::Corrupt(format!("{section} tensor {i} name is not UTF-8")))?
            .to_owned();
        if name != expected.names()[i] {
            return Err(CheckpointError::ArchMismatch(format!(
                "{section} tensor {i} is `{name}`, expected `{}`",
                expected.names()[i]
            )));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != expected.get(i).shape() {
            return Err(CheckpointError::ArchMismatch(format!(
                "`{name}` has shape {shape:?}, expected {:?}",
                expected.get(i).shape()
            )));
        }
        let t = expected.get_mut(i);
        for v in t.values_mut() {
            *v = r.f64()?;
        }
    }
    Ok(())
}

pub fn write_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.blob(&serde_json::to_vec(&ck.net.arch).expect("arch serializes"));
    write_params(&mut w, &ck.net.theta);
    write_params(&mut w, &ck.classifier.phi);
    w.buf
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = ByteReader::new(bytes);
    if r.take(CHECKPOINT_MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let arch: ArchConfig = serde_json::from_slice(r.blob()?)
        .map_err(|e| CheckpointError::Corrupt(format!("architecture descriptor: {e}")))?;
    let (mut net, mut classifier) =
        build_network(&arch, 0).map_err(|e| CheckpointError::ArchMismatch(e.to_string()))?;
    read_params(&mut r, &mut net.theta, "theta")?;
    read_params(&mut r, &mut classifier.phi, "phi")?;
    if r.remaining() != 0 {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    if !net
        .theta
        .tensors()
        .iter()
        .chain(classifier.phi.tensors())
        .all(Tensor::all_finite)
    {
        return Err(CheckpointError::Corrupt("non-finite parameter values".into()));
    }
    Ok(Checkpoint { net, classifier })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&std::fs::read(path)?)
}
