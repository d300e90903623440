//! Dataset file layout, all integers little-endian:
//!
//! ```text
//! magic     7 bytes  "GADSET1"
//! version   u32
//! header    u8 domain (0 sim, 1 realproxy), u8 task (0 indiscriminate,
//!           1 instance), u32 height, u32 width, u64 record count
//! records   u32 byte length, then:
//!             u64 seed, u8 object count, u8 pool (0 train, 1 eval, 2 all),
//!             u8 target flag + u32 target id, u8 grasped flag + u32 grasped id,
//!             u8 label, u32 steps,
//!             steps × (5 × f64 action, height·width·3 image bytes),
//!             height·width mask bytes
//! ```
//!
//! Image bytes are `floor(v·255 + 0.5)` of the `[0, 1]` value, row-major RGB.

use std::path::Path;

use super::{DataError, Dataset, Episode, Result};
use crate::action::{ActionCommand, ACTION_DIM};
use crate::binio::{ByteReader, ByteWriter, Truncated};
use crate::graspnet::Task;
use crate::simenv::{Domain, Image, Mask, ObjectPool};

pub const DATASET_MAGIC: &[u8; 7] = b"GADSET1";
pub const DATASET_VERSION: u32 = 1;

impl From<Truncated> for DataError {
    fn from(t: Truncated) -> Self {
        DataError::Truncated(t.offset)
    }
}

fn domain_code(d: Domain) -> u8 {
    match d {
        Domain::Sim => 0,
        Domain::RealProxy => 1,
    }
}

fn task_code(t: Task) -> u8 {
    match t {
        Task::Indiscriminate => 0,
        Task::Instance => 1,
    }
}

fn write_option(w: &mut ByteWriter, v: Option<u32>) {
    w.u8(v.is_some() as u8);
    w.u32(v.unwrap_or(0));
}

fn write_record(w: &mut ByteWriter, e: &Episode) {
    w.u64(e.seed);
    w.u8(e.n_objects as u8);
    w.u8(e.pool.code());
    write_option(w, e.target_object_id);
    write_option(w, e.grasped_object_id);
    w.u8(e.label as u8);
    w.u32(e.steps() as u32);
    for (a, img) in e.actions.iter().zip(&e.images) {
        for v in a.to_array() {
            w.f64(v);
        }
        w.bytes(&img.data);
    }
    w.bytes(&e.target_mask.data);
}

/// Serializes a dataset after validating every record against the header.
pub fn write_dataset_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    dataset.validate()?;
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u8(domain_code(dataset.domain));
    w.u8(task_code(dataset.task));
    w.u32(dataset.height as u32);
    w.u32(dataset.width as u32);
    w.u64(dataset.len() as u64);
    let mut rec = ByteWriter::new();
    for e in &dataset.episodes {
        rec.buf.clear();
        write_record(&mut rec, e);
        w.blob(&rec.buf);
    }
    Ok(w.buf)
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_dataset_bytes(dataset)?)?;
    Ok(())
}

fn corrupt(m: impl Into<String>) -> DataError {
    DataError::Corrupt(m.into())
}

fn read_option(r: &mut ByteReader<'_>) -> Result<Option<u32>> {
    let flag = r.u8()?;
    let v = r.u32()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(v)),
        f => Err(corrupt(format!("option flag {f}"))),
    }
}

fn read_record(r: &mut ByteReader<'_>, d: &Dataset) -> Result<Episode> {
    let seed = r.u64()?;
    let n_objects = r.u8()? as usize;
    let pool = r.u8()?;
    let pool = ObjectPool::from_code(pool).ok_or_else(|| corrupt(format!("pool code {pool}")))?;
    let target_object_id = read_option(r)?;
    let grasped_object_id = read_option(r)?;
    let label = match r.u8()? {
        0 => false,
        1 => true,
        l => return Err(corrupt(format!("label byte {l}"))),
    };
    let steps = r.u32()? as usize;
    let per_image = d.height * d.width * 3;
    if steps.saturating_mul(ACTION_DIM * 8 + per_image) > r.remaining() {
        return Err(DataError::Truncated(r.position() + r.remaining()));
    }
    let mut actions = Vec::with_capacity(steps);
    let mut images = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut a = [0.0; ACTION_DIM];
        for v in &mut a {
            *v = r.f64()?;
        }
        actions.push(ActionCommand {
            translation: [a[0], a[1], a[2]],
            rotation: [a[3], a[4]],
        });
        images.push(Image {
            height: d.height,
            width: d.width,
            data: r.take(per_image)?.to_vec(),
        });
    }
    let target_mask = Mask {
        height: d.height,
        width: d.width,
        data: r.take(d.height * d.width)?.to_vec(),
    };
    Ok(Episode {
        domain: d.domain,
        task: d.task,
        seed,
        n_objects,
        pool,
        images,
        actions,
        target_mask,
        target_object_id,
        grasped_object_id,
        label,
    })
}

pub fn read_dataset_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(DATASET_MAGIC.len()).map_err(|_| DataError::BadMagic)? != DATASET_MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(DataError::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let domain = match r.u8()? {
        0 => Domain::Sim,
        1 => Domain::RealProxy,
        c => return Err(corrupt(format!("domain code {c}"))),
    };
    let task = match r.u8()? {
        0 => Task::Indiscriminate,
        1 => Task::Instance,
        c => return Err(corrupt(format!("task code {c}"))),
    };
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    if height == 0 || width == 0 {
        return Err(corrupt("zero image extent"));
    }
    let count = r.u64()?;
    let mut d = Dataset::new(domain, task, height, width);
    for i in 0..count {
        let body = r.blob()?;
        let mut rr = ByteReader::new(body);
        let e = read_record(&mut rr, &d).map_err(|e| match e {
            // a short record inside an intact length prefix is corruption, not truncation
            DataError::Truncated(_) => corrupt(format!("record {i} shorter than its contents")),
            other => other,
        })?;
        if rr.remaining() != 0 {
            return Err(corrupt(format!("record {i} has {} unread bytes", rr.remaining())));
        }
        d.push(e)?;
    }
    if r.remaining() != 0 {
        return Err(corrupt(format!(
            "{} trailing bytes after {count} records",
            r.remaining()
        )));
    }
    Ok(d)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_bytes(&std::fs::read(path)?)
}
