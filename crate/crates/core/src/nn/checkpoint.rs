//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RSNM"  u32 version  u32 epoch
//! repeated: u16 name_len  name (UTF-8)  u8 rank  rank × u32 dims  f32 payload
//! u32 CRC-32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::adam::AdamState;
use super::models::{Discriminator, Generator};
use super::params::ParamSet;
use super::tensor::Shape;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSNM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub epoch: u32,
    pub records: Vec<Record>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dims.len() as u8);
            for d in &r.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &r.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 {
            return Err(bad("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic, not a restain checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version > FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {version} is newer than supported version {FORMAT_VERSION}"
            )));
        }
        if version == 0 {
            return Err(bad("invalid format version 0"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("CRC mismatch, checkpoint is corrupted"));
        }
        let epoch = u32::from_le_bytes(body[8..12].try_into().unwrap());
        let mut cur = Cursor { buf: body, pos: 12 };
        let mut records = Vec::new();
        while cur.pos < body.len() {
            let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| bad("record name is not UTF-8"))?
                .to_string();
            let rank = cur.take(1)?[0] as usize;
            let dims: Vec<u32> = (0..rank)
                .map(|_| cur.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())))
                .collect::<Result<_>>()?;
            let count = dims.iter().map(|&d| d as usize).product::<usize>();
            let values = cur
                .take(count * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            records.push(Record { name, dims, values });
        }
        Ok(Self { version, epoch, records })
    }

    /// Writes to a sibling temp file and renames it over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        tmp_name.push(".tmp");
        let tmp = path.with_file_name(tmp_name);
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    fn record(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing record {name:?}")))
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Generator, discriminator and both optimizers, with the epoch counter.
#[derive(Clone, Debug, PartialEq)]
pub struct RestainModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub epoch: u32,
}

impl RestainModel {
    pub fn new(seed: u64) -> Self {
        let generator = Generator::new(seed);
        let discriminator = Discriminator::new(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        let adam_g = AdamState::new(&generator.params);
        let adam_d = AdamState::new(&discriminator.params);
        Self { generator, discriminator, adam_g, adam_d, epoch: 0 }
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let mut records = Vec::new();
        for (tag, set, adam) in [
            ("gen", &self.generator.params, &self.adam_g),
            ("disc", &self.discriminator.params, &self.adam_d),
        ] {
            for p in set.iter() {
                records.push(record(&p.name, p.tensor.shape(), p.tensor.values()));
            }
            for (i, p) in set.iter().enumerate() {
                records.push(record(&format!("adam.{tag}.m.{}", p.name), p.tensor.shape(), &adam.m[i]));
                records.push(record(&format!("adam.{tag}.v.{}", p.name), p.tensor.shape(), &adam.v[i]));
            }
            records.push(Record { name: format!("adam.{tag}.step"), dims: vec![1], values: vec![adam.step as f32] });
        }
        ModelCheckpoint { version: FORMAT_VERSION, epoch: self.epoch, records }
    }

    /// Rebuilds a model; parameter names and shapes must match this build.
    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        let mut model = Self::new(0);
        model.epoch = ck.epoch;
        let Self { generator, discriminator, adam_g, adam_d, .. } = &mut model;
        for (tag, set, adam) in [("gen", &mut generator.params, adam_g), ("disc", &mut discriminator.params, adam_d)] {
            restore_set(ck, set)?;
            for i in 0..set.len() {
                let p = set.get(i);
                let shape = p.tensor.shape();
                adam.m[i] = values_of(ck.record(&format!("adam.{tag}.m.{}", p.name))?, shape)?;
                adam.v[i] = values_of(ck.record(&format!("adam.{tag}.v.{}", p.name))?, shape)?;
            }
            let step = ck.record(&format!("adam.{tag}.step"))?;
            adam.step = step.values.first().copied().unwrap_or(0.0) as u64;
            adam.lr_decay(ck.epoch);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&ModelCheckpoint::load(path)?)
    }
}

fn record(name: &str, shape: Shape, values: &[f64]) -> Record {
    Record {
        name: name.to_string(),
        dims: shape.dims().iter().map(|&d| d as u32).collect(),
        values: values.iter().map(|&v| v as f32).collect(),
    }
}

fn values_of(r: &Record, shape: Shape) -> Result<Vec<f64>> {
    let want: Vec<u32> = shape.dims().iter().map(|&d| d as u32).collect();
    if r.dims != want {
        return Err(Error::Checkpoint(format!("record {} has dims {:?}, expected {:?}", r.name, r.dims, want)));
    }
    Ok(r.values.iter().map(|&v| f64::from(v)).collect())
}

fn restore_set(ck: &ModelCheckpoint, set: &mut ParamSet) -> Result<()> {
    for p in set.iter_mut() {
        let vals = values_of(ck.record(&p.name)?, p.tensor.shape())?;
        p.tensor.values_mut().copy_from_slice(&vals);
    }
    Ok(())
}
