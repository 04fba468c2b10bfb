//! Model checkpoints.
//!
//! ```text
//! "PIDC"                      4 bytes
//! version                     u32 (= 1)
//! config length, config text  u32 + UTF-8 (`key = value` lines)
//! modality dims               3 × u32
//! parameter count             u32
//! per parameter:
//!   name length, name         u32 + UTF-8
//!   rank                      u8 (= 2)
//!   dims                      rank × u32
//!   values                    f64, row-major
//! ```
//!
//! Integers and floats are little-endian. Batch-norm running statistics
//! are stored alongside the trainable parameters.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::PidnetModel;
use crate::numcore::SequenceTensor;

pub const MAGIC: &[u8; 4] = b"PIDC";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &PidnetModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = model.config.to_text();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    for d in model.dims {
        put_u32(&mut out, d);
    }
    let entries = model.store.entries();
    put_u32(&mut out, entries.len());
    for e in entries {
        put_u32(&mut out, e.name.len());
        out.extend_from_slice(e.name.as_bytes());
        out.push(2);
        let (r, c) = e.value.shape();
        put_u32(&mut out, r);
        put_u32(&mut out, c);
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if left < n {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                needed: (n - left) as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos as u64;
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed {
            offset: at,
            reason: "string is not UTF-8".into(),
        })
    }
}

/// Rebuilds the model from its config echo, then overwrites every
/// parameter by name. Any missing, extra or reshaped entry is a mismatch.
pub fn decode(buf: &[u8]) -> Result<PidnetModel> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: "PIDC".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::BadVersion { offset: 4, version });
    }
    let config = TrainConfig::parse(&r.string()?)?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let mut model = PidnetModel::new(&config, dims)?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {count} parameters, model expects {}",
            model.store.len()
        )));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let at = r.pos as u64;
        let rank = r.take(1)?[0];
        if rank != 2 {
            return Err(Error::Malformed {
                offset: at,
                reason: format!("parameter {name} has rank {rank}, expected 2"),
            });
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        let raw = r.take(rows * cols * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {name}")))?;
        if !seen.insert(id) {
            return Err(Error::CheckpointMismatch(format!("parameter {name} stored twice")));
        }
        let value = SequenceTensor::from_vec(rows, cols, data)?;
        if value.shape() != model.store.value(id).shape() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name}: stored {}, model expects {}",
                value.shape_str(),
                model.store.value(id).shape_str()
            )));
        }
        *model.store.value_mut(id) = value;
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed {
            offset: r.pos as u64,
            reason: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    Ok(model)
}

pub fn save(model: &PidnetModel, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<PidnetModel> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
