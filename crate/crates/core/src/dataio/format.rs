//! The `PIDF` feature container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "PIDF"            4 bytes
//! version           u32 (= 1)
//! modality count    u8
//! per modality:
//!   name length     u8
//!   name            ASCII
//!   T               u32
//!   D               u32
//!   values          T·D f64, time-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::group3m::MODALITIES;
use crate::model::ModalityBundle;
use crate::numcore::SequenceTensor;

pub const MAGIC: &[u8; 4] = b"PIDF";
pub const VERSION: u32 = 1;

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

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Serializes one modality entry. `x` is `D × T`; values are written
/// time-major.
fn put_modality(out: &mut Vec<u8>, name: &str, x: &SequenceTensor) {
    let (d, t) = x.shape();
    out.push(name.len() as u8);
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for tt in 0..t {
        for dd in 0..d {
            out.extend_from_slice(&x.get(dd, tt).to_le_bytes());
        }
    }
}

/// Encodes arbitrary named entries; used by `encode` and by tests that
/// need malformed fixtures.
pub fn encode_entries(entries: &[(&str, &SequenceTensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(entries.len() as u8);
    for (name, x) in entries {
        put_modality(&mut out, name, x);
    }
    out
}

pub fn encode(b: &ModalityBundle) -> Vec<u8> {
    encode_entries(&[
        (MODALITIES[0], &b.rgb),
        (MODALITIES[1], &b.flow),
        (MODALITIES[2], &b.audio),
    ])
}

pub fn decode(buf: &[u8]) -> Result<ModalityBundle> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::BadMagic {
        offset: 0,
        expected: "PIDF".into(),
        found: String::from_utf8_lossy(buf).into_owned(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            offset: 0,
            expected: "PIDF".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadVersion { offset: 4, version });
    }
    let count = r.u8()?;
    let mut slots: [Option<SequenceTensor>; 3] = [None, None, None];
    for _ in 0..count {
        let start = r.pos as u64;
        let len = r.u8()? as usize;
        let name_bytes = r.take(len)?;
        let name = std::str::from_utf8(name_bytes)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| Error::Malformed {
                offset: start + 1,
                reason: "modality name is not ASCII".into(),
            })?
            .to_string();
        let Some(slot) = MODALITIES.iter().position(|&m| m == name) else {
            return Err(Error::Malformed {
                offset: start,
                reason: format!("unknown modality {name:?}"),
            });
        };
        if slots[slot].is_some() {
            return Err(Error::DuplicateModality { offset: start, name });
        }
        let dims_at = r.pos as u64;
        let t = r.u32()? as usize;
        let d = r.u32()? as usize;
        if t == 0 || d == 0 {
            return Err(Error::Malformed {
                offset: dims_at,
                reason: format!("modality {name} has empty shape T={t}, D={d}"),
            });
        }
        let n = t.checked_mul(d).and_then(|n| n.checked_mul(8)).ok_or(Error::Malformed {
            offset: dims_at,
            reason: "payload size overflows".into(),
        })?;
        let raw = r.take(n)?;
        let mut x = SequenceTensor::zeros(d, t);
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            x.set(i % d, i / d, f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        slots[slot] = Some(x);
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed {
            offset: r.pos as u64,
            reason: format!("{} trailing bytes", buf.len() - r.pos),
        });
    }
    let missing: Vec<String> = MODALITIES
        .iter()
        .zip(&slots)
        .filter(|(_, s)| s.is_none())
        .map(|(m, _)| m.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingModality(missing));
    }
    let [rgb, flow, audio] = slots;
    Ok(ModalityBundle::new(rgb.unwrap(), flow.unwrap(), audio.unwrap()))
}

pub fn write_sample(path: &Path, b: &ModalityBundle) -> Result<()> {
    fs::write(path, encode(b)).map_err(|e| Error::io(path, e))
}

pub fn read_sample(path: &Path) -> Result<ModalityBundle> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
