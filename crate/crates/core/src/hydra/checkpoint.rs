//! Binary checkpoint container. Every integer and real is little-endian.
//!
//! ```text
//! magic        8 bytes  "MXKTCKPT"
//! version      u32      CHECKPOINT_VERSION
//! endian tag   u32      0x0A0B0C0D (reads back as another value on a
//!                       byte-swapped file)
//! config_len   u32
//! config       config_len bytes, EncoderConfig as UTF-8 JSON
//! n_arrays     u32
//! n_arrays × { name_len u32, name bytes, ndim u32, dims u64 × ndim,
//!              data f64 × Π dims }
//! ```
//!
//! Arrays appear in [`Encoder::named`] order; loading requires the same
//! names and shapes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MixerError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::encoder::{Encoder, EncoderConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MXKTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const ENDIAN_TAG: u32 = 0x0A0B_0C0D;

pub fn checkpoint_to_bytes(enc: &Encoder) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&ENDIAN_TAG.to_le_bytes());
    let cfg = serde_json::to_vec(&enc.cfg)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let named = enc.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| MixerError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Encoder> {
    let mut cur = Cursor { buf, at: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(MixerError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(MixerError::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = cur.u32()?;
    if tag != ENDIAN_TAG {
        return Err(MixerError::Checkpoint(format!("endianness tag {tag:#010x}")));
    }
    let cfg_len = cur.u32()? as usize;
    let cfg: EncoderConfig = serde_json::from_slice(cur.take(cfg_len)?)?;
    let mut enc = Encoder::new(cfg, &mut RngState::new(0))?;
    let n = cur.u32()? as usize;
    let mut slots = enc.named_mut();
    if n != slots.len() {
        return Err(MixerError::Checkpoint(format!("{n} arrays, model has {}", slots.len())));
    }
    for (want, slot) in slots.iter_mut() {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?).map_err(|e| MixerError::Checkpoint(e.to_string()))?;
        if name != want {
            return Err(MixerError::Checkpoint(format!("expected array {want}, found {name}")));
        }
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != slot.shape() {
            return Err(MixerError::Checkpoint(format!("{name}: shape {shape:?}, model has {:?}", slot.shape())));
        }
        let data = (0..slot.len()).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        **slot = Tensor::from_vec(&shape, data).map_err(|e| MixerError::Checkpoint(format!("{name}: {e}")))?;
    }
    drop(slots);
    if cur.at != buf.len() {
        return Err(MixerError::Checkpoint(format!("{} trailing bytes", buf.len() - cur.at)));
    }
    Ok(enc)
}

pub fn save_checkpoint(enc: &Encoder, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_to_bytes(enc)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Encoder> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    checkpoint_from_bytes(&buf)
}
