//! Binary checkpoint, all integers little-endian:
//!
//! ```text
//! "SMOE" | u32 version | u64 step | u64 len, config text
//! u64 entry count
//! per entry: u64 len, name | u32 rank | u64 dims[rank] | f64 data[Π dims]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"SMOE";
pub const VERSION: u32 = 1;
const CTX: &str = "checkpoint";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
}

pub fn to_bytes(model: &Model, step: u64) -> Vec<u8> {
    let mut b = Vec::with_capacity(model.params.numel() * 8 + 4096);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&step.to_le_bytes());
    let cfg = model.config.to_text();
    b.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    b.extend_from_slice(cfg.as_bytes());
    b.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        b.extend_from_slice(&(name.len() as u64).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    entry: Option<String>,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(CTX, self.entry.as_deref(), msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated at byte {} (need {n} more)", self.pos)));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| self.err(format!("implausible length {n}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }
}

/// Parses a checkpoint. Nothing is returned unless every entry matches the
/// embedded config by name and shape.
pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0, entry: None };
    if r.take(4)? != MAGIC {
        return Err(r.err("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version} (expected {VERSION})")));
    }
    let step = r.u64()?;
    let cfg_text = r.string()?;
    let config = ModelConfig::from_text(&cfg_text).map_err(|e| r.err(format!("embedded config: {e}")))?;
    let mut model = Model::new(config, 0)?;
    let count = r.u64()?;
    if count != model.params.len() as u64 {
        return Err(r.err(format!(
            "{count} entries, config implies {}",
            model.params.len()
        )));
    }
    let mut seen = vec![false; model.params.len()];
    for _ in 0..count {
        let name = r.string()?;
        r.entry = Some(name.clone());
        let id = model
            .params
            .lookup(&name)
            .ok_or_else(|| r.err("entry not present in the configured model"))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(r.err("duplicate entry"));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let want = model.params.get(id).shape().to_vec();
        if shape != want {
            return Err(r.err(format!("shape {shape:?}, config implies {want:?}")));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.err("size overflow"))?)?;
        let dst = model.params.get_mut(id).data_mut();
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        r.entry = None;
    }
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Checkpoint { model, step })
}

pub fn save(path: &Path, model: &Model, step: u64) -> Result<()> {
    fs::write(path, to_bytes(model, step))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
