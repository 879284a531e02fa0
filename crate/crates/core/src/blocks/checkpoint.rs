//! Little-endian checkpoint files.
//!
//! ```text
//! magic    8 bytes  "SCANLAB1"
//! config   u32 byte length, then the `[model]` section as UTF-8 key = value text
//! records  u32 count, then per record:
//!          u32 name length, name bytes, u32 rank, rank x u64 dims, prod(dims) x f64
//! ```

use std::io::{Read, Write};

use crate::autodiff::Tensor;
use crate::blocks::config::ModelSection;
use crate::blocks::model::Model;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCANLAB1";

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = toml::to_string(&model.cfg.to_section()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let magic = read_bytes(&mut r, MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let len = read_u32(&mut r)? as usize;
    let text = String::from_utf8(read_bytes(&mut r, len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let section: ModelSection = toml::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut model = Model::new(section.to_config()?, 0)?;

    let count = read_u32(&mut r)? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!("{count} records, configuration needs {}", model.store.len())));
    }
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_bytes(&mut r, nlen)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = read_bytes(&mut r, n * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let id = model.store.find(&name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let slot = model.store.get_mut(id);
        if slot.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!("`{name}` has shape {shape:?}, expected {:?}", slot.shape())));
        }
        *slot = Tensor::new(shape, data)?;
    }
    Ok(model)
}
