//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LAAPOLCY" | version u32 | J C M_c H as u64
//! block count u32 | per block: name len u32, name, value count u64, f64 values
//! SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{ModelShape, PolicyModel};
use super::LearnError;

pub const MAGIC: &[u8; 8] = b"LAAPOLCY";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn write_model(model: &PolicyModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let s = model.shape;
    for v in [s.sbs, s.channels, s.max_channels, s.hidden] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let blocks = model.params();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, data) in blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LearnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| LearnError::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, LearnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, LearnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_model(bytes: &[u8]) -> Result<PolicyModel, LearnError> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(LearnError::Format("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(LearnError::Format("checksum mismatch (truncated or corrupted)".into()));
    }
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(LearnError::Format("not a policy model file".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(LearnError::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        *d = usize::try_from(cur.u64()?).map_err(|_| LearnError::Format("dimension overflow".into()))?;
    }
    let shape = ModelShape::new(dims[0], dims[1], dims[2], dims[3])?;
    let mut model = PolicyModel::zeros(shape);
    let count = cur.u32()? as usize;
    let mut blocks = model.params_mut();
    if count != blocks.len() {
        return Err(LearnError::Format(format!("{count} blocks, expected {}", blocks.len())));
    }
    for (name, data) in blocks.iter_mut() {
        let len = cur.u32()? as usize;
        let got = cur.take(len)?;
        if got != name.as_bytes() {
            return Err(LearnError::Format(format!("expected block {name}, found {}", String::from_utf8_lossy(got))));
        }
        let n = cur.u64()? as usize;
        if n != data.len() {
            return Err(LearnError::Format(format!("block {name} has {n} values, expected {}", data.len())));
        }
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
        }
    }
    if cur.pos != body.len() {
        return Err(LearnError::Format("trailing bytes after last block".into()));
    }
    Ok(model)
}

pub fn save_model(model: &PolicyModel, path: impl AsRef<Path>) -> Result<(), LearnError> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PolicyModel, LearnError> {
    read_model(&std::fs::read(path)?)
}

/// Errors unless `model` was built for `expected`.
pub fn check_shape(model: &PolicyModel, expected: ModelShape) -> Result<(), LearnError> {
    if model.shape != expected {
        return Err(LearnError::Shape(format!("model is {:?}, configuration needs {expected:?}", model.shape)));
    }
    Ok(())
}
