//! Parameter checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "LCRK"
//! version      u32      1
//! preamble     u32 length + UTF-8 bytes (`key=value` lines)
//! count        u32      number of entries
//! entry*       u16 name length, name bytes (UTF-8),
//!              u8 rank, rank × u32 extents,
//!              numel × f32 values
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCRK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form `key=value` metadata stored ahead of the tensors.
pub type Preamble = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub preamble: Preamble,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, preamble: Preamble) -> Self {
        Self {
            preamble,
            entries: store
                .iter()
                .map(|(_, p)| (p.name().to_string(), p.value().clone()))
                .collect(),
        }
    }

    /// Copies every entry into the store by name. The entry set must match
    /// the store exactly, with identical shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(TensorError::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.entries.len(),
                store.len()
            )));
        }
        for (name, t) in &self.entries {
            let id = store
                .find(name)
                .ok_or_else(|| TensorError::Checkpoint(format!("unknown parameter {name}")))?;
            store.set_value(id, t.clone())?;
        }
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut pre = String::new();
        for (k, v) in &self.preamble {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(TensorError::Checkpoint(format!(
                    "preamble entry {k:?} contains a reserved character"
                )));
            }
            pre.push_str(&format!("{k}={v}\n"));
        }
        out.write_all(&(pre.len() as u32).to_le_bytes())?;
        out.write_all(pre.as_bytes())?;
        out.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| TensorError::Checkpoint(format!("name too long: {name}")))?;
            out.write_all(&name_len.to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.numel() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(input)?;
        if version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let pre_len = read_u32(input)? as usize;
        let mut pre = vec![0u8; pre_len];
        input.read_exact(&mut pre)?;
        let pre = String::from_utf8(pre)
            .map_err(|_| TensorError::Checkpoint("preamble is not UTF-8".into()))?;
        let mut preamble = Preamble::new();
        for line in pre.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TensorError::Checkpoint(format!("bad preamble line {line:?}")))?;
            preamble.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(input)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let mut len = [0u8; 2];
            input.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            input.read_exact(&mut rank)?;
            let shape = (0..rank[0])
                .map(|_| read_u32(input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            input.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Self { preamble, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
