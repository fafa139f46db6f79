//! Single-file model checkpoints.
//!
//! ```text
//! "EMSC" | u32 version | u32 header_len | JSON header | u32 block_count
//! block: u32 name_len | name (UTF-8) | u32 rows | u32 cols | rows·cols f64
//! ```
//!
//! Everything is little-endian and matrices are row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Mat;
use crate::error::{EmsError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMSC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `"intensity"` or `"ssl"`.
    pub kind: String,
    pub version: u32,
    /// SHA-256 of the architecture description, hex encoded.
    pub architecture_hash: String,
    pub seed: u64,
    pub step: u64,
    #[serde(default)]
    pub strategy: Option<String>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<(String, Mat)>,
}

impl Checkpoint {
    pub fn block(&self, name: &str) -> Option<&Mat> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

pub fn architecture_hash<T: Serialize>(arch: &T) -> Result<String> {
    let json = serde_json::to_vec(arch)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(ckpt.blocks.len() as u32).to_le_bytes());
    for (name, m) in &ckpt.blocks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        for &v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| EmsError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(EmsError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(EmsError::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| EmsError::Checkpoint(format!("bad checkpoint header: {e}")))?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| EmsError::Checkpoint("block name is not UTF-8".into()))?
            .to_string();
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8));
        let data = r.take(n.ok_or_else(|| EmsError::Checkpoint(format!("block {name} too large")))?)?;
        let values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blocks.push((name, Array2::from_shape_vec((rows, cols), values).expect("sized above")));
    }
    if r.at != bytes.len() {
        return Err(EmsError::Checkpoint("trailing bytes after the last block".into()));
    }
    Ok(Checkpoint { header, blocks })
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written checkpoint under the final name.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| EmsError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ckpt)?).map_err(|e| EmsError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| EmsError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| EmsError::io(path, e))?;
    decode(&bytes)
}
