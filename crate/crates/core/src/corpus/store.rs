//! Corpus directory layout:
//!
//! ```text
//! manifest.json
//! records/<id>.feat   "EMSF" | u32 version | u32 T | u32 d | T·d f32 frames | T f32 intensity
//! ```
//!
//! All integers and floats are little-endian; frames are row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Emotion, FeatureSequence};
use crate::error::{EmsError, Result};

pub const FEAT_MAGIC: &[u8; 4] = b"EMSF";
pub const FEAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const RECORDS_DIR: &str = "records";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub label: Emotion,
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    pub frame_rate: f64,
    pub file: String,
    /// Per-frame unit labels for the frame-level probe.
    pub frame_units: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub records: Vec<ManifestRecord>,
}

fn encode_record(seq: &FeatureSequence) -> Vec<u8> {
    let (t, d) = seq.frames.dim();
    let mut out = Vec::with_capacity(16 + 4 * (t * d + t));
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in seq.frames.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &seq.truth_frame_intensity {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_f32s(bytes: &[u8], at: usize, count: usize) -> Vec<f64> {
    bytes[at..at + 4 * count]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect()
}

fn decode_record(bytes: &[u8], rec: &ManifestRecord) -> Result<FeatureSequence> {
    let corrupt = |m: &str| EmsError::CorruptCorpus(format!("record {}: {m}", rec.id));
    if bytes.len() < 16 || &bytes[..4] != FEAT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(bytes, 4);
    if version != FEAT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let (t, d) = (read_u32(bytes, 8) as usize, read_u32(bytes, 12) as usize);
    if t != rec.t || d != rec.d {
        return Err(EmsError::dims(format!(
            "record {}: file has T={t} d={d}, manifest says T={} d={}",
            rec.id, rec.t, rec.d
        )));
    }
    if bytes.len() != 16 + 4 * (t * d + t) {
        return Err(corrupt("truncated or oversized payload"));
    }
    if rec.frame_units.len() != t {
        return Err(EmsError::dims(format!("record {}: {} frame units for T={t}", rec.id, rec.frame_units.len())));
    }
    let frames = Array2::from_shape_vec((t, d), read_f32s(bytes, 16, t * d)).expect("shape checked");
    let intensity = read_f32s(bytes, 16 + 4 * t * d, t);
    let seq = FeatureSequence {
        frames,
        frame_rate: rec.frame_rate,
        truth_frame_intensity: intensity,
        frame_units: rec.frame_units.clone(),
        emotion: rec.label,
        utterance_id: rec.id.clone(),
    };
    seq.validate().map_err(|e| corrupt(&e.to_string()))?;
    Ok(seq)
}

/// Writes every record plus the manifest (last, so a complete manifest
/// implies complete record files).
pub fn write_corpus(records: &[FeatureSequence], dir: &Path) -> Result<Manifest> {
    let rec_dir = dir.join(RECORDS_DIR);
    fs::create_dir_all(&rec_dir).map_err(|e| EmsError::io(&rec_dir, e))?;
    let mut entries = Vec::with_capacity(records.len());
    for seq in records {
        seq.validate()?;
        let id = &seq.utterance_id;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(EmsError::invalid(format!("record id {id:?} is not a plain file name")));
        }
        if entries.iter().any(|e: &ManifestRecord| &e.id == id) {
            return Err(EmsError::invalid(format!("duplicate record id {id}")));
        }
        let file = format!("{RECORDS_DIR}/{id}.feat");
        let path = dir.join(&file);
        fs::write(&path, encode_record(seq)).map_err(|e| EmsError::io(&path, e))?;
        entries.push(ManifestRecord {
            id: id.clone(),
            label: seq.emotion,
            t: seq.len(),
            d: seq.dim(),
            frame_rate: seq.frame_rate,
            file,
            frame_units: seq.frame_units.clone(),
        });
    }
    let manifest = Manifest { format: "ems-corpus".into(), version: FEAT_VERSION, records: entries };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| EmsError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Vec<FeatureSequence>> {
    let path = dir.join(MANIFEST);
    let text = fs::read(&path).map_err(|e| EmsError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| EmsError::CorruptCorpus(format!("manifest: {e}")))?;
    if manifest.version != FEAT_VERSION {
        return Err(EmsError::CorruptCorpus(format!("manifest version {}", manifest.version)));
    }
    manifest
        .records
        .iter()
        .map(|rec| {
            let path = dir.join(&rec.file);
            let bytes = fs::read(&path).map_err(|e| {
                EmsError::CorruptCorpus(format!("record {}: cannot read {}: {e}", rec.id, path.display()))
            })?;
            decode_record(&bytes, rec)
        })
        .collect()
}
