//! On-disk corpus formats.
//!
//! * Feature file (`SEMF`): binary, little-endian. Header `b"SEMF"`,
//!   version `u16`, video count `u32`; then per video the UTF-8 id
//!   (`u32` length prefix) followed by the spatial, temporal, and object
//!   tensors, each serialized as rank `u8`, dims as `u32`s, payload as
//!   `f32`s.
//! * Annotation sidecar: JSON Lines, one `{video_id, captions}` object per
//!   video.
//! * Candidate captions: plain text, `video_id<TAB>token token ...`.
//!
//! Writers are deterministic: equal inputs produce byte-identical files.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CaptionAnnotation, DataError, VideoSample};
use crate::autodiff::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"SEMF";
const FEATURE_VERSION: u16 = 1;

/// Upper bounds rejecting absurd sizes before allocation.
const MAX_DIM: u32 = 1 << 20;
const MAX_ELEMENTS: u64 = 1 << 28;

/// Features of one video as read back from a feature file.
#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub video_id: String,
    pub spatial: Tensor,
    pub temporal: Tensor,
    pub objects: Tensor,
}

fn corrupt(reason: impl Into<String>) -> DataError {
    DataError::Corrupt {
        what: "feature file",
        reason: reason.into(),
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), DataError> {
    w.write_all(&[t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|_| corrupt("unexpected end of file"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, DataError> {
    let mut rank = [0u8; 1];
    read_exact(r, &mut rank)?;
    let rank = rank[0] as usize;
    if rank > 3 {
        return Err(corrupt(format!("tensor rank {rank} exceeds 3")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut elements: u64 = 1;
    for _ in 0..rank {
        let d = read_u32(r)?;
        if d > MAX_DIM {
            return Err(corrupt(format!("dimension {d} exceeds limit")));
        }
        elements = elements.saturating_mul(u64::from(d));
        shape.push(d as usize);
    }
    if elements > MAX_ELEMENTS {
        return Err(corrupt("tensor too large"));
    }
    let mut data = Vec::with_capacity(elements as usize);
    let mut b = [0u8; 4];
    for _ in 0..elements {
        read_exact(r, &mut b)?;
        data.push(f64::from(f32::from_le_bytes(b)));
    }
    Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
}

/// Writes the feature file for a corpus.
pub fn save_features(path: &Path, samples: &[VideoSample]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&FEATURE_VERSION.to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        let id = s.video_id.as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        write_tensor(&mut w, &s.spatial)?;
        write_tensor(&mut w, &s.temporal)?;
        write_tensor(&mut w, &s.objects)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature file back. Features are stored at `f32` precision.
pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>, DataError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let mut version = [0u8; 2];
    read_exact(&mut r, &mut version)?;
    let version = u16::from_le_bytes(version);
    if version != FEATURE_VERSION {
        return Err(DataError::VersionMismatch {
            what: "feature file",
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = read_u32(&mut r)? as usize;
        if id_len > 4096 {
            return Err(corrupt("video id too long"));
        }
        let mut id = vec![0u8; id_len];
        read_exact(&mut r, &mut id)?;
        let video_id =
            String::from_utf8(id).map_err(|_| corrupt("video id is not valid UTF-8"))?;
        out.push(FeatureRecord {
            video_id,
            spatial: read_tensor(&mut r)?,
            temporal: read_tensor(&mut r)?,
            objects: read_tensor(&mut r)?,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes after last record"));
    }
    Ok(out)
}

/// One line of the annotation sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub captions: Vec<CaptionAnnotation>,
}

/// Writes the JSONL annotation sidecar.
pub fn save_annotations(path: &Path, samples: &[VideoSample]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let record = AnnotationRecord {
            video_id: s.video_id.clone(),
            captions: s.references.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|source| DataError::Json { line: 0, source })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the JSONL annotation sidecar.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line).map_err(|source| {
            DataError::Json {
                line: lineno + 1,
                source,
            }
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Writes both corpus files.
pub fn save_corpus(
    features: &Path,
    annotations: &Path,
    samples: &[VideoSample],
) -> Result<(), DataError> {
    save_features(features, samples)?;
    save_annotations(annotations, samples)
}

/// Loads and joins the two corpus files. Order follows the feature file;
/// the id sets must match exactly.
pub fn load_corpus(features: &Path, annotations: &Path) -> Result<Vec<VideoSample>, DataError> {
    let records = load_features(features)?;
    let mut captions: HashMap<String, Vec<CaptionAnnotation>> = load_annotations(annotations)?
        .into_iter()
        .map(|r| (r.video_id, r.captions))
        .collect();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let refs = captions
            .remove(&rec.video_id)
            .ok_or(DataError::CorpusFilesDisagree {
                video_id: rec.video_id.clone(),
            })?;
        out.push(VideoSample {
            video_id: rec.video_id,
            spatial: rec.spatial,
            temporal: rec.temporal,
            objects: rec.objects,
            references: refs,
        });
    }
    if let Some(extra) = captions.into_keys().next() {
        return Err(DataError::CorpusFilesDisagree { video_id: extra });
    }
    Ok(out)
}

/// Writes decoded candidate captions, one `video_id<TAB>tokens` line each.
pub fn save_candidates(path: &Path, candidates: &[(String, Vec<String>)]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (id, tokens) in candidates {
        writeln!(w, "{}\t{}", id, tokens.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a candidate caption file.
pub fn load_candidates(path: &Path) -> Result<Vec<(String, Vec<String>)>, DataError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = line.split_once('\t').ok_or(DataError::Parse {
            line: lineno + 1,
            detail: "expected `video_id<TAB>tokens`".to_string(),
        })?;
        let tokens = rest.split_whitespace().map(String::from).collect();
        out.push((id.to_string(), tokens));
    }
    Ok(out)
}
