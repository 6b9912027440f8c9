//! Binary checkpoint format.
//!
//! ```text
//! "FNET" | version: u32 LE | header_len: u32 LE | header (UTF-8 key=value lines)
//!        | parameters: f64 LE, manifest order | crc32: u32 LE
//! ```
//!
//! The CRC-32 covers every byte before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{build, Architecture, Model, ModelError, ModelSpec, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNET";
pub const CHECKPOINT_VERSION: u32 = 1;

fn header_text(model: &Model, metadata: &BTreeMap<String, String>) -> String {
    let spec = &model.spec;
    let shape: Vec<String> = spec.input_shape.iter().map(usize::to_string).collect();
    let mut lines = vec![
        format!("architecture={}", spec.architecture),
        format!("input_shape={}", shape.join(",")),
        format!("seed={}", spec.seed),
        format!("attention_scaled={}", spec.attention_scaled),
        format!("spatial_rescale={}", spec.spatial_rescale),
        format!("param_count={}", model.param_count()),
        format!("created_by=rulcast {}", env!("CARGO_PKG_VERSION")),
    ];
    for (i, (name, t)) in model.params.names.iter().zip(&model.params.tensors).enumerate() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        lines.push(format!("param.{i}={name} {}", dims.join("x")));
    }
    for (k, v) in metadata {
        lines.push(format!("meta.{k}={v}"));
    }
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

/// Serializes `model` with extra `meta.*` header entries.
pub fn encode_checkpoint(model: &Model, metadata: &BTreeMap<String, String>) -> Vec<u8> {
    let header = header_text(model, metadata);
    let mut out = Vec::with_capacity(16 + header.len() + 8 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in &model.params.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn malformed(msg: impl Into<String>) -> ModelError {
    ModelError::MalformedCheckpoint(msg.into())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a checkpoint, returning the model and its `meta.*` entries.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, BTreeMap<String, String>)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ModelError::ChecksumMismatch);
    }
    let version = read_u32(bytes, 4);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != read_u32(tail, 0) {
        return Err(ModelError::ChecksumMismatch);
    }
    let header_len = read_u32(body, 8) as usize;
    let header_end = 12usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| malformed("header length exceeds file"))?;
    let header = std::str::from_utf8(&body[12..header_end]).map_err(|_| malformed("header is not UTF-8"))?;

    let mut fields = BTreeMap::new();
    let mut metadata = BTreeMap::new();
    let mut manifest = Vec::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| malformed(format!("bad header line '{line}'")))?;
        if let Some(meta) = k.strip_prefix("meta.") {
            metadata.insert(meta.to_string(), v.to_string());
        } else if k.starts_with("param.") {
            manifest.push(v.to_string());
        } else {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let field = |k: &str| fields.get(k).ok_or_else(|| malformed(format!("missing '{k}'")));
    let architecture: Architecture = field("architecture")?.parse().map_err(malformed)?;
    let input_shape = field("input_shape")?
        .split(',')
        .map(|s| s.parse::<usize>().map_err(|_| malformed("bad input_shape")))
        .collect::<Result<Vec<_>>>()?;
    let seed = field("seed")?.parse().map_err(|_| malformed("bad seed"))?;
    let flag = |k: &str| match field(k)?.as_str() {
        "false" => Ok(false),
        "true" => Ok(true),
        other => Err(malformed(format!("bad {k} '{other}'"))),
    };
    let attention_scaled = flag("attention_scaled")?;
    let spatial_rescale = flag("spatial_rescale")?;
    let spec = ModelSpec {
        architecture,
        input_shape,
        seed,
        attention_scaled,
        spatial_rescale,
    };
    let mut model = build(&spec)?;

    if manifest.len() != model.params.tensors.len() {
        return Err(malformed(format!(
            "manifest lists {} tensors, architecture has {}",
            manifest.len(),
            model.params.tensors.len()
        )));
    }
    for (entry, (name, t)) in manifest.iter().zip(model.params.names.iter().zip(&model.params.tensors)) {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let expected = format!("{name} {}", dims.join("x"));
        if *entry != expected {
            return Err(malformed(format!("manifest entry '{entry}', expected '{expected}'")));
        }
    }
    let payload = &body[header_end..];
    if payload.len() != 8 * model.param_count() {
        return Err(malformed(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            8 * model.param_count()
        )));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in &mut model.params.tensors {
        let shape = t.shape().to_vec();
        let data: Vec<f64> = values.by_ref().take(t.len()).collect();
        *t = Tensor::new(&shape, data)?;
    }
    Ok((model, metadata))
}

/// Writes atomically (temp file, then rename).
pub fn write_checkpoint(model: &Model, metadata: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    crate::io_util::write_atomic(path, &encode_checkpoint(model, metadata))?;
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(model, &BTreeMap::new(), path)
}

pub fn read_checkpoint(path: &Path) -> Result<(Model, BTreeMap<String, String>)> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_checkpoint(path).map(|(m, _)| m)
}
