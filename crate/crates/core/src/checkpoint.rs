//! Self-describing binary checkpoints.
//!
//! Layout: one version byte, a little-endian `u32` header length, a JSON
//! header (config echo and tensor table), then every tensor as `f64` LE in
//! table order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::buffer::{BufferParams, BufferVariant, BufferedModel};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams, NamedTensor};
use crate::tensor::Matrix;

pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferHeader {
    pub variant: BufferVariant,
    /// Content hash of the base model the buffers were tuned on.
    pub base_hash: String,
    /// Where the base checkpoint lived when this file was written.
    pub base_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    model: ModelConfig,
    tensors: Vec<TensorEntry>,
    buffer: Option<BufferHeader>,
}

fn encode(header: &Header, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Unsupported("checkpoint header too large".into()))?;
    let mut out = vec![FORMAT_VERSION];
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors {
        out.extend_from_slice(&t.value.to_le_bytes());
    }
    Ok(out)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<(Header, Vec<NamedTensor>)> {
    let fail = |m: String| Error::load(path, m);
    match bytes.first() {
        Some(&FORMAT_VERSION) => {}
        Some(v) => return Err(fail(format!("unsupported checkpoint version {v}"))),
        None => return Err(fail("empty file".into())),
    }
    if bytes.len() < 5 {
        return Err(fail("truncated header length".into()));
    }
    let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let body = bytes.get(5..5 + len).ok_or_else(|| fail("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| fail(format!("malformed header: {e}")))?;
    let mut offset = 5 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n = e.rows * e.cols * 8;
        let chunk = bytes.get(offset..offset + n).ok_or_else(|| fail(format!("truncated tensor {}", e.name)))?;
        let data = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(NamedTensor { name: e.name.clone(), value: Matrix::new(e.rows, e.cols, data)? });
        offset += n;
    }
    if offset != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok((header, tensors))
}

fn table(tensors: &[NamedTensor]) -> Vec<TensorEntry> {
    tensors.iter().map(|t| TensorEntry { name: t.name.clone(), rows: t.value.rows(), cols: t.value.cols() }).collect()
}

pub fn model_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let header = Header { kind: "model".into(), model: params.config.clone(), tensors: table(&params.tensors), buffer: None };
    encode(&header, &params.tensors)
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(params)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let (header, tensors) = decode(path, &bytes)?;
    if header.kind != "model" {
        return Err(Error::load(path, format!("expected a model checkpoint, found `{}`", header.kind)));
    }
    ModelParams::from_tensors(header.model, tensors)
}

/// Writes the buffers of `bm`, referencing its base by content hash.
pub fn save_buffers(bm: &BufferedModel, base_path: Option<&Path>, path: impl AsRef<Path>) -> Result<()> {
    let tensors = bm.buffers.named();
    let header = Header {
        kind: "buffer".into(),
        model: bm.config().clone(),
        tensors: table(&tensors),
        buffer: Some(BufferHeader {
            variant: bm.variant(),
            base_hash: bm.base.content_hash(),
            base_path: base_path.map(Path::to_path_buf),
        }),
    };
    fs::write(path, encode(&header, &tensors)?)?;
    Ok(())
}

/// Reads buffer weights and the base reference without loading the base.
pub fn read_buffers(path: impl AsRef<Path>) -> Result<(BufferParams, BufferHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let (header, tensors) = decode(path, &bytes)?;
    let meta = match (header.kind.as_str(), header.buffer) {
        ("buffer", Some(meta)) => meta,
        (kind, _) => return Err(Error::load(path, format!("expected a buffer checkpoint, found `{kind}`"))),
    };
    let buffers = BufferParams { variant: meta.variant, weights: tensors.into_iter().map(|t| t.value).collect() };
    Ok((buffers, meta))
}

/// Attaches stored buffers to `base`, which must match the recorded hash.
pub fn load_buffered(path: impl AsRef<Path>, base: ModelParams) -> Result<BufferedModel> {
    let (buffers, meta) = read_buffers(path)?;
    let found = base.content_hash();
    if found != meta.base_hash {
        return Err(Error::Integrity { expected: meta.base_hash, found });
    }
    BufferedModel::with_buffers(base, buffers)
}

/// Either kind of checkpoint; a buffer checkpoint resolves its base through
/// the recorded path (relative paths are taken from the buffer file's
/// directory when not found as given).
#[derive(Clone, Debug)]
pub enum AnyModel {
    Base(ModelParams),
    Buffered(BufferedModel),
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    let (header, _) = decode(path, &bytes)?;
    if header.kind == "model" {
        return Ok(AnyModel::Base(load_model(path)?));
    }
    let (_, meta) = read_buffers(path)?;
    let base_path = meta
        .base_path
        .ok_or_else(|| Error::load(path, "buffer checkpoint records no base path; pass the base explicitly"))?;
    let resolved = if base_path.exists() {
        base_path
    } else {
        path.parent().unwrap_or(Path::new(".")).join(base_path.file_name().unwrap_or_default())
    };
    Ok(AnyModel::Buffered(load_buffered(path, load_model(resolved)?)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::attach;
    use crate::models::Arch;

    #[test]
    fn model_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::init(&ModelConfig::new(Arch::Gin, 5, 4, 3, 2), 3).unwrap();
        let path = dir.path().join("m.ckpt");
        save_model(&p, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), p);

        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Load { .. })));
        bytes[0] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn buffer_round_trip_checks_the_base() {
        let dir = tempfile::tempdir().unwrap();
        let base = ModelParams::init(&ModelConfig::new(Arch::Gcn, 5, 4, 3, 2), 3).unwrap();
        let base_path = dir.path().join("base.ckpt");
        save_model(&base, &base_path).unwrap();
        let mut bm = attach(base.clone(), BufferVariant::Full);
        bm.buffers.weights[1].set(0, 0, 0.25);
        let path = dir.path().join("buf.ckpt");
        save_buffers(&bm, Some(&base_path), &path).unwrap();
        assert_eq!(load_buffered(&path, base.clone()).unwrap(), bm);
        match load_any(&path).unwrap() {
            AnyModel::Buffered(loaded) => assert_eq!(loaded, bm),
            AnyModel::Base(_) => panic!("wrong kind"),
        }
        let mut other = base;
        other.tensors[0].value.set(0, 0, 1.0);
        assert!(matches!(load_buffered(&path, other), Err(Error::Integrity { .. })));
    }
}
