//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `"VIVATCKPT"`, u32 format version, u32 header length, canonical JSON header,
//! u32 tensor count, then per tensor: u16 name length, name, u8 dtype tag,
//! u8 rank, u64 dims, raw values. A SHA-256 digest of everything before it closes the file.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use vivat_autograd::{DType, Scalar, Tensor};

use super::config::ModelConfig;
use super::vae::VaeModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 9] = b"VIVATCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// One serialized tensor with its element type.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    entries: Vec<Entry>,
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format("unexpected end of checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(header: impl Serialize) -> Result<Self> {
        Ok(Self { header: serde_json::to_value(header)?, entries: Vec::new() })
    }

    pub fn header_as<H: DeserializeOwned>(&self) -> Result<H> {
        Ok(serde_json::from_value(self.header.clone())?)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
        t.data().iter().for_each(|v| v.write_le(&mut bytes));
        self.entries.push(Entry { name: name.into(), dtype: T::DTYPE, shape: t.shape().to_vec(), bytes });
    }

    /// Adds every `(name, tensor)` under `prefix`.
    pub fn push_all<'a, T: Scalar>(&mut self, prefix: &str, items: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) {
        for (name, t) in items {
            self.push(format!("{prefix}{name}"), t);
        }
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| format(format!("checkpoint has no tensor {name}")))?;
        decode_entry(e)
    }

    /// All tensors whose name starts with `prefix`, keyed by the remainder.
    pub fn tensors_with_prefix<T: Scalar>(&self, prefix: &str) -> Result<HashMap<String, Tensor<T>>> {
        self.entries
            .iter()
            .filter_map(|e| e.name.strip_prefix(prefix).map(|rest| (rest, e)))
            .map(|(rest, e)| Ok((rest.to_string(), decode_entry(e)?)))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_string(&self.header)?;
        out.extend_from_slice(&u32::try_from(header.len()).map_err(|_| format("header too large"))?.to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| format("tensor name too long"))?.to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dtype.tag());
            out.push(u8::try_from(e.shape.len()).map_err(|_| format("tensor rank too large"))?);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.bytes);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Verifies the digest first, then magic and version.
    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Integrity(format!("file is {} bytes, too short to be a checkpoint", buf.len())));
        }
        let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("SHA-256 digest mismatch (truncated or corrupted file)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(format("missing VIVATCKPT magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, supported: FORMAT_VERSION });
        }
        let header_len = r.u32()? as usize;
        let header: serde_json::Value = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| format("tensor name is not UTF-8"))?;
            let tag = r.u8()?;
            let dtype = DType::from_tag(tag).ok_or_else(|| format(format!("unknown dtype tag {tag}")))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let bytes = r.take(numel * dtype.size_of())?.to_vec();
            entries.push(Entry { name, dtype, shape, bytes });
        }
        if r.pos != body.len() {
            return Err(format("trailing bytes after tensor table"));
        }
        Ok(Self { header, entries })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
        let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn decode_entry<T: Scalar>(e: &Entry) -> Result<Tensor<T>> {
    if e.dtype != T::DTYPE {
        return Err(format(format!(
            "tensor {} is stored as {}, requested {}",
            e.name,
            e.dtype.name(),
            T::DTYPE.name()
        )));
    }
    let size = T::DTYPE.size_of();
    let data = e.bytes.chunks_exact(size).map(T::read_le).collect();
    Ok(Tensor::from_vec(&e.shape, data)?)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct ModelHeader {
    kind: String,
    dtype: String,
    model: ModelConfig,
}

pub const MODEL_PREFIX: &str = "model/";

/// Writes a model-only checkpoint.
pub fn save_model<T: Scalar>(model: &VaeModel<T>, path: &Path) -> Result<()> {
    model_checkpoint(model)?.write(path)
}

pub fn model_checkpoint<T: Scalar>(model: &VaeModel<T>) -> Result<Checkpoint> {
    let header = ModelHeader { kind: "model".into(), dtype: T::DTYPE.name().into(), model: model.config().clone() };
    let mut ck = Checkpoint::new(header)?;
    ck.push_all(MODEL_PREFIX, model.params().iter());
    Ok(ck)
}

/// Rebuilds a model from any checkpoint carrying a `model` config and `model/` tensors.
pub fn model_from_checkpoint<T: Scalar>(ck: &Checkpoint) -> Result<VaeModel<T>> {
    let config: ModelConfig = serde_json::from_value(
        ck.header.get("model").cloned().ok_or_else(|| format("checkpoint header has no model config"))?,
    )?;
    let mut model = VaeModel::new(config, 0)?;
    model.params_mut().load_from(&ck.tensors_with_prefix(MODEL_PREFIX)?)?;
    Ok(model)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<VaeModel<T>> {
    model_from_checkpoint(&Checkpoint::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new(serde_json::json!({"kind": "test", "b": 1, "a": [1, 2]})).unwrap();
        ck.push("x", &Tensor::<f32>::from_vec(&[2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0]).unwrap());
        ck.push("y", &Tensor::<f64>::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        ck
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.tensor::<f64>("y").unwrap().data(), &[0.1, 0.2, 0.3]);
        assert!(back.tensor::<f32>("y").is_err());
    }

    #[test]
    fn header_is_canonical() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains(r#"{"a":[1,2],"b":1,"kind":"test"}"#));
    }

    #[test]
    fn any_flipped_byte_is_an_integrity_error() {
        let bytes = sample().to_bytes().unwrap();
        for i in (0..bytes.len()).step_by(7) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x40;
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Integrity(_))), "byte {i}");
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));
    }

    #[test]
    fn newer_version_is_a_version_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.truncate(bytes.len() - DIGEST_LEN);
        bytes[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        match Checkpoint::from_bytes(&bytes) {
            Err(e @ Error::Version { found: 2, supported: 1 }) => {
                let msg = e.to_string();
                assert!(msg.contains('2') && msg.contains('1'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
