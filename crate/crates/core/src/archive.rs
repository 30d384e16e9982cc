//! Single-file container: JSON manifest plus little-endian arrays, sealed by a sha256 digest.
//!
//! Layout: `magic(8) | format_version u32 | manifest_len u64 | manifest | payload | sha256(32)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U64,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 | Dtype::U64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    dtype: Dtype,
    len: usize,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    version: u32,
    meta: serde_json::Value,
    arrays: BTreeMap<String, ArrayEntry>,
}

pub struct ArchiveWriter {
    kind: String,
    version: u32,
    meta: serde_json::Value,
    arrays: BTreeMap<String, ArrayEntry>,
    payload: Vec<u8>,
}

impl ArchiveWriter {
    pub fn new(kind: &str, version: u32, meta: &impl Serialize) -> Result<Self> {
        Ok(ArchiveWriter {
            kind: kind.to_string(),
            version,
            meta: serde_json::to_value(meta)?,
            arrays: BTreeMap::new(),
            payload: Vec::new(),
        })
    }

    fn push(&mut self, name: &str, dtype: Dtype, len: usize, bytes: impl IntoIterator<Item = u8>) {
        let offset = self.payload.len();
        self.payload.extend(bytes);
        self.arrays.insert(name.to_string(), ArrayEntry { dtype, len, offset });
    }

    pub fn f64s(&mut self, name: &str, v: &[f64]) {
        self.push(name, Dtype::F64, v.len(), v.iter().flat_map(|x| x.to_le_bytes()));
    }

    pub fn usizes(&mut self, name: &str, v: &[usize]) {
        self.push(name, Dtype::U64, v.len(), v.iter().flat_map(|&x| (x as u64).to_le_bytes()));
    }

    pub fn bools(&mut self, name: &str, v: &[bool]) {
        self.push(name, Dtype::U8, v.len(), v.iter().map(|&b| b as u8));
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&Manifest {
            kind: self.kind.clone(),
            version: self.version,
            meta: self.meta.clone(),
            arrays: self.arrays.clone(),
        })?;
        let mut out = Vec::with_capacity(8 + 4 + 8 + manifest.len() + self.payload.len() + 32);
        out.extend_from_slice(magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn write(&self, magic: &[u8; 8], path: &Path) -> Result<()> {
        let bytes = self.to_bytes(magic)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

pub struct ArchiveReader {
    pub version: u32,
    meta: serde_json::Value,
    arrays: BTreeMap<String, ArrayEntry>,
    payload: Vec<u8>,
    origin: String,
}

impl ArchiveReader {
    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8], kind: &str, version: u32, origin: &str) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: origin.into(),
            reason: reason.to_string(),
        };
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != magic {
            return Err(corrupt("not a recognised archive"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let found = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if found != version {
            return Err(Error::IncompatibleBundle(format!(
                "{origin}: format version {found}, this build reads {version}"
            )));
        }
        let mlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        if 20 + mlen > body.len() {
            return Err(corrupt("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[20..20 + mlen])?;
        if manifest.kind != kind {
            return Err(Error::IncompatibleBundle(format!(
                "{origin}: holds a `{}`, expected `{kind}`",
                manifest.kind
            )));
        }
        let payload = body[20 + mlen..].to_vec();
        for (name, a) in &manifest.arrays {
            if a.offset + a.len * a.dtype.width() > payload.len() {
                return Err(corrupt(&format!("array `{name}` overruns payload")));
            }
        }
        Ok(ArchiveReader {
            version: found,
            meta: manifest.meta,
            arrays: manifest.arrays,
            payload,
            origin: origin.to_string(),
        })
    }

    pub fn open(path: &Path, magic: &[u8; 8], kind: &str, version: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, kind, version, &path.display().to_string())
    }

    pub fn meta<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(T::deserialize(&self.meta)?)
    }

    fn raw(&self, name: &str, dtype: Dtype) -> Result<(&[u8], usize)> {
        let a = self.arrays.get(name).ok_or_else(|| Error::Corrupt {
            path: self.origin.clone().into(),
            reason: format!("missing array `{name}`"),
        })?;
        if a.dtype != dtype {
            return Err(Error::Corrupt {
                path: self.origin.clone().into(),
                reason: format!("array `{name}` has dtype {:?}", a.dtype),
            });
        }
        Ok((&self.payload[a.offset..a.offset + a.len * dtype.width()], a.len))
    }

    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let (b, _) = self.raw(name, Dtype::F64)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn usizes(&self, name: &str) -> Result<Vec<usize>> {
        let (b, _) = self.raw(name, Dtype::U64)?;
        Ok(b.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect())
    }

    pub fn bools(&self, name: &str) -> Result<Vec<bool>> {
        let (b, _) = self.raw(name, Dtype::U8)?;
        Ok(b.iter().map(|&x| x != 0).collect())
    }
}
