//! Binary weight files: a magic, a format version, the SHA-256 of the
//! config JSON, the config itself, then named little-endian f32 tensors.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        reason: reason.into(),
    }
}

pub fn config_digest(config: &str) -> [u8; 32] {
    Sha256::digest(config.as_bytes()).into()
}

impl Checkpoint {
    pub fn new(config: String) -> Self {
        Self {
            config,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors named `prefix.*` in stored order, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<(&str, &Tensor<f32>)> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(n, t)| n.strip_prefix(p.as_str()).map(|s| (s, t)))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
        out.extend_from_slice(&config_digest(&self.config));
        write_str(&mut out, &self.config);
        out.write_u32::<LittleEndian>(self.tensors.len() as u32).unwrap();
        for (name, t) in &self.tensors {
            write_str(&mut out, name);
            for d in t.shape {
                out.write_u32::<LittleEndian>(d as u32).unwrap();
            }
            for v in &t.data {
                out.write_f32::<LittleEndian>(*v).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest).map_err(|_| bad("truncated header"))?;
        let config = read_str(&mut r)?;
        if config_digest(&config) != digest {
            return Err(bad("config digest mismatch"));
        }
        let count = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated tensor table"))?;
        let mut tensors = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated shape"))? as usize;
            }
            let len: usize = shape.iter().product();
            let remaining = bytes.len() - r.position() as usize;
            if len.checked_mul(4).is_none_or(|b| b > remaining) {
                return Err(bad(format!("tensor {name} overruns the file")));
            }
            let mut data = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(|_| bad("truncated tensor data"))?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated string"))? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(bad("string overruns the file"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|_| bad("truncated string"))?;
    String::from_utf8(buf).map_err(|_| bad("string is not utf-8"))
}
