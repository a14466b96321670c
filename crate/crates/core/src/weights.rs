//! The `SFVW` weight container.
//!
//! Layout:
//!
//! ```text
//! bytes 0..4      magic "SFVW"
//! bytes 4..8      header length L, u32 little-endian
//! bytes 8..8+L    UTF-8 header, one entry per line
//! bytes 8+L..     payload: f64 little-endian values
//! ```
//!
//! Header lines are either `tensor <name> <d0,d1,...> <byte offset>` or
//! `meta <key> <value>`. Offsets are relative to the payload start, tensors
//! may not overlap, and the payload must end exactly where the last tensor
//! ends.

use std::fs;
use std::path::Path;

use crate::error::{ContainerError, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SFVW";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    tensors: Vec<(String, Tensor)>,
    meta: Vec<(String, String)>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn insert_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require_tensor(&self, name: &str) -> std::result::Result<&Tensor, ContainerError> {
        self.tensor(name)
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> std::result::Result<&str, ContainerError> {
        self.meta(key)
            .ok_or_else(|| ContainerError::Missing(key.to_string()))
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {} {offset}\n", dims.join(",")));
            offset += t.len() * 8;
        }
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, ContainerError> {
        if bytes.len() < 8 {
            return Err(ContainerError::Truncated {
                needed: 8,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic { found: magic });
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8 + header_len;
        if bytes.len() < header_end {
            return Err(ContainerError::Truncated {
                needed: header_end,
                available: bytes.len(),
            });
        }
        let header = std::str::from_utf8(&bytes[8..header_end]).map_err(|e| {
            ContainerError::Header {
                line: 0,
                reason: format!("header is not UTF-8: {e}"),
            }
        })?;
        let payload = &bytes[header_end..];

        struct Entry {
            name: String,
            shape: Vec<usize>,
            offset: usize,
        }
        let mut entries = Vec::new();
        let mut meta = Vec::new();
        for (lineno, line) in header.lines().enumerate() {
            let line_no = lineno + 1;
            let bad = |reason: &str| ContainerError::Header {
                line: line_no,
                reason: reason.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match parts.next() {
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| bad("missing tensor name"))?;
                    let rest = parts.next().ok_or_else(|| bad("missing shape and offset"))?;
                    let (shape_s, offset_s) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad("missing offset"))?;
                    let shape = shape_s
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("shape must be comma-separated integers"))?;
                    if shape.is_empty() || shape.contains(&0) {
                        return Err(bad("shape has a zero dimension"));
                    }
                    let offset = offset_s
                        .trim()
                        .parse::<usize>()
                        .map_err(|_| bad("offset must be an integer"))?;
                    entries.push(Entry {
                        name: name.to_string(),
                        shape,
                        offset,
                    });
                }
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad("missing meta key"))?;
                    let value = parts.next().unwrap_or("");
                    meta.push((key.to_string(), value.to_string()));
                }
                _ => return Err(bad("expected `tensor` or `meta`")),
            }
        }

        let mut spans: Vec<(usize, usize, &str)> = entries
            .iter()
            .map(|e| (e.offset, e.offset + 8 * e.shape.iter().product::<usize>(), e.name.as_str()))
            .collect();
        spans.sort_by_key(|s| s.0);
        let mut cursor = 0usize;
        for &(start, end, name) in &spans {
            if start < cursor || start % 8 != 0 {
                return Err(ContainerError::Layout {
                    name: name.to_string(),
                    offset: start,
                });
            }
            cursor = end;
        }
        if payload.len() != cursor {
            return Err(ContainerError::PayloadLength {
                expected: cursor,
                actual: payload.len(),
            });
        }

        let tensors = entries
            .into_iter()
            .map(|e| {
                let numel: usize = e.shape.iter().product();
                let data = payload[e.offset..e.offset + numel * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                let t = Tensor::new(e.shape, data).expect("shape checked above");
                (e.name, t)
            })
            .collect();
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|source| Error::Container {
            path: path.to_path_buf(),
            source,
        })
    }
}
