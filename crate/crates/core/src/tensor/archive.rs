//! Named-tensor archive used for checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `NTAR` |
//! | 2     | format version (currently 1) |
//! | 4     | metadata length `M` |
//! | `M`   | metadata, UTF-8 `key=value` lines sorted by key |
//! | 4     | tensor count |
//! | per tensor | `u16` name length, UTF-8 name, `u8` rank, rank × `u32` extents, `f32` payload |
//! | 4     | CRC-32 (IEEE) of every preceding byte |

use std::collections::BTreeMap;
use std::path::Path;

use super::{Tensor, TensorError};
use crate::binio::{self, Reader, Writer};

pub const ARCHIVE_MAGIC: [u8; 4] = *b"NTAR";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensorArchive {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl NamedTensorArchive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let meta = binio::encode_kv(&self.metadata);
        let mut w = Writer::new();
        w.bytes(&ARCHIVE_MAGIC);
        w.u16(ARCHIVE_VERSION);
        w.u32(meta.len() as u32);
        w.bytes(meta.as_bytes());
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            if name.len() > u16::MAX as usize || t.shape().len() > u8::MAX as usize {
                return Err(TensorError::Invalid(format!("tensor {name:?} cannot be archived")));
            }
            if !t.all_finite() {
                return Err(TensorError::NonFinite(format!("tensor {name}")));
            }
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
            w.u8(t.shape().len() as u8);
            for &d in t.shape() {
                w.u32(d as u32);
            }
            w.f32s(t.data());
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, TensorError> {
        let trunc = |e: binio::Truncated| TensorError::ArchiveTruncated(e.to_string());
        if data.len() < 4 {
            return if ARCHIVE_MAGIC.starts_with(data) {
                Err(TensorError::ArchiveTruncated(format!("{} byte file", data.len())))
            } else {
                Err(TensorError::ArchiveMagic)
            };
        }
        let mut r = Reader::new(data);
        if r.take(4).map_err(trunc)? != ARCHIVE_MAGIC {
            return Err(TensorError::ArchiveMagic);
        }
        let version = r.u16().map_err(trunc)?;
        if version != ARCHIVE_VERSION {
            return Err(TensorError::ArchiveVersion {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        // The body is variable-length, so structure is parsed against the
        // payload without its trailing CRC and the CRC is checked afterwards.
        if data.len() < r.position() + 4 {
            return Err(TensorError::ArchiveTruncated("missing checksum".into()));
        }
        let body_end = data.len() - 4;
        let mut r = Reader::new(&data[..body_end]);
        r.take(6).map_err(trunc)?;
        let parsed = parse_body(&mut r);
        let crc = binio::verify_crc(data)
            .map_err(|(stored, computed)| TensorError::ArchiveChecksum { stored, computed });
        match (parsed, crc) {
            (Ok(a), Ok(_)) if r.remaining() == 0 => Ok(a),
            (Ok(_), Ok(_)) => Err(TensorError::ArchiveMalformed(format!(
                "{} trailing bytes",
                r.remaining()
            ))),
            // A cut-off file reports truncation even though its CRC also fails.
            (Err(e @ TensorError::ArchiveTruncated(_)), _) => Err(e),
            (_, Err(e)) => Err(e),
            (Err(e), Ok(_)) => Err(e),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn parse_body(r: &mut Reader<'_>) -> Result<NamedTensorArchive, TensorError> {
    let trunc = |e: binio::Truncated| TensorError::ArchiveTruncated(e.to_string());
    let malformed = TensorError::ArchiveMalformed;
    let meta_len = r.u32().map_err(trunc)? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len).map_err(trunc)?)
        .map_err(|_| malformed("metadata is not UTF-8".into()))?;
    let metadata = binio::decode_kv(meta_text).map_err(malformed)?;
    let count = r.u32().map_err(trunc)? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16().map_err(trunc)? as usize;
        let name = std::str::from_utf8(r.take(name_len).map_err(trunc)?)
            .map_err(|_| malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8().map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32().map_err(trunc)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed(format!("tensor {name:?} extents overflow")))?;
        if n.saturating_mul(4) > r.remaining() {
            return Err(TensorError::ArchiveTruncated(format!(
                "tensor {name:?} needs {} payload bytes, {} present",
                n.saturating_mul(4),
                r.remaining()
            )));
        }
        let data = r.f32s(n).map_err(trunc)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(malformed(format!("tensor {name:?} has non-finite entries")));
        }
        if tensors.iter().any(|(n, _): &(String, Tensor)| *n == name) {
            return Err(malformed(format!("duplicate tensor {name:?}")));
        }
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(NamedTensorArchive { metadata, tensors })
}
