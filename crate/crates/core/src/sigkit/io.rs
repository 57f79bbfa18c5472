//! Binary dataset files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `IQDS` |
//! | 2     | format version (currently 1) |
//! | 4     | metadata length `M` |
//! | `M`   | metadata, UTF-8 `key=value` lines sorted by key |
//! | 8     | frame count `N` |
//! | `N` × 1035 | records: id `u64`, label `u8`, snr `i16`, 256 × `f32` (I row then Q row) |
//! | 4     | CRC-32 (IEEE) of every preceding byte |

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{Dataset, DatasetMeta, Frame, GeneratorConfig, LabeledFrame, ModulationScheme, SigError};
use crate::binio::{self, Reader, Writer};
use crate::FRAME_SIZE;

pub const DATASET_MAGIC: [u8; 4] = *b"IQDS";
pub const DATASET_VERSION: u16 = 1;
const RECORD_BYTES: usize = 8 + 1 + 2 + FRAME_SIZE * 4;

pub(crate) fn encode(dataset: &Dataset) -> Vec<u8> {
    let mut meta = dataset.meta.attributes.clone();
    if let Some(g) = &dataset.meta.generator {
        g.to_kv(&mut meta);
    }
    let meta_text = binio::encode_kv(&meta);
    let mut w = Writer::new();
    w.bytes(&DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(meta_text.len() as u32);
    w.bytes(meta_text.as_bytes());
    w.u64(dataset.frames.len() as u64);
    for f in &dataset.frames {
        w.u64(f.id);
        w.u8(f.label.index() as u8);
        w.i16(f.snr_db as i16);
        w.f32s(f.frame.as_slice());
    }
    w.finish_with_crc()
}

pub(crate) fn decode(data: &[u8]) -> Result<Dataset, SigError> {
    let trunc = |e: binio::Truncated| SigError::Truncated(e.to_string());
    if data.len() < DATASET_MAGIC.len() {
        return if DATASET_MAGIC.starts_with(data) {
            Err(SigError::Truncated(format!("{} byte file", data.len())))
        } else {
            Err(SigError::BadMagic)
        };
    }
    let mut r = Reader::new(data);
    if r.take(4).map_err(trunc)? != DATASET_MAGIC {
        return Err(SigError::BadMagic);
    }
    let version = r.u16().map_err(trunc)?;
    if version != DATASET_VERSION {
        return Err(SigError::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let meta_len = r.u32().map_err(trunc)? as usize;
    let meta_bytes = r.take(meta_len).map_err(trunc)?;
    let count = r.u64().map_err(trunc)? as usize;
    let expected_rest = count
        .checked_mul(RECORD_BYTES)
        .and_then(|n| n.checked_add(4))
        .ok_or_else(|| SigError::Malformed(format!("frame count {count} overflows")))?;
    if r.remaining() < expected_rest {
        return Err(SigError::Truncated(format!(
            "{count} frames need {expected_rest} more bytes, {} present",
            r.remaining()
        )));
    }
    if r.remaining() > expected_rest {
        return Err(SigError::Malformed(format!(
            "{} trailing bytes",
            r.remaining() - expected_rest
        )));
    }
    binio::verify_crc(data).map_err(|(stored, computed)| SigError::Checksum { stored, computed })?;

    let meta_text = std::str::from_utf8(meta_bytes)
        .map_err(|_| SigError::Malformed("metadata is not UTF-8".into()))?;
    let mut attributes: BTreeMap<String, String> =
        binio::decode_kv(meta_text).map_err(SigError::Malformed)?;
    let generator = GeneratorConfig::from_kv(&attributes).map_err(SigError::Malformed)?;
    attributes.retain(|k, _| !k.starts_with("generator."));

    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.u64().map_err(trunc)?;
        let label_idx = r.u8().map_err(trunc)? as usize;
        let label = ModulationScheme::from_index(label_idx)
            .ok_or_else(|| SigError::Malformed(format!("label {label_idx} out of range")))?;
        let snr_db = r.i16().map_err(trunc)? as i32;
        let iq = r.f32s(FRAME_SIZE).map_err(trunc)?;
        let frame = Frame::new(iq).map_err(|e| SigError::Malformed(e.to_string()))?;
        frames.push(LabeledFrame {
            id,
            frame,
            label,
            snr_db,
        });
    }
    Ok(Dataset::new(
        frames,
        DatasetMeta {
            generator,
            attributes,
        },
    ))
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), SigError> {
    std::fs::write(path, encode(dataset))?;
    Ok(())
}

/// Loads a dataset file. Nothing is returned unless the whole file validates.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, SigError> {
    decode(&std::fs::read(path)?)
}

/// Debug CSV: one row per sample with columns `frame_id,label,snr,i,q`.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "frame_id,label,snr,i,q")?;
    for f in &dataset.frames {
        for (i, q) in f.frame.i_row().iter().zip(f.frame.q_row()) {
            writeln!(
                out,
                "{},{},{},{},{}",
                f.id,
                f.label,
                f.snr_db,
                crate::numfmt::sig9(*i as f64),
                crate::numfmt::sig9(*q as f64)
            )?;
        }
    }
    Ok(())
}

pub fn export_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), SigError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigkit::generate_dataset;

    fn sample() -> Dataset {
        generate_dataset(&GeneratorConfig {
            frames_per_class_per_snr: 2,
            snr_list: vec![-4, 10],
            seed: 42,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut ds = sample();
        ds.meta.attributes.insert("note".into(), "x y".into());
        let back = decode(&encode(&ds)).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.frames.iter().zip(&ds.frames) {
            let ab: Vec<u32> = a.frame.as_slice().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.frame.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::default();
        assert_eq!(decode(&encode(&ds)).unwrap(), ds);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&sample());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(SigError::BadMagic)));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode(&bad_version),
            Err(SigError::Version { found: 9, .. })
        ));

        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(decode(truncated), Err(SigError::Truncated(_))));
        assert!(matches!(decode(&bytes[..2]), Err(SigError::Truncated(_))));

        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(decode(&flipped), Err(SigError::Checksum { .. })));
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let ds = sample();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + ds.len() * 128);
        assert!(text.lines().nth(1).unwrap().starts_with("0,AM_DSB,-4,"));
    }
}
