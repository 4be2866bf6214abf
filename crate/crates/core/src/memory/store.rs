//! Concept library file format.
//!
//! ```text
//! "EGOC"                      4 bytes
//! version                     u32 LE, major << 16 | minor
//! concept count               u32 LE
//! per concept:
//!   name length, name         u32 LE + UTF-8
//!   dim, rows                 u32 LE each
//!   tokens                    rows * dim f32 LE, row-major
//!   metadata length, metadata u32 LE + UTF-8 JSON (views, backend fingerprint)
//! CRC-32 (IEEE)               u32 LE over every preceding byte
//! ```
//!
//! Readers accept any minor version of their major; unknown metadata fields
//! are ignored.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::concept::{ConceptLibrary, ConceptMemory, ViewProvenance};
use crate::error::{Error, LibraryError, Result};
use crate::tensor::TokenMatrix;

pub const LIBRARY_MAGIC: &[u8; 4] = b"EGOC";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

#[derive(Serialize, Deserialize)]
struct Metadata {
    views: Vec<ViewProvenance>,
    backend_fingerprint: String,
}

pub fn encode_library(lib: &ConceptLibrary) -> Vec<u8> {
    encode_with_version(lib, FORMAT_MAJOR, FORMAT_MINOR)
}

pub(crate) fn encode_with_version(lib: &ConceptLibrary, major: u16, minor: u16) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(LIBRARY_MAGIC);
    put_u32(&mut buf, (major as u32) << 16 | minor as u32);
    put_u32(&mut buf, lib.len() as u32);
    for c in lib.iter() {
        put_u32(&mut buf, c.name.len() as u32);
        buf.extend_from_slice(c.name.as_bytes());
        put_u32(&mut buf, c.tokens.dim() as u32);
        put_u32(&mut buf, c.tokens.rows() as u32);
        for v in c.tokens.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let meta = serde_json::to_vec(&Metadata {
            views: c.views.clone(),
            backend_fingerprint: c.backend_fingerprint.clone(),
        })
        .expect("metadata serializes");
        put_u32(&mut buf, meta.len() as u32);
        buf.extend_from_slice(&meta);
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LibraryError> {
        let end = self.pos.checked_add(n).ok_or(LibraryError::Truncated)?;
        if end > self.bytes.len() {
            return Err(LibraryError::Truncated);
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, LibraryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_library(bytes: &[u8]) -> Result<ConceptLibrary, LibraryError> {
    if bytes.len() < 4 || &bytes[..4] != LIBRARY_MAGIC {
        return Err(LibraryError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(LibraryError::Truncated);
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { bytes: payload, pos: 4 };
    let version = r.u32()?;
    let (major, minor) = ((version >> 16) as u16, (version & 0xffff) as u16);
    if major != FORMAT_MAJOR {
        return Err(LibraryError::UnsupportedVersion { major, minor });
    }
    let count = r.u32()? as usize;
    let mut concepts = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| LibraryError::Malformed("concept name is not UTF-8".into()))?
            .to_string();
        let dim = r.u32()? as usize;
        let rows = r.u32()? as usize;
        let n_bytes = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or(LibraryError::Truncated)?;
        let data = r
            .take(n_bytes)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let meta_len = r.u32()? as usize;
        let meta_bytes = r.take(meta_len)?;
        let meta: Metadata = serde_json::from_slice(meta_bytes)
            .map_err(|e| LibraryError::Malformed(format!("metadata of `{name}`: {e}")))?;
        let tokens =
            TokenMatrix::new(rows, dim, data).map_err(|e| LibraryError::Malformed(format!("tokens of `{name}`: {e}")))?;
        concepts.push(ConceptMemory {
            name,
            tokens,
            views: meta.views,
            backend_fingerprint: meta.backend_fingerprint,
        });
    }
    if r.pos != payload.len() {
        return Err(LibraryError::Malformed(format!(
            "{} unexpected trailing bytes",
            payload.len() - r.pos
        )));
    }
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(LibraryError::Checksum { stored, computed });
    }
    ConceptLibrary::from_concepts(concepts).map_err(|e| LibraryError::Malformed(e.to_string()))
}

pub fn load_library(path: &Path) -> Result<ConceptLibrary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_library(&bytes)?)
}

/// Write the library through a temp file in the same directory, fsync, then rename.
pub fn save_library(lib: &ConceptLibrary, path: &Path) -> Result<()> {
    write_atomic(path, &encode_library(lib), None)
}

/// Where a simulated crash interrupts [`save_library_crashing`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Half of the bytes reached the temp file.
    MidWrite,
    /// The temp file is complete but was never renamed.
    BeforeRename,
}

/// Run the save protocol but abandon it at `crash`, leaving the temp file
/// behind as a killed process would. Always returns an error.
#[doc(hidden)]
pub fn save_library_crashing(lib: &ConceptLibrary, path: &Path, crash: CrashPoint) -> Result<()> {
    write_atomic(path, &encode_library(lib), Some(crash))
}

fn write_atomic(path: &Path, bytes: &[u8], crash: Option<CrashPoint>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".egoc-")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    let split = if crash == Some(CrashPoint::MidWrite) {
        bytes.len() / 2
    } else {
        bytes.len()
    };
    tmp.write_all(&bytes[..split]).map_err(|e| Error::io(tmp.path(), e))?;
    if let Some(point) = crash {
        // leave the temp file on disk like a killed process would
        let (_file, temp_path) = tmp.into_parts();
        let _ = temp_path.keep();
        return Err(Error::Format(format!("simulated crash at {point:?}")));
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn library() -> ConceptLibrary {
        let mk = |name: &str, rows: usize, seed: f32| ConceptMemory {
            name: name.into(),
            tokens: TokenMatrix::new(rows, 4, (0..rows * 4).map(|i| i as f32 * 0.37 + seed).collect()).unwrap(),
            views: vec![ViewProvenance {
                view_id: format!("{name}/0"),
                k_c: rows,
                alpha: 18.75,
                indices: (0..rows).map(|i| i * 3).collect(),
                keywords: vec!["red cap".into(), "zigzag".into()],
            }],
            backend_fingerprint: "abc".into(),
        };
        ConceptLibrary::from_concepts(vec![mk("mug", 3, 0.1), mk("my-pen", 2, -4.0)]).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = encode_library(&library());
        assert_eq!(&b[..4], b"EGOC");
        assert_eq!(&b[4..8], &0x0001_0000u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &3u32.to_le_bytes());
        assert_eq!(&b[16..19], b"mug");
        let crc = crc32fast::hash(&b[..b.len() - 4]);
        assert_eq!(&b[b.len() - 4..], &crc.to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let lib = library();
        assert_eq!(decode_library(&encode_library(&lib)).unwrap(), lib);
    }

    #[test]
    fn distinct_errors() {
        let b = encode_library(&library());
        let mut bad_crc = b.clone();
        *bad_crc.last_mut().unwrap() ^= 0xff;
        assert!(matches!(decode_library(&bad_crc), Err(LibraryError::Checksum { .. })));

        let mut flipped = b.clone();
        flipped[30] ^= 0x01;
        assert!(matches!(decode_library(&flipped), Err(LibraryError::Checksum { .. })));

        assert_eq!(decode_library(&b[..b.len() - 40]), Err(LibraryError::Truncated));
        assert_eq!(decode_library(b"NOPE...."), Err(LibraryError::BadMagic));

        let v2 = encode_with_version(&library(), 2, 0);
        assert_eq!(
            decode_library(&v2),
            Err(LibraryError::UnsupportedVersion { major: 2, minor: 0 })
        );
    }

    #[test]
    fn newer_minor_with_unknown_fields_loads() {
        // hand-build a 1.3 file whose metadata carries an extra field
        let lib = library();
        let mut buf = Vec::new();
        buf.extend_from_slice(LIBRARY_MAGIC);
        put_u32(&mut buf, 1 << 16 | 3);
        put_u32(&mut buf, 1);
        let c = &lib.concepts()[0];
        put_u32(&mut buf, c.name.len() as u32);
        buf.extend_from_slice(c.name.as_bytes());
        put_u32(&mut buf, 4);
        put_u32(&mut buf, c.tokens.rows() as u32);
        for v in c.tokens.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut meta = serde_json::to_value(Metadata {
            views: c.views.clone(),
            backend_fingerprint: c.backend_fingerprint.clone(),
        })
        .unwrap();
        meta["future_field"] = serde_json::json!({"anything": [1, 2]});
        let meta = serde_json::to_vec(&meta).unwrap();
        put_u32(&mut buf, meta.len() as u32);
        buf.extend_from_slice(&meta);
        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        let back = decode_library(&buf).unwrap();
        assert_eq!(back.concepts()[0], *c);
    }

    #[test]
    fn crash_during_save_keeps_old_library() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lib.egoc");
        let lib = library();
        save_library(&lib, &path).unwrap();
        let before = fs::read(&path).unwrap();
        let mut bigger = lib.clone();
        bigger.remove("mug");
        for point in [CrashPoint::MidWrite, CrashPoint::BeforeRename] {
            assert!(save_library_crashing(&bigger, &path, point).is_err());
            assert_eq!(fs::read(&path).unwrap(), before);
            assert_eq!(load_library(&path).unwrap(), lib);
        }
    }
}
