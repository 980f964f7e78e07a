//! Flat parameter store with a named segment index, plus the checkpoint
//! format: `GARD` magic, version, config hash, segment index, then raw
//! little-endian doubles.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Buffers (`norm.*`) carry dataset statistics rather than weights:
    /// they receive no gradient and are skipped by finite-difference
    /// checks.
    pub fn is_buffer(&self) -> bool {
        self.name.starts_with("norm.")
    }
}

/// All trainable parameters as one contiguous vector; segments are
/// non-overlapping, contiguous, and cover the whole vector in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub data: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for s in &self.segments {
            if s.offset != offset {
                return Err(Error::Incompatible(format!(
                    "segment {} offset {} != expected {offset}",
                    s.name, s.offset
                )));
            }
            offset += s.len();
        }
        if offset != self.data.len() {
            return Err(Error::Incompatible(format!(
                "segments cover {offset} of {} values",
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        let s = self
            .segment(name)
            .ok_or_else(|| Error::Incompatible(format!("missing segment {name}")))?;
        Ok(&self.data[s.offset..s.offset + s.len()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let s = self
            .segments
            .iter()
            .find(|s| s.name == name)
            .cloned()
            .ok_or_else(|| Error::Incompatible(format!("missing segment {name}")))?;
        Ok(&mut self.data[s.offset..s.offset + s.len()])
    }

    /// Segment owning a flat parameter index.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        self.segments
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len())
    }
}

/// FNV-1a over arbitrary bytes; used for config hashing and seed derivation.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

const MAGIC: &[u8; 4] = b"GARD";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, params: &ModelParams, config_hash: u64) -> Result<()> {
    params.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&config_hash.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.segments.len() as u32).to_le_bytes())
        .map_err(io)?;
    for s in &params.segments {
        let name = s.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_all(&(s.rows as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(s.cols as u32).to_le_bytes()).map_err(io)?;
    }
    for v in &params.data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams, u64)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let bad = |m: &str| Error::Incompatible(format!("{}: {m}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|e| Error::io(path, e))?;
    let config_hash = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
    let n_seg = u32::from_le_bytes(u32buf) as usize;
    let mut segments = Vec::with_capacity(n_seg);
    let mut offset = 0usize;
    for _ in 0..n_seg {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(|e| Error::io(path, e))?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let rows = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let cols = u32::from_le_bytes(u32buf) as usize;
        let seg = Segment {
            name: String::from_utf8(name).map_err(|_| bad("segment name not utf-8"))?,
            offset,
            rows,
            cols,
        };
        offset += seg.len();
        segments.push(seg);
    }
    let mut data = vec![0.0f64; offset];
    let mut f64buf = [0u8; 8];
    for v in &mut data {
        r.read_exact(&mut f64buf).map_err(|e| Error::io(path, e))?;
        *v = f64::from_le_bytes(f64buf);
    }
    let params = ModelParams { data, segments };
    params.validate()?;
    Ok((params, config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ModelParams {
        ModelParams {
            data: (0..10).map(|i| i as f64 * 0.5).collect(),
            segments: vec![
                Segment {
                    name: "a.w".into(),
                    offset: 0,
                    rows: 2,
                    cols: 3,
                },
                Segment {
                    name: "a.b".into(),
                    offset: 6,
                    rows: 1,
                    cols: 4,
                },
            ],
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("ga_radiance_params_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.bin");
        let params = sample_params();
        write_checkpoint(&path, &params, 0xDEAD_BEEF).unwrap();
        let (back, hash) = read_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(hash, 0xDEAD_BEEF);
    }

    #[test]
    fn checkpoint_bytes_deterministic() {
        let dir = std::env::temp_dir().join("ga_radiance_params_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("c1.bin");
        let p2 = dir.join("c2.bin");
        let params = sample_params();
        write_checkpoint(&p1, &params, 7).unwrap();
        write_checkpoint(&p2, &params, 7).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn validate_rejects_gaps() {
        let mut params = sample_params();
        params.segments[1].offset = 7;
        assert!(params.validate().is_err());
    }

    #[test]
    fn segment_lookup() {
        let params = sample_params();
        assert_eq!(params.slice("a.b").unwrap().len(), 4);
        assert_eq!(params.segment_of(7).unwrap().name, "a.b");
        assert!(params.slice("missing").is_err());
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = std::env::temp_dir().join("ga_radiance_params_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::Incompatible(_))
        ));
    }
}
