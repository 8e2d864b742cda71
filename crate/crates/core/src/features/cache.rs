use std::path::Path;

use cafnet_autograd::write_atomic;

use super::{FeatureSet, Matrix, N_CEPSTRAL, N_CHROMA, N_FRAMES};
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"CAFF";
pub const CACHE_VERSION: u16 = 1;

pub fn encode_cache(f: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * (2 * N_CEPSTRAL + N_CHROMA) * N_FRAMES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for (name, m) in f.blocks() {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_cache(bytes: &[u8]) -> std::result::Result<FeatureSet, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("bad magic, not a feature cache".into());
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(format!("cache version {version}, expected {CACHE_VERSION}"));
    }
    let mut blocks = Vec::with_capacity(3);
    for (want, rows_want) in [("mfcc", N_CEPSTRAL), ("lfcc", N_CEPSTRAL), ("chroma", N_CHROMA)] {
        let len = c.take(1)?[0] as usize;
        let name = c.take(len)?;
        if name != want.as_bytes() {
            return Err(format!("expected block {want:?}, found {:?}", String::from_utf8_lossy(name)));
        }
        let (rows, cols) = (c.u32()? as usize, c.u32()? as usize);
        if (rows, cols) != (rows_want, N_FRAMES) {
            return Err(format!("block {want}: shape {rows}x{cols}, expected {rows_want}x{N_FRAMES}"));
        }
        let raw = c.take(rows * cols * 4)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        blocks.push(Matrix::from_vec(rows, cols, data));
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    let chroma = blocks.pop().unwrap();
    let lfcc = blocks.pop().unwrap();
    let mfcc = blocks.pop().unwrap();
    Ok(FeatureSet { mfcc, lfcc, chroma })
}

/// Cache file for a manifest entry path: same relative layout, `.caff` suffix.
pub fn cache_path(cache_dir: &Path, entry_path: &str) -> std::path::PathBuf {
    cache_dir.join(entry_path).with_extension("caff")
}

pub fn write_cache(f: &FeatureSet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_cache(f)).map_err(|e| CoreError::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<FeatureSet> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_cache(&bytes).map_err(|d| CoreError::format(path, d))
}
