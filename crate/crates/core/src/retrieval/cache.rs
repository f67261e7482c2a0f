//! Binary sidecar for node embeddings.
//!
//! Layout (little endian): magic `TWEMB`, format version `u8`, 32-byte graph
//! content hash, dimension `u32`, entry count `u32`, then per entry a `u32`
//! text length, the UTF-8 text, and `dimension` `f64` components.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{to_document, DialogGraph};
use crate::Scalar;

const MAGIC: &[u8; 5] = b"TWEMB";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CacheFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an embedding cache file")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    Version(u8),
    #[error("cache was built for a different graph")]
    GraphMismatch,
    #[error("cache dimension {got} does not match provider dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cache entry text is not UTF-8")]
    Utf8,
}

/// SHA-256 of the canonical document form of `graph`.
pub fn graph_content_hash(graph: &DialogGraph) -> [u8; 32] {
    Sha256::digest(to_document(graph).as_bytes()).into()
}

pub(crate) fn write_sidecar<S: Scalar>(
    path: &Path,
    hash: &[u8; 32],
    dimension: usize,
    entries: &[(&String, &Arc<Vec<S>>)],
) -> Result<(), CacheFileError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(hash);
    buf.extend_from_slice(&(dimension as u32).to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (text, v) in entries {
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for x in v.iter() {
            buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_sidecar<S: Scalar>(
    path: &Path,
    hash: &[u8; 32],
    dimension: usize,
) -> Result<Vec<(String, Vec<S>)>, CacheFileError> {
    let mut r = io::BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CacheFileError::BadMagic);
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(CacheFileError::Version(version[0]));
    }
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored)?;
    if &stored != hash {
        return Err(CacheFileError::GraphMismatch);
    }
    let dim = read_u32(&mut r)? as usize;
    if dim != dimension {
        return Err(CacheFileError::Dimension {
            expected: dimension,
            got: dim,
        });
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|_| CacheFileError::Utf8)?;
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            v.push(S::from_f64_lossy(f64::from_le_bytes(b)));
        }
        out.push((text, v));
    }
    Ok(out)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
