//! `BKV1` vocabulary files: magic, k u32, dim u32, k x dim f32 centers,
//! k f32 idf weights.
//!
//! A vocabulary is identified by the SHA-256 of its encoded bytes; databases
//! record that hash.

use std::path::Path;

use barkid_core::descriptor::DESCRIPTOR_DIM;
use barkid_core::vocabulary::{Center, Vocabulary};

use super::{read_file, sha256, write_file, Reader, Writer};
use crate::error::Result;

pub const MAGIC: &[u8; 4] = b"BKV1";

pub fn encode(voc: &Vocabulary) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u32(voc.k() as u32);
    w.u32(DESCRIPTOR_DIM as u32);
    for c in voc.centers() {
        for &v in c {
            w.f32(v);
        }
    }
    for &v in voc.idf() {
        w.f32(v);
    }
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vocabulary> {
    let mut r = Reader::new(bytes, MAGIC, path)?;
    let k = r.u32()?;
    let dim = r.u32()?;
    if dim as usize != DESCRIPTOR_DIM {
        return Err(r.error(format!("center dimension {dim}, expected {DESCRIPTOR_DIM}")));
    }
    let k = r.count(k as u64, 4 * (DESCRIPTOR_DIM + 1))?;
    let mut centers = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c: Center = [0.0; DESCRIPTOR_DIM];
        for v in c.iter_mut() {
            *v = r.f32()?;
        }
        centers.push(c);
    }
    let idf = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Vocabulary::from_parts(centers, idf)?)
}

/// Writes the vocabulary and returns its hash.
pub fn save(path: &Path, voc: &Vocabulary) -> Result<[u8; 32]> {
    let bytes = encode(voc);
    write_file(path, &bytes)?;
    Ok(sha256(&bytes))
}

/// The vocabulary and the hash of the file it came from.
pub fn load(path: &Path) -> Result<(Vocabulary, [u8; 32])> {
    let bytes = read_file(path)?;
    let voc = decode(&bytes, path)?;
    Ok((voc, sha256(&bytes)))
}
