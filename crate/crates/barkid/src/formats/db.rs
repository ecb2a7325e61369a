//! `BKDB` signature databases.
//!
//! Header: magic, version u32, vocabulary hash (32 bytes), config hash
//! (32 bytes), vocabulary size u32, signature count u64. Each signature:
//! image id (u16 + UTF-8), surface flag u8 (+ u16 string), keypoints as
//! exact JSONL (u32 + UTF-8), descriptor count u32 and per descriptor a
//! degenerate flag u8 followed by 128 f32 unless degenerate, then BoW
//! pairs (u32 count, u32 word + f64 weight each). The inverted index
//! postings follow: per word a u32 count and (u32 ordinal, f64 weight)
//! pairs. Postings are checked against the index rebuilt from the BoW
//! vectors on load.

use std::path::Path;

use barkid_core::descriptor::{Descriptor, DESCRIPTOR_DIM};
use barkid_core::retrieval::{ImageSignature, SignatureDb};
use barkid_core::vocabulary::BowVector;

use super::keypoints::{from_jsonl, to_jsonl_exact};
use super::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BKDB";
pub const VERSION: u32 = 1;

pub fn encode(db: &SignatureDb) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u32(VERSION);
    w.bytes(db.vocab_hash());
    w.bytes(db.config_hash());
    w.u32(db.index().vocab_size() as u32);
    w.u64(db.len() as u64);
    for s in db.signatures() {
        w.short_str(&s.image_id);
        match &s.surface_id {
            Some(id) => {
                w.u8(1);
                w.short_str(id);
            }
            None => w.u8(0),
        }
        w.long_str(&to_jsonl_exact(&s.keypoints));
        w.u32(s.descriptors.len() as u32);
        for d in &s.descriptors {
            if d.is_degenerate() {
                w.u8(1);
            } else {
                w.u8(0);
                for &v in d.values() {
                    w.f32(v);
                }
            }
        }
        w.u32(s.bow.nnz() as u32);
        for &(word, weight) in s.bow.entries() {
            w.u32(word);
            w.f64(weight);
        }
    }
    let index = db.index();
    for word in 0..index.vocab_size() {
        let postings = index.postings(word);
        w.u32(postings.len() as u32);
        for &(ordinal, weight) in postings {
            w.u32(ordinal);
            w.f64(weight);
        }
    }
    w.0
}

/// Decodes a database; when `vocab_hash` is given it must match the one
/// recorded in the file.
pub fn decode(bytes: &[u8], path: &Path, vocab_hash: Option<&[u8; 32]>) -> Result<SignatureDb> {
    let mut r = Reader::new(bytes, MAGIC, path)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let stored_vocab = r.hash()?;
    if let Some(expected) = vocab_hash {
        if *expected != stored_vocab {
            return Err(Error::HashMismatch {
                path: path.to_path_buf(),
                what: "vocabulary",
                expected: hex::encode(expected),
                found: hex::encode(stored_vocab),
            });
        }
    }
    let config_hash = r.hash()?;
    let vocab_size = r.u32()? as usize;
    let n = r.u64()?;
    let n = r.count(n, 2 + 1 + 4 + 4 + 4)?;
    let mut signatures = Vec::with_capacity(n);
    for _ in 0..n {
        let image_id = r.short_str()?;
        let surface_id = match r.u8()? {
            0 => None,
            1 => Some(r.short_str()?),
            f => return Err(r.error(format!("bad surface flag {f}"))),
        };
        let keypoints = from_jsonl(&r.long_str()?).map_err(|e| r.error(e))?;
        let nd = r.u32()?;
        let nd = r.count(nd as u64, 1)?;
        let mut descriptors = Vec::with_capacity(nd);
        for _ in 0..nd {
            let d = match r.u8()? {
                1 => Descriptor::degenerate(),
                0 => {
                    let mut v = [0.0f32; DESCRIPTOR_DIM];
                    for x in v.iter_mut() {
                        *x = r.f32()?;
                    }
                    Descriptor::from_unit(v)?
                }
                f => return Err(r.error(format!("bad descriptor flag {f}"))),
            };
            descriptors.push(d);
        }
        let nnz = r.u32()?;
        let nnz = r.count(nnz as u64, 12)?;
        let entries = (0..nnz)
            .map(|_| Ok((r.u32()?, r.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        let bow = BowVector::from_normalized(entries)?;
        signatures.push(ImageSignature::new(image_id, surface_id, keypoints, descriptors, bow)?);
    }
    let db = SignatureDb::new(signatures, vocab_size, stored_vocab, config_hash)?;
    for word in 0..vocab_size {
        let count = r.u32()?;
        let count = r.count(count as u64, 12)?;
        let expected = db.index().postings(word);
        if count != expected.len() {
            return Err(r.error(format!("postings of word {word} disagree with the signatures")));
        }
        for &(ordinal, weight) in expected {
            if r.u32()? != ordinal || r.f64()?.to_bits() != weight.to_bits() {
                return Err(r.error(format!("postings of word {word} disagree with the signatures")));
            }
        }
    }
    r.finish()?;
    db.verify_index()?;
    Ok(db)
}

pub fn save(path: &Path, db: &SignatureDb) -> Result<()> {
    write_file(path, &encode(db))
}

pub fn load(path: &Path, vocab_hash: Option<&[u8; 32]>) -> Result<SignatureDb> {
    decode(&read_file(path)?, path, vocab_hash)
}
