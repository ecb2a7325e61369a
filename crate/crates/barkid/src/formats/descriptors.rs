//! `BKD1` external descriptor files.
//!
//! Header: magic, version u32 = 1, dim u32 = 128, record count u64. Each
//! record: image id (u16 length + UTF-8), keypoint index u32, 128 x f32.

use std::path::Path;

use barkid_core::descriptor::{validate_external, ExternalDescriptors, DESCRIPTOR_DIM};

use super::{read_file, write_file, Reader, Writer};
use crate::error::Result;

pub const MAGIC: &[u8; 4] = b"BKD1";
pub const VERSION: u32 = 1;

/// Records are written in `(image_id, index)` order.
pub fn encode(descriptors: &ExternalDescriptors) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u32(VERSION);
    w.u32(DESCRIPTOR_DIM as u32);
    w.u64(descriptors.len() as u64);
    for (image_id, index, d) in descriptors.iter() {
        w.short_str(image_id);
        w.u32(index);
        for &v in d.values() {
            w.f32(v);
        }
    }
    w.0
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ExternalDescriptors> {
    let mut r = Reader::new(bytes, MAGIC, path)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let dim = r.u32()?;
    if dim as usize != DESCRIPTOR_DIM {
        return Err(r.error(format!("descriptor dimension {dim}, expected {DESCRIPTOR_DIM}")));
    }
    let n = r.u64()?;
    let n = r.count(n, 2 + 4 + 4 * DESCRIPTOR_DIM)?;
    let mut out = ExternalDescriptors::new();
    for record in 0..n {
        let image_id = r.short_str()?;
        let index = r.u32()?;
        let mut values = [0.0f32; DESCRIPTOR_DIM];
        for v in values.iter_mut() {
            *v = r.f32()?;
        }
        let d = validate_external(record, values)?;
        if out.get(&image_id, index).is_some() {
            return Err(r.error(format!("duplicate record for `{image_id}` keypoint {index}")));
        }
        out.insert(image_id, index, d);
    }
    r.finish()?;
    Ok(out)
}

pub fn save(path: &Path, descriptors: &ExternalDescriptors) -> Result<()> {
    write_file(path, &encode(descriptors))
}

pub fn load(path: &Path) -> Result<ExternalDescriptors> {
    decode(&read_file(path)?, path)
}
