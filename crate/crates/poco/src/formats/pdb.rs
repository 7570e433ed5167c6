//! PDB1 descriptor indexes.
//!
//! `"PDB1"`, `u32` entry count, `u32` descriptor dimension, then per entry:
//! `u16`-prefixed frame id, `u16`-prefixed scene id, `f32 x3` camera
//! translation, `f32 x dim` unit descriptor.

use std::path::Path;

use poco_core::retrieve::{DescriptorIndex, IndexEntry};

use super::{put_f32, put_string16, put_u32, put_vec3, read_file, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};

const MAGIC: &[u8; 4] = b"PDB1";

pub fn encode(index: &DescriptorIndex) -> std::result::Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(
        &mut out,
        u32::try_from(index.len()).map_err(|_| "too many entries")?,
    );
    put_u32(
        &mut out,
        u32::try_from(index.dim()).map_err(|_| "dimension too large")?,
    );
    for e in index.entries() {
        put_string16(&mut out, &e.frame_id)?;
        put_string16(&mut out, &e.scene_id)?;
        put_vec3(&mut out, e.pose);
        for &x in &e.descriptor {
            put_f32(&mut out, x);
        }
    }
    Ok(out)
}

/// Parses and validates (unit length, unique ids) an index file.
pub fn decode(bytes: &[u8]) -> std::result::Result<DescriptorIndex, FormatError> {
    let mut r = Reader::new(bytes, "PDB1");
    r.magic(MAGIC)?;
    let count = r.u32("entry count")? as usize;
    let dim_at = r.offset();
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(r.error(dim_at, "dimension is zero"));
    }
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.offset();
        let frame_id = r.string16("frame id")?;
        let scene_id = r.string16("scene id")?;
        let pose = r.vec3("pose")?;
        let mut descriptor = Vec::with_capacity(dim.min(1 << 16));
        for _ in 0..dim {
            descriptor.push(r.f32("descriptor")?);
        }
        if descriptor.iter().chain(&pose).any(|x| !x.is_finite()) {
            return Err(r.error(at, format!("entry {frame_id} has non-finite values")));
        }
        entries.push(IndexEntry {
            frame_id,
            scene_id,
            pose,
            descriptor,
        });
    }
    r.finish()?;
    DescriptorIndex::new(dim, entries).map_err(|e| r.error(12, e.to_string()))
}

pub fn save(index: &DescriptorIndex, path: &Path) -> Result<()> {
    let bytes = encode(index).map_err(|m| {
        Error::format(
            path,
            FormatError {
                format: "PDB1",
                offset: 0,
                message: m,
            },
        )
    })?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<DescriptorIndex> {
    decode(&read_file(path)?).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> DescriptorIndex {
        let s = 0.5f64.sqrt();
        DescriptorIndex::new(
            2,
            vec![
                IndexEntry::new("a", "s0", [1.0, 2.0, 3.0], &[1.0, 0.0]),
                IndexEntry::new("b", "s1", [-1.5, 0.0, 0.25], &[s, -s]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let idx = index();
        let bytes = encode(&idx).unwrap();
        assert_eq!(bytes.len(), 12 + 2 * (2 + 1 + 2 + 2 + 12 + 8));
        let back = decode(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn errors_carry_offsets() {
        let bytes = encode(&index()).unwrap();
        assert_eq!(decode(&bytes[..20]).unwrap_err().offset, 19);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err().offset, 0);
        // Scale one descriptor so it is no longer unit length.
        let mut skew = bytes.clone();
        let at = 12 + 2 + 1 + 2 + 2 + 12;
        skew[at..at + 4].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(decode(&skew).unwrap_err().message.contains("norm"));
    }
}
