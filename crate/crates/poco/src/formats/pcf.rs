//! PCF1 point-frame files.
//!
//! `"PCF1"`, `u8` flags (bit 0: normals present), `u32` point count,
//! `f32 x3` camera translation, then one record per point:
//! `r g b x y z` and, with normals, `nx ny nz`, all `f32`.

use std::path::Path;

use poco_core::cloud::PointFrame;

use super::{put_u32, put_vec3, read_file, write_atomic, Reader};
use crate::error::{Error, FormatError, Result};

const MAGIC: &[u8; 4] = b"PCF1";
const HAS_NORMALS: u8 = 1;

pub fn encode(frame: &PointFrame) -> Vec<u8> {
    let n = frame.len();
    let stride = if frame.normals.is_some() { 36 } else { 24 };
    let mut out = Vec::with_capacity(21 + n * stride);
    out.extend_from_slice(MAGIC);
    out.push(if frame.normals.is_some() {
        HAS_NORMALS
    } else {
        0
    });
    put_u32(&mut out, u32::try_from(n).expect("point count fits u32"));
    put_vec3(&mut out, frame.pose_translation);
    for i in 0..n {
        put_vec3(&mut out, frame.colors[i]);
        put_vec3(&mut out, frame.positions[i]);
        if let Some(ns) = &frame.normals {
            put_vec3(&mut out, ns[i]);
        }
    }
    out
}

/// Decodes a frame file. Ids are not part of the file and come from the
/// caller (normally the manifest).
pub fn decode(
    bytes: &[u8],
    frame_id: &str,
    scene_id: &str,
) -> std::result::Result<PointFrame, FormatError> {
    let mut r = Reader::new(bytes, "PCF1");
    r.magic(MAGIC)?;
    let flags_at = r.offset();
    let flags = r.u8("flags")?;
    if flags & !HAS_NORMALS != 0 {
        return Err(r.error(flags_at, format!("unknown flag bits {flags:#04x}")));
    }
    let n = r.u32("point count")? as usize;
    let pose_translation = r.vec3("pose")?;
    let with_normals = flags & HAS_NORMALS != 0;
    let stride = if with_normals { 36 } else { 24 };
    if r.remaining() != n * stride {
        let what = if r.remaining() < n * stride {
            "truncated point records"
        } else {
            "trailing bytes after point records"
        };
        return Err(r.error(
            r.offset(),
            format!(
                "{what}: {n} points need {} bytes, {} present",
                n * stride,
                r.remaining()
            ),
        ));
    }
    let mut colors = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut normals = with_normals.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        colors.push(r.vec3("color")?);
        positions.push(r.vec3("position")?);
        if let Some(ns) = normals.as_mut() {
            ns.push(r.vec3("normal")?);
        }
    }
    r.finish()?;
    Ok(PointFrame {
        frame_id: frame_id.into(),
        scene_id: scene_id.into(),
        colors,
        positions,
        normals,
        pose_translation,
    })
}

pub fn save(frame: &PointFrame, path: &Path) -> Result<()> {
    write_atomic(path, &encode(frame))
}

/// Loads and validates a frame file.
pub fn load(path: &Path, frame_id: &str, scene_id: &str) -> Result<PointFrame> {
    let bytes = read_file(path)?;
    let frame = decode(&bytes, frame_id, scene_id).map_err(|e| Error::format(path, e))?;
    frame.validate()?;
    Ok(frame)
}
