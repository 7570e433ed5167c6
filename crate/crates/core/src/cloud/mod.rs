//! Point frames and their preparation: voxel downsampling to a fixed
//! budget, radius-based normal estimation, dataset manifests, and the
//! synthetic room generator.

mod manifest;
mod normals;
pub mod synth;
mod voxel;

use alloc::string::String;
use alloc::vec::Vec;

pub use manifest::{CoordFrame, DatasetManifest, FrameRecord, FrameRef, SceneRecord, Split};
pub use normals::{estimate_normals, symmetric_eigen3, NORMAL_RADIUS};
pub use voxel::{voxel_downsample, DEFAULT_POINT_BUDGET};

use crate::math::{norm3, Vec3};
use crate::{Error, Result};

/// One RGB-D capture as a colored point cloud.
///
/// Values are stored in single precision, which is what frame files hold.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    pub frame_id: String,
    pub scene_id: String,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f32; 3]>,
    /// Meters, in the coordinate frame declared by the manifest.
    pub positions: Vec<[f32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
    /// Camera position in world coordinates (meters).
    pub pose_translation: [f32; 3],
}

impl PointFrame {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions_f64(&self) -> Vec<Vec3> {
        self.positions.iter().map(|p| to_f64(*p)).collect()
    }

    pub fn normals_f64(&self) -> Option<Vec<Vec3>> {
        self.normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| to_f64(*n)).collect())
    }

    pub fn pose_f64(&self) -> Vec3 {
        to_f64(self.pose_translation)
    }

    /// Checks array lengths, color range and normal lengths.
    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.colors.len() != n {
            return Err(Error::InvalidInput(alloc::format!(
                "frame {}: {} colors for {} points",
                self.frame_id,
                self.colors.len(),
                n
            )));
        }
        if self
            .colors
            .iter()
            .flatten()
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err(Error::InvalidInput(alloc::format!(
                "frame {}: color outside [0, 1]",
                self.frame_id
            )));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!(
                "frame {}: non-finite position",
                self.frame_id
            )));
        }
        if let Some(ns) = &self.normals {
            if ns.len() != n {
                return Err(Error::InvalidInput(alloc::format!(
                    "frame {}: {} normals for {} points",
                    self.frame_id,
                    ns.len(),
                    n
                )));
            }
            if let Some(bad) = ns.iter().find(|v| (norm3(to_f64(**v)) - 1.0).abs() > 1e-4) {
                return Err(Error::InvalidInput(alloc::format!(
                    "frame {}: normal {:?} is not unit length",
                    self.frame_id,
                    bad
                )));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn to_f64(v: [f32; 3]) -> Vec3 {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

#[inline]
pub fn to_f32(v: Vec3) -> [f32; 3] {
    [v[0] as f32, v[1] as f32, v[2] as f32]
}

/// Axis-aligned bounds of a position list as `(min, max)`.
pub fn bounding_box(positions: &[[f32; 3]]) -> ([f32; 3], [f32; 3]) {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in positions {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}
