use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::math::Vec3;
use crate::{contract, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Coordinate frame the point positions of a dataset are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CoordFrame {
    /// Relative to the capturing camera; the camera sits at the origin.
    #[default]
    Sensor,
    /// Shared world frame; the camera sits at `pose_translation`.
    World,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FrameRecord {
    pub frame_id: String,
    /// Frame file, relative to the manifest's directory.
    pub path: String,
    pub pose_translation: [f64; 3],
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SceneRecord {
    pub scene_id: String,
    pub frames: Vec<FrameRecord>,
}

/// Scenes, their frames, poses and split assignment.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct DatasetManifest {
    #[cfg_attr(feature = "serde", serde(default))]
    pub coordinates: CoordFrame,
    pub scenes: Vec<SceneRecord>,
}

/// A frame together with the scene that owns it.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub scene_id: &'a str,
    pub frame: &'a FrameRecord,
}

impl FrameRef<'_> {
    pub fn pose(&self) -> Vec3 {
        self.frame.pose_translation
    }
}

impl DatasetManifest {
    /// Every frame in scene order, then frame order.
    pub fn frames(&self) -> impl Iterator<Item = FrameRef<'_>> {
        self.scenes.iter().flat_map(|s| {
            s.frames.iter().map(move |f| FrameRef {
                scene_id: &s.scene_id,
                frame: f,
            })
        })
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = FrameRef<'_>> {
        self.frames().filter(move |f| f.frame.split == split)
    }

    pub fn frame_count(&self) -> usize {
        self.scenes.iter().map(|s| s.frames.len()).sum()
    }

    pub fn find(&self, frame_id: &str) -> Option<FrameRef<'_>> {
        self.frames().find(|f| f.frame.frame_id == frame_id)
    }

    /// Frame ids must be unique and scene ids non-empty and unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut scenes = BTreeSet::new();
        for s in &self.scenes {
            if s.scene_id.is_empty() || !scenes.insert(s.scene_id.as_str()) {
                return Err(contract!("scene id {:?} is empty or repeated", s.scene_id));
            }
            for f in &s.frames {
                if !seen.insert(f.frame_id.as_str()) {
                    return Err(contract!(
                        "frame id {:?} appears more than once",
                        f.frame_id
                    ));
                }
                if f.pose_translation.iter().any(|x| !x.is_finite()) {
                    return Err(contract!("frame {:?} has a non-finite pose", f.frame_id));
                }
            }
        }
        Ok(())
    }
}
