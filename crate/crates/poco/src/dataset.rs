//! Dataset trees on disk: `manifest.toml` next to a `frames/` directory of
//! PCF1 files.

use std::path::{Path, PathBuf};

use poco_core::cloud::synth::SynthDataset;
use poco_core::cloud::{DatasetManifest, PointFrame, Split};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{pcf, write_atomic};

pub const MANIFEST: &str = "manifest.toml";

/// A manifest with every frame loaded, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<PointFrame>,
}

impl Dataset {
    pub fn from_synth(ds: SynthDataset) -> Dataset {
        Dataset {
            manifest: ds.manifest,
            frames: ds.frames,
        }
    }

    pub fn frame(&self, frame_id: &str) -> Option<&PointFrame> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Positions in `frames` of the frames in `split`.
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        self.manifest
            .frames()
            .enumerate()
            .filter(|(_, f)| f.frame.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {}", e.message())))?;
    m.validate()?;
    Ok(m)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn save_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    let text = toml::to_string(manifest)
        .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())
}

fn frame_path(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Loads the manifest and all frames, in parallel.
pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let refs: Vec<_> = manifest.frames().collect();
    let frames = refs
        .par_iter()
        .map(|f| {
            let mut frame = pcf::load(
                &frame_path(dir, &f.frame.path),
                &f.frame.frame_id,
                f.scene_id,
            )?;
            // The manifest is authoritative for poses.
            frame.pose_translation = poco_core::cloud::to_f32(f.pose());
            Ok(frame)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, frames })
}

/// Writes every frame and then the manifest.
pub fn save(ds: &Dataset, dir: &Path) -> Result<()> {
    let refs: Vec<_> = ds.manifest.frames().collect();
    if refs.len() != ds.frames.len() {
        return Err(Error::Config(format!(
            "manifest lists {} frames, dataset holds {}",
            refs.len(),
            ds.frames.len()
        )));
    }
    refs.par_iter()
        .zip(ds.frames.par_iter())
        .try_for_each(|(r, f)| pcf::save(f, &frame_path(dir, &r.frame.path)))?;
    save_manifest(&ds.manifest, dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use poco_core::cloud::synth::{synth_generate, SynthConfig};

    fn tiny() -> SynthConfig {
        SynthConfig {
            rooms: 2,
            frames_per_room: 3,
            points_per_frame: 64,
            rays: (16, 12),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_synth(synth_generate(&tiny()).unwrap());
        save(&ds, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.manifest, ds.manifest);
        assert_eq!(back.frames, ds.frames);
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let ok = "[[scenes]]\nscene_id = \"a\"\n[[scenes.frames]]\nframe_id = \"f\"\npath = \"f.pcf\"\npose_translation = [0.0, 0.0, 0.0]\nsplit = \"train\"\n";
        assert_eq!(parse_manifest(ok).unwrap().frame_count(), 1);
        assert!(parse_manifest(&ok.replace("split", "color = 1\nsplit")).is_err());
        assert!(parse_manifest(&ok.replace("\"train\"", "\"holdout\"")).is_err());
    }
}
