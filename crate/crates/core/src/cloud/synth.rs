//! Synthetic indoor rooms rendered as RGB-D point frames.
//!
//! A room is an axis-aligned box with colored walls, colored wall decals
//! (posters, doors, windows) and furniture boxes standing on the floor.
//! A camera walks a smooth trajectory through the free floor area; each
//! stop casts a grid of rays, keeps hits inside the sensor range, and
//! records the points in the camera frame. The raw hits are then voxelized
//! to the point budget and given normals.
//!
//! Hard cases are built in: some rooms are geometric twins of the previous
//! room with a different color scheme, and some walls are plain flat
//! color with no decals.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    estimate_normals, to_f32, voxel_downsample, CoordFrame, DatasetManifest, FrameRecord,
    PointFrame, SceneRecord, Split, NORMAL_RADIUS,
};
use crate::diag::Diagnostics;
use crate::math::{cos, dist2_3, sqrt, Vec3};
use crate::rng::SeededRng;
use crate::Result;

/// How frames are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum SplitPolicy {
    /// Within every room, even trajectory stops train and odd stops test.
    Interleave,
    /// Whole rooms: the last `test` rooms test, the `val` before them
    /// validate, the rest train.
    ByScene { val: usize, test: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SynthConfig {
    pub rooms: usize,
    pub objects_per_room: usize,
    pub points_per_frame: usize,
    pub frames_per_room: usize,
    pub seed: u64,
    /// Camera travel between consecutive stops, meters.
    pub step: f64,
    /// Sensor range, meters.
    pub max_range: f64,
    /// Ray grid (columns, rows) per frame.
    pub rays: (usize, usize),
    /// Probability that a room copies the previous room's geometry.
    pub twin_fraction: f64,
    /// Probability that a wall has no decals.
    pub plain_wall_fraction: f64,
    /// Standard deviation of surface hues around the room's signature
    /// hue, on a 0..6 hue wheel.
    pub hue_spread: f64,
    pub split: SplitPolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rooms: 20,
            objects_per_room: 6,
            points_per_frame: 2000,
            frames_per_room: 10,
            seed: 7,
            step: 0.6,
            max_range: 6.0,
            rays: (80, 60),
            twin_fraction: 0.25,
            plain_wall_fraction: 0.25,
            hue_spread: 0.35,
            split: SplitPolicy::Interleave,
        }
    }
}

const HFOV: f64 = 70.0 * crate::math::PI / 180.0;
const VFOV: f64 = 55.0 * crate::math::PI / 180.0;
const PITCH: f64 = -0.25;
const MARGIN: f64 = 0.8;
const COLOR_NOISE: f64 = 0.02;
const DEPTH_NOISE: f64 = 0.003;

#[derive(Debug, Clone)]
struct Decal {
    /// Index into the six room faces (see [`Room::face_color`]).
    face: usize,
    /// Rectangle in face coordinates (u0, v0, u1, v1).
    rect: [f64; 4],
    color: Vec3,
}

#[derive(Debug, Clone)]
struct Furniture {
    min: Vec3,
    max: Vec3,
    color: Vec3,
    top_color: Vec3,
}

#[derive(Debug, Clone)]
pub struct CameraPose {
    pub position: Vec3,
    pub yaw: f64,
}

/// One generated room.
#[derive(Debug, Clone)]
pub struct Room {
    size: Vec3,
    /// Floor, ceiling, then walls at x = 0, x = W, y = 0, y = D.
    face_colors: [Vec3; 6],
    decals: Vec<Decal>,
    furniture: Vec<Furniture>,
    pub trajectory: Vec<CameraPose>,
}

/// Color center every surface of a room is drawn around.
#[derive(Debug, Clone, Copy)]
struct Signature {
    hue: f64,
    saturation: f64,
    value: f64,
}

/// Golden-ratio stride on the 0..6 hue wheel so consecutive rooms get
/// well separated signature hues.
const HUE_STRIDE: f64 = 6.0 * 0.618_033_988_749_895;

impl Signature {
    fn new(rng: &mut SeededRng, index: usize, hue_offset: f64) -> Signature {
        let h = hue_offset + index as f64 * HUE_STRIDE;
        Signature {
            hue: h - 6.0 * libm::floor(h / 6.0),
            saturation: rng.range(0.45, 0.8),
            value: rng.range(0.45, 0.85),
        }
    }

    /// HSV sample around the signature, converted to RGB.
    fn color(&self, rng: &mut SeededRng, spread: f64) -> Vec3 {
        let h = self.hue + spread * rng.normal();
        let h = (h - 6.0 * libm::floor(h / 6.0)).min(5.999_999);
        let s = (self.saturation + rng.range(-0.1, 0.1)).clamp(0.0, 1.0);
        let v = (self.value + rng.range(-0.1, 0.1)).clamp(0.0, 1.0);
        let i = libm::floor(h) as i32;
        let f = h - i as f64;
        let p = v * (1.0 - s);
        let q = v * (1.0 - s * f);
        let t = v * (1.0 - s * (1.0 - f));
        match i {
            0 => [v, t, p],
            1 => [q, v, p],
            2 => [p, v, t],
            3 => [p, q, v],
            4 => [t, p, v],
            _ => [v, p, q],
        }
    }
}

impl Room {
    fn generate(
        cfg: &SynthConfig,
        rng: &mut SeededRng,
        sig: Signature,
        twin_of: Option<&Room>,
    ) -> Room {
        let mut room = match twin_of {
            Some(base) => base.clone(),
            None => Self::layout(cfg, rng),
        };
        let spread = cfg.hue_spread;
        room.face_colors = [
            sig.color(rng, spread),
            [0.9, 0.9, 0.88],
            sig.color(rng, spread),
            sig.color(rng, spread),
            sig.color(rng, spread),
            sig.color(rng, spread),
        ];
        for d in &mut room.decals {
            d.color = sig.color(rng, spread);
        }
        for f in &mut room.furniture {
            f.color = sig.color(rng, spread);
            f.top_color = sig.color(rng, spread);
        }
        room
    }

    fn layout(cfg: &SynthConfig, rng: &mut SeededRng) -> Room {
        let size = [
            rng.range(5.0, 9.0),
            rng.range(5.0, 9.0),
            rng.range(2.6, 3.2),
        ];
        let mut decals = Vec::new();
        for face in 2..6 {
            if rng.uniform() < cfg.plain_wall_fraction {
                continue;
            }
            let wall_len = if face < 4 { size[1] } else { size[0] };
            for _ in 0..1 + rng.below(3) {
                let w = rng.range(0.6, 1.8).min(wall_len - 0.4);
                let h = rng.range(0.5, 1.6);
                let u0 = rng.range(0.2, wall_len - w - 0.2);
                let v0 = rng.range(0.3, size[2] - h - 0.2);
                decals.push(Decal {
                    face,
                    rect: [u0, v0, u0 + w, v0 + h],
                    color: [0.0; 3],
                });
            }
        }
        let mut furniture = Vec::new();
        for _ in 0..cfg.objects_per_room {
            let w = rng.range(0.5, 1.8);
            let d = rng.range(0.4, 1.0);
            let h = rng.range(0.4, 2.0);
            // Against a random wall so the middle stays walkable.
            let (min, max) = match rng.below(4) {
                0 => {
                    let y = rng.range(0.0, size[1] - w);
                    ([0.0, y, 0.0], [d, y + w, h])
                }
                1 => {
                    let y = rng.range(0.0, size[1] - w);
                    ([size[0] - d, y, 0.0], [size[0], y + w, h])
                }
                2 => {
                    let x = rng.range(0.0, size[0] - w);
                    ([x, 0.0, 0.0], [x + w, d, h])
                }
                _ => {
                    let x = rng.range(0.0, size[0] - w);
                    ([x, size[1] - d, 0.0], [x + w, size[1], h])
                }
            };
            furniture.push(Furniture {
                min,
                max,
                color: [0.0; 3],
                top_color: [0.0; 3],
            });
        }
        let mut room = Room {
            size,
            face_colors: [[0.0; 3]; 6],
            decals,
            furniture,
            trajectory: Vec::new(),
        };
        room.trajectory = room.walk(cfg, rng);
        room
    }

    fn free(&self, p: Vec3) -> bool {
        if p[0] < MARGIN
            || p[1] < MARGIN
            || p[0] > self.size[0] - MARGIN
            || p[1] > self.size[1] - MARGIN
        {
            return false;
        }
        !self.furniture.iter().any(|f| {
            p[0] > f.min[0] - 0.4
                && p[0] < f.max[0] + 0.4
                && p[1] > f.min[1] - 0.4
                && p[1] < f.max[1] + 0.4
        })
    }

    fn walk(&self, cfg: &SynthConfig, rng: &mut SeededRng) -> Vec<CameraPose> {
        let height = rng.range(1.3, 1.6);
        let center = [self.size[0] / 2.0, self.size[1] / 2.0, height];
        let mut pos = center;
        for _ in 0..200 {
            let cand = [
                rng.range(MARGIN, self.size[0] - MARGIN),
                rng.range(MARGIN, self.size[1] - MARGIN),
                height,
            ];
            if self.free(cand) {
                pos = cand;
                break;
            }
        }
        let mut yaw = rng.range(-crate::math::PI, crate::math::PI);
        let mut poses = vec![CameraPose { position: pos, yaw }];
        while poses.len() < cfg.frames_per_room {
            let mut moved = false;
            for attempt in 0..24 {
                let turn = if attempt < 12 {
                    0.35 * rng.normal()
                } else {
                    rng.range(-crate::math::PI, crate::math::PI)
                };
                let ny = yaw + turn;
                let cand = [
                    pos[0] + cfg.step * cos(ny),
                    pos[1] + cfg.step * libm::sin(ny),
                    height,
                ];
                if self.free(cand) {
                    pos = cand;
                    yaw = ny;
                    moved = true;
                    break;
                }
            }
            if !moved {
                // Boxed in: turn toward the center and step regardless of
                // furniture clearance, staying inside the walls.
                yaw = libm::atan2(center[1] - pos[1], center[0] - pos[0]);
                pos = [
                    pos[0] + cfg.step * cos(yaw),
                    pos[1] + cfg.step * libm::sin(yaw),
                    height,
                ];
            }
            poses.push(CameraPose { position: pos, yaw });
        }
        poses
    }

    fn face_color(&self, face: usize, hit: Vec3) -> Vec3 {
        let (u, v) = match face {
            2 | 3 => (hit[1], hit[2]),
            4 | 5 => (hit[0], hit[2]),
            _ => (hit[0], hit[1]),
        };
        for d in self.decals.iter().filter(|d| d.face == face) {
            if u >= d.rect[0] && u <= d.rect[2] && v >= d.rect[1] && v <= d.rect[3] {
                return d.color;
            }
        }
        if face == 0 {
            // Tiled floor: faint checker so the floor is not a flat patch.
            let parity = (libm::floor(hit[0] / 0.6) as i64 + libm::floor(hit[1] / 0.6) as i64) & 1;
            let c = self.face_colors[0];
            let k = if parity == 0 { 1.0 } else { 0.85 };
            return [c[0] * k, c[1] * k, c[2] * k];
        }
        self.face_colors[face]
    }

    /// First surface hit along a ray: distance and color.
    fn cast(&self, o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
        // Exit through the room shell.
        let mut best_t = f64::INFINITY;
        let mut best_face = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-12 {
                continue;
            }
            let (t, face) = if d[a] > 0.0 {
                ((self.size[a] - o[a]) / d[a], [3, 5, 1][a])
            } else {
                (-o[a] / d[a], [2, 4, 0][a])
            };
            if t < best_t {
                best_t = t;
                best_face = face;
            }
        }
        if !best_t.is_finite() {
            return None;
        }
        let mut color = None;
        for f in &self.furniture {
            let mut t0 = 0.0f64;
            let mut t1 = best_t;
            let mut entry_axis = usize::MAX;
            let mut hit = true;
            for a in 0..3 {
                if d[a].abs() < 1e-12 {
                    if o[a] < f.min[a] || o[a] > f.max[a] {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let ta = (f.min[a] - o[a]) / d[a];
                let tb = (f.max[a] - o[a]) / d[a];
                let (near, far) = if ta < tb { (ta, tb) } else { (tb, ta) };
                if near > t0 {
                    t0 = near;
                    entry_axis = a;
                }
                t1 = t1.min(far);
                if t0 > t1 {
                    hit = false;
                    break;
                }
            }
            if hit && entry_axis != usize::MAX && t0 < best_t {
                best_t = t0;
                color = Some(if entry_axis == 2 {
                    f.top_color
                } else {
                    f.color
                });
            }
        }
        let c = match color {
            Some(c) => c,
            None => {
                let hit = [
                    o[0] + best_t * d[0],
                    o[1] + best_t * d[1],
                    o[2] + best_t * d[2],
                ];
                self.face_color(best_face, hit)
            }
        };
        Some((best_t, c))
    }

    /// Raw (not downsampled) capture from one pose, in camera coordinates:
    /// x forward, y left, z up.
    pub fn capture(
        &self,
        pose: &CameraPose,
        cfg: &SynthConfig,
        rng: &mut SeededRng,
    ) -> (Vec<[f32; 3]>, Vec<[f32; 3]>) {
        let (cy, sy) = (cos(pose.yaw), libm::sin(pose.yaw));
        let (cp, sp) = (cos(PITCH), libm::sin(PITCH));
        let (cols, rows) = cfg.rays;
        let tx = libm::tan(HFOV / 2.0);
        let tz = libm::tan(VFOV / 2.0);
        let mut positions = Vec::with_capacity(cols * rows);
        let mut colors = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                let dc = [
                    1.0,
                    tx * (1.0 - 2.0 * (i as f64 + 0.5) / cols as f64),
                    tz * (1.0 - 2.0 * (j as f64 + 0.5) / rows as f64),
                ];
                let l = sqrt(dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]);
                let dc = [dc[0] / l, dc[1] / l, dc[2] / l];
                // pitch about the camera y axis, then yaw about world z
                let dp = [cp * dc[0] - sp * dc[2], dc[1], sp * dc[0] + cp * dc[2]];
                let dw = [cy * dp[0] - sy * dp[1], sy * dp[0] + cy * dp[1], dp[2]];
                let Some((t, c)) = self.cast(pose.position, dw) else {
                    continue;
                };
                if t > cfg.max_range {
                    continue;
                }
                let t = t * (1.0 + DEPTH_NOISE * rng.normal());
                let p = [t * dc[0], t * dc[1], t * dc[2]];
                let col = [
                    (c[0] + COLOR_NOISE * rng.normal()).clamp(0.0, 1.0),
                    (c[1] + COLOR_NOISE * rng.normal()).clamp(0.0, 1.0),
                    (c[2] + COLOR_NOISE * rng.normal()).clamp(0.0, 1.0),
                ];
                positions.push(to_f32(p));
                colors.push(to_f32(col));
            }
        }
        (positions, colors)
    }
}

/// Generated frames plus their manifest. Frame `i` of `frames` belongs to
/// the i-th record of `manifest.frames()`.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<PointFrame>,
    pub diagnostics: Diagnostics,
}

pub fn frame_id(room: usize, frame: usize) -> String {
    format!("r{room:03}_f{frame:03}")
}

pub fn scene_id(room: usize) -> String {
    format!("room_{room:03}")
}

fn split_for(cfg: &SynthConfig, room: usize, frame: usize) -> Split {
    match cfg.split {
        SplitPolicy::Interleave => {
            if frame.is_multiple_of(2) {
                Split::Train
            } else {
                Split::Test
            }
        }
        SplitPolicy::ByScene { val, test } => {
            let from_end = cfg.rooms - room;
            if from_end <= test {
                Split::Test
            } else if from_end <= test + val {
                Split::Val
            } else {
                Split::Train
            }
        }
    }
}

/// Generates the rooms, renders and preprocesses every frame.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.rooms == 0 || cfg.frames_per_room == 0 || cfg.points_per_frame == 0 {
        return Err(crate::contract!(
            "synthetic dataset needs at least one room, frame and point"
        ));
    }
    let mut diag = Diagnostics::default();
    let mut scenes = Vec::with_capacity(cfg.rooms);
    let mut frames = Vec::with_capacity(cfg.rooms * cfg.frames_per_room);
    let mut prev: Option<Room> = None;
    let hue_offset = SeededRng::derived(cfg.seed, 999).uniform() * 6.0;
    for r in 0..cfg.rooms {
        let mut rng = SeededRng::derived(cfg.seed, 1000 + r as u64);
        let twin = prev.is_some() && rng.uniform() < cfg.twin_fraction;
        let sig = Signature::new(&mut rng, r, hue_offset);
        let room = Room::generate(cfg, &mut rng, sig, if twin { prev.as_ref() } else { None });
        let mut records = Vec::with_capacity(cfg.frames_per_room);
        for (f, pose) in room.trajectory.iter().enumerate() {
            let (positions, colors) = room.capture(pose, cfg, &mut rng);
            let raw = PointFrame {
                frame_id: frame_id(r, f),
                scene_id: scene_id(r),
                colors,
                positions,
                normals: None,
                pose_translation: to_f32(pose.position),
            };
            let seed = cfg.seed ^ ((r as u64) << 20) ^ f as u64;
            let reduced = voxel_downsample(&raw, cfg.points_per_frame, seed)?;
            let with_normals = estimate_normals(&reduced, NORMAL_RADIUS, [0.0; 3], &mut diag)?;
            records.push(FrameRecord {
                frame_id: frame_id(r, f),
                path: format!("frames/{}.pcf", frame_id(r, f)),
                pose_translation: crate::cloud::to_f64(to_f32(pose.position)),
                split: split_for(cfg, r, f),
            });
            frames.push(with_normals);
        }
        scenes.push(SceneRecord {
            scene_id: scene_id(r),
            frames: records,
        });
        prev = Some(room);
    }
    Ok(SynthDataset {
        manifest: DatasetManifest {
            coordinates: CoordFrame::Sensor,
            scenes,
        },
        frames,
        diagnostics: diag,
    })
}

/// Camera distance between two frames of the same scene.
pub fn camera_distance(a: Vec3, b: Vec3) -> f64 {
    sqrt(dist2_3(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            rooms: 3,
            frames_per_room: 4,
            points_per_frame: 300,
            rays: (32, 24),
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn frames_have_budget_and_normals() {
        let d = synth_generate(&small()).unwrap();
        assert_eq!(d.frames.len(), 12);
        for f in &d.frames {
            assert_eq!(f.len(), 300);
            f.validate().unwrap();
            assert!(f.normals.is_some());
        }
    }

    #[test]
    fn consecutive_stops_are_close() {
        let d = synth_generate(&small()).unwrap();
        for s in &d.manifest.scenes {
            for w in s.frames.windows(2) {
                let dist = camera_distance(w[0].pose_translation, w[1].pose_translation);
                assert!(dist > 0.0 && dist < 2.0);
            }
        }
    }

    #[test]
    fn scene_split_policy() {
        let cfg = SynthConfig {
            split: SplitPolicy::ByScene { val: 1, test: 1 },
            ..small()
        };
        assert_eq!(split_for(&cfg, 0, 0), Split::Train);
        assert_eq!(split_for(&cfg, 1, 3), Split::Val);
        assert_eq!(split_for(&cfg, 2, 1), Split::Test);
    }
}
