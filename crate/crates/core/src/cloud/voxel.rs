use alloc::vec::Vec;

use super::{to_f32, to_f64, PointFrame};
use crate::math::{norm3, scale3};
use crate::rng::SeededRng;
use crate::{Error, Result};

pub const DEFAULT_POINT_BUDGET: usize = 2000;

const SEARCH_ITERS: usize = 60;

/// Sorted point order and group boundaries for one voxel edge length.
struct Grid {
    order: Vec<usize>,
    /// Start offsets into `order`, one per occupied voxel, plus a sentinel.
    starts: Vec<usize>,
}

impl Grid {
    fn build(positions: &[[f64; 3]], origin: [f64; 3], edge: f64) -> Grid {
        let keys: Vec<[i64; 3]> = positions
            .iter()
            .map(|p| {
                let mut k = [0i64; 3];
                for a in 0..3 {
                    k[a] = libm::floor((p[a] - origin[a]) / edge) as i64;
                }
                k
            })
            .collect();
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
        let mut starts = Vec::new();
        for (i, &idx) in order.iter().enumerate() {
            if i == 0 || keys[idx] != keys[order[i - 1]] {
                starts.push(i);
            }
        }
        starts.push(order.len());
        Grid { order, starts }
    }

    fn count(&self) -> usize {
        self.starts.len() - 1
    }
}

/// Reduces (or pads) a frame to exactly `target_n` points.
///
/// The voxel edge is binary-searched so that the number of occupied voxels
/// is the smallest count reached that is still `>= target_n`; each voxel
/// becomes one point at its centroid with the mean color (and the
/// renormalized mean normal, when normals exist). A seeded draw without
/// replacement then trims to `target_n`, keeping voxel order. Frames with
/// fewer than `target_n` distinct voxels are padded by seeded resampling
/// with replacement.
pub fn voxel_downsample(frame: &PointFrame, target_n: usize, seed: u64) -> Result<PointFrame> {
    if frame.is_empty() {
        return Err(Error::InvalidInput(alloc::format!(
            "frame {} has no points",
            frame.frame_id
        )));
    }
    if target_n == 0 {
        return Err(crate::contract!("voxel_downsample target must be positive"));
    }
    let pos = frame.positions_f64();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &pos {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);

    // Smallest edge: below the minimum float spacing of the data, so every
    // distinct position gets its own voxel.
    let fine_edge = (extent * 1e-9).max(1e-12);
    let fine = Grid::build(&pos, lo, fine_edge);
    let grid = if fine.count() <= target_n {
        fine
    } else {
        let mut small = fine_edge;
        let mut large = extent * 2.0 + 1.0;
        let mut best = fine;
        for _ in 0..SEARCH_ITERS {
            let mid = 0.5 * (small + large);
            let g = Grid::build(&pos, lo, mid);
            let c = g.count();
            if c >= target_n {
                small = mid;
                if c < best.count() {
                    best = g;
                }
                if c == target_n {
                    break;
                }
            } else {
                large = mid;
            }
        }
        best
    };

    let colors_in = &frame.colors;
    let normals_in = frame.normals_f64();
    let mut colors = Vec::with_capacity(grid.count());
    let mut positions = Vec::with_capacity(grid.count());
    let mut normals = normals_in
        .as_ref()
        .map(|_| Vec::with_capacity(grid.count()));
    for v in 0..grid.count() {
        let members = &grid.order[grid.starts[v]..grid.starts[v + 1]];
        let inv = 1.0 / members.len() as f64;
        let mut pc = [0.0; 3];
        let mut cc = [0.0; 3];
        let mut nc = [0.0; 3];
        for &i in members {
            let c = to_f64(colors_in[i]);
            for a in 0..3 {
                pc[a] += pos[i][a];
                cc[a] += c[a];
            }
            if let Some(ns) = &normals_in {
                for a in 0..3 {
                    nc[a] += ns[i][a];
                }
            }
        }
        positions.push(to_f32(scale3(pc, inv)));
        let mut col = to_f32(scale3(cc, inv));
        for c in &mut col {
            *c = c.clamp(0.0, 1.0);
        }
        colors.push(col);
        if let (Some(out), Some(ns)) = (normals.as_mut(), &normals_in) {
            let len = norm3(nc);
            let n = if len > 1e-12 {
                scale3(nc, 1.0 / len)
            } else {
                ns[members[0]]
            };
            out.push(to_f32(n));
        }
    }

    let mut rng = SeededRng::derived(seed, 0x766f_78);
    let count = positions.len();
    let pick: Vec<usize> = if count >= target_n {
        let mut idx = rng.sample_indices(count, target_n);
        idx.sort_unstable();
        idx
    } else {
        let mut idx: Vec<usize> = (0..count).collect();
        idx.extend((count..target_n).map(|_| rng.below(count)));
        idx
    };

    Ok(PointFrame {
        frame_id: frame.frame_id.clone(),
        scene_id: frame.scene_id.clone(),
        colors: pick.iter().map(|&i| colors[i]).collect(),
        positions: pick.iter().map(|&i| positions[i]).collect(),
        normals: normals.map(|ns| pick.iter().map(|&i| ns[i]).collect()),
        pose_translation: frame.pose_translation,
    })
}
