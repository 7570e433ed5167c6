use alloc::vec::Vec;

use super::{to_f32, to_f64, PointFrame};
use crate::diag::Diagnostics;
use crate::math::{dot3, orthogonal_unit, sqrt, sub3, Vec3};
use crate::sampling::{knn, radius_neighbors};
use crate::Result;

/// Neighborhood radius for plane fitting, in meters.
pub const NORMAL_RADIUS: f64 = 0.2;

const FALLBACK_K: usize = 8;
const MIN_NEIGHBORS: usize = 3;

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations. Returns eigenvalues ascending with matching unit
/// eigenvectors.
pub fn symmetric_eigen3(m: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut a = m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (libm::fabs(theta) + sqrt(theta * theta + 1.0));
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / sqrt(t * t + 1.0);
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        a[i][i]
            .partial_cmp(&a[j][j])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let vals = [
        a[order[0]][order[0]],
        a[order[1]][order[1]],
        a[order[2]][order[2]],
    ];
    let col = |j: usize| [v[0][j], v[1][j], v[2][j]];
    (vals, [col(order[0]), col(order[1]), col(order[2])])
}

/// Normal of the best-fit plane through `pts`, or `None` when the
/// neighborhood is degenerate (all coincident or collinear); in that case
/// the fallback axis-priority vector orthogonal to the dominant direction
/// is returned in `Err`.
fn plane_normal(pts: &[Vec3]) -> core::result::Result<Vec3, Vec3> {
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in pts {
        let d = sub3(*p, c);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    let (vals, vecs) = symmetric_eigen3(cov);
    if vals[2] <= 1e-18 {
        return Err([0.0, 0.0, 1.0]);
    }
    if vals[1] <= 1e-9 * vals[2] {
        return Err(orthogonal_unit(vecs[2]));
    }
    Ok(vecs[0])
}

/// Estimates a unit normal per point from the plane through its
/// neighbors within `radius`, falling back to the 8 nearest points when
/// fewer than 3 lie in range. Each normal is flipped to face `viewpoint`.
pub fn estimate_normals(
    frame: &PointFrame,
    radius: f64,
    viewpoint: Vec3,
    diag: &mut Diagnostics,
) -> Result<PointFrame> {
    frame.validate()?;
    let pos = frame.positions_f64();
    let mut normals = Vec::with_capacity(pos.len());
    let fallback_k = FALLBACK_K.min(pos.len());
    let mut nb_pts: Vec<Vec3> = Vec::new();
    for p in &pos {
        let mut nb = radius_neighbors(*p, &pos, radius);
        if nb.len() < MIN_NEIGHBORS {
            nb = knn(&[*p], &pos, fallback_k)?
                .indices
                .iter()
                .map(|&i| i as usize)
                .collect();
        }
        nb_pts.clear();
        nb_pts.extend(nb.iter().map(|&i| pos[i]));
        let n = match plane_normal(&nb_pts) {
            Ok(n) => n,
            Err(fallback) => {
                diag.degenerate_normals += 1;
                fallback
            }
        };
        // Orient using the stored single-precision values so the check holds
        // for exactly what gets saved.
        let nf = to_f32(n);
        let pf = to_f64(to_f32(*p));
        let flip = dot3(to_f64(nf), sub3(viewpoint, pf)) < 0.0;
        normals.push(if flip { [-nf[0], -nf[1], -nf[2]] } else { nf });
    }
    let mut out = frame.clone();
    out.normals = Some(normals);
    Ok(out)
}
