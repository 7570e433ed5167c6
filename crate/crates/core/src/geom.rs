//! Rigid-motion-invariant encoding of an oriented point pair.
//!
//! For a point `p` with normal `n` and a neighbor `p_k` with normal `n_k`,
//! with `r = p - p_k`, `r̂ = r / |r|`, `v` the component of `n_k`
//! orthogonal to `r̂` (normalized) and `w = r̂ × v` (normalized):
//!
//! ```text
//! g = [ n·n_k, r·n_k/|r|, r·n/|r|, n·v, n·w, r·n_k, r·(n × n_k), |r| ]
//! ```
//!
//! Every component is a dot product, a triple product or a length, so a
//! rotation plus translation applied to both points leaves `g` unchanged.

use crate::math::{abs, cross3, dot3, norm3, orthogonal_unit, scale3, sub3, Vec3};
use crate::{contract, Result};

pub const GEOM_DIM: usize = 8;

/// Below this length the pair is treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;
/// Below this length `n_k` is treated as parallel to `r̂`.
pub const PARALLEL_EPS: f64 = 1e-9;
/// Allowed deviation of normal lengths from one.
pub const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomVector(pub [f64; GEOM_DIM]);

/// Encoding of neighbor `(p_k, n_k)` relative to the center `(p, n)`.
///
/// Coincident points give `[n·n_k, 0, ..., 0]`. When `n_k` is parallel to
/// the offset, `v` falls back to a fixed axis-priority unit vector
/// orthogonal to `r̂`.
pub fn geom_encode(p: Vec3, n: Vec3, p_k: Vec3, n_k: Vec3) -> Result<GeomVector> {
    for (name, v) in [("n", n), ("n_k", n_k)] {
        let len = norm3(v);
        if !(abs(len - 1.0) <= UNIT_TOL) {
            return Err(contract!("geom_encode: normal {name} has length {len}"));
        }
    }
    Ok(geom_encode_unchecked(p, n, p_k, n_k))
}

/// [`geom_encode`] without the unit-normal check.
pub fn geom_encode_unchecked(p: Vec3, n: Vec3, p_k: Vec3, n_k: Vec3) -> GeomVector {
    let r = sub3(p, p_k);
    let rl = norm3(r);
    let nn = dot3(n, n_k);
    if !(rl >= COINCIDENT_EPS) {
        return GeomVector([nn, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }
    let rh = scale3(r, 1.0 / rl);
    let perp = sub3(n_k, scale3(rh, dot3(n_k, rh)));
    let pl = norm3(perp);
    let v = if pl < PARALLEL_EPS {
        orthogonal_unit(rh)
    } else {
        scale3(perp, 1.0 / pl)
    };
    let w_raw = cross3(rh, v);
    let w = scale3(w_raw, 1.0 / norm3(w_raw));
    GeomVector([
        nn,
        dot3(r, n_k) / rl,
        dot3(r, n) / rl,
        dot3(n, v),
        dot3(n, w),
        dot3(r, n_k),
        dot3(r, cross3(n, n_k)),
        rl,
    ])
}
