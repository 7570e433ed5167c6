//! `f64` helpers that work without `std`.

pub use libm::{cos, exp, fabs as abs, log, log1p, sqrt};

pub const PI: f64 = core::f64::consts::PI;

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    sqrt(dot3(a, a))
}

#[inline]
pub fn dist2_3(a: Vec3, b: Vec3) -> f64 {
    let d = sub3(a, b);
    dot3(d, d)
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + log1p(exp(-x))
    } else {
        log1p(exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Unit vector orthogonal to `dir`, built from the first coordinate axis
/// (x, then y, then z) that is least aligned with it.
pub fn orthogonal_unit(dir: Vec3) -> Vec3 {
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut best = 0;
    let mut best_dot = f64::INFINITY;
    for (i, axis) in axes.iter().enumerate() {
        let d = abs(dot3(*axis, dir));
        if d < best_dot - 1e-12 {
            best_dot = d;
            best = i;
        }
    }
    let n = norm3(dir);
    if n < 1e-300 {
        return axes[best];
    }
    let u = scale3(dir, 1.0 / n);
    let a = axes[best];
    let v = sub3(a, scale3(u, dot3(a, u)));
    scale3(v, 1.0 / norm3(v))
}
