//! Farthest point sampling and exact k-nearest-neighbor search.
//!
//! Both are exhaustive and deterministic: every distance tie is broken
//! by the lower index.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::math::{dist2_3, sqrt, Vec3};
use crate::{contract, Result};

/// Indices chosen by [`fps`], in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleResult {
    pub indices: Vec<usize>,
}

impl SampleResult {
    pub fn count(&self) -> usize {
        self.indices.len()
    }
}

/// Index of the point nearest the centroid (lowest index on ties).
pub fn centroid_nearest(positions: &[Vec3]) -> usize {
    let n = positions.len() as f64;
    let mut c = [0.0; 3];
    for p in positions {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let c = [c[0] / n, c[1] / n, c[2] / n];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        let d = dist2_3(*p, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Greedy farthest point sampling of `m` out of `positions.len()` points.
///
/// Starts from the point nearest the centroid; each later pick maximizes
/// its distance to the already-selected set. `O(n * m)`.
pub fn fps(positions: &[Vec3], m: usize) -> Result<SampleResult> {
    let n = positions.len();
    if m == 0 || m > n {
        return Err(contract!("fps needs 1 <= m <= n, got m = {m}, n = {n}"));
    }
    let mut indices = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut chosen = vec![false; n];
    let mut cur = centroid_nearest(positions);
    for _ in 0..m {
        indices.push(cur);
        chosen[cur] = true;
        let pc = positions[cur];
        let mut next = usize::MAX;
        let mut next_d = f64::NEG_INFINITY;
        for (i, p) in positions.iter().enumerate() {
            let d = dist2_3(*p, pc);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !chosen[i] && min_d[i] > next_d {
                next_d = min_d[i];
                next = i;
            }
        }
        cur = next;
    }
    Ok(SampleResult { indices })
}

/// `k` nearest references for each query, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub k: usize,
    /// `queries * k` reference indices, ascending by distance per query.
    pub indices: Vec<u32>,
    /// Euclidean distances matching `indices`.
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn of(&self, q: usize) -> &[u32] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    pub fn distances_of(&self, q: usize) -> &[f64] {
        &self.distances[q * self.k..(q + 1) * self.k]
    }
}

fn by_dist_then_index(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Exact `k`-nearest neighbors by exhaustive scan.
pub fn knn(queries: &[Vec3], references: &[Vec3], k: usize) -> Result<NeighborList> {
    let n = references.len();
    if k == 0 || k > n {
        return Err(contract!("knn needs 1 <= k <= n, got k = {k}, n = {n}"));
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(n);
    for q in queries {
        scratch.clear();
        scratch.extend(
            references
                .iter()
                .enumerate()
                .map(|(i, r)| (dist2_3(*q, *r), i as u32)),
        );
        if k < n {
            scratch.select_nth_unstable_by(k - 1, by_dist_then_index);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(by_dist_then_index);
        for &(d, i) in head.iter() {
            indices.push(i);
            distances.push(sqrt(d));
        }
    }
    Ok(NeighborList {
        k,
        indices,
        distances,
    })
}

/// All references within `radius` of `query` (inclusive), ascending by
/// distance then index.
pub fn radius_neighbors(query: Vec3, references: &[Vec3], radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, u32)> = references
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let d = dist2_3(query, *r);
            (d <= r2).then_some((d, i as u32))
        })
        .collect();
    hits.sort_unstable_by(by_dist_then_index);
    hits.into_iter().map(|(_, i)| i as usize).collect()
}
