//! Descriptor index, cosine-ranked queries, database selection and
//! Recall@K.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::cloud::{DatasetManifest, FrameRef, Split};
use crate::diag::Diagnostics;
use crate::math::{dist2_3, sqrt, Vec3};
use crate::{contract, Result};

pub const DEFAULT_DB_SPACING: f64 = 3.0;
pub const DEFAULT_MATCH_RADIUS: f64 = 3.0;

/// Tolerance on the unit length of stored descriptors.
pub const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub frame_id: String,
    pub scene_id: String,
    pub pose: [f32; 3],
    pub descriptor: Vec<f32>,
}

impl IndexEntry {
    pub fn new(
        frame_id: impl Into<String>,
        scene_id: impl Into<String>,
        pose: Vec3,
        descriptor: &[f64],
    ) -> Self {
        IndexEntry {
            frame_id: frame_id.into(),
            scene_id: scene_id.into(),
            pose: crate::cloud::to_f32(pose),
            descriptor: descriptor.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn pose_f64(&self) -> Vec3 {
        crate::cloud::to_f64(self.pose)
    }
}

/// Immutable set of unit descriptors, stored in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    sqrt(v.map(|x| x * x).sum())
}

impl DescriptorIndex {
    /// Validates dimension, unit length and id uniqueness.
    pub fn new(dim: usize, entries: Vec<IndexEntry>) -> Result<Self> {
        if dim == 0 {
            return Err(contract!("index dimension must be positive"));
        }
        let mut ids = BTreeSet::new();
        for e in &entries {
            if e.descriptor.len() != dim {
                return Err(contract!(
                    "entry {} has dimension {}, index has {dim}",
                    e.frame_id,
                    e.descriptor.len()
                ));
            }
            let n = norm(e.descriptor.iter().map(|&x| x as f64));
            if !((n - 1.0).abs() <= UNIT_TOL) {
                return Err(contract!(
                    "entry {} has norm {n}, expected unit length",
                    e.frame_id
                ));
            }
            if !ids.insert(e.frame_id.as_str()) {
                return Err(contract!(
                    "frame id {} appears twice in the index",
                    e.frame_id
                ));
            }
        }
        Ok(DescriptorIndex { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, frame_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.frame_id == frame_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub frame_id: String,
    pub similarity: f64,
}

/// Entries by descending similarity; ties by ascending frame id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<Ranked>,
}

fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

fn ranked_indices(index: &DescriptorIndex, q: &[f64], top_k: usize) -> Vec<(f64, usize)> {
    let qn = norm(q.iter().copied());
    let qn = if qn > 0.0 { qn } else { 1.0 };
    let mut sims: Vec<(f64, usize)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dot: f64 = e
                .descriptor
                .iter()
                .zip(q)
                .map(|(&a, &b)| a as f64 * b)
                .sum();
            let en = norm(e.descriptor.iter().map(|&x| x as f64));
            (dot / (qn * en), i)
        })
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        rank_order(
            &(a.0, &index.entries[a.1].frame_id),
            &(b.0, &index.entries[b.1].frame_id),
        )
    };
    if top_k < sims.len() && top_k > 0 {
        sims.select_nth_unstable_by(top_k - 1, cmp);
        sims.truncate(top_k);
    }
    sims.sort_unstable_by(cmp);
    sims
}

/// Exact cosine ranking of `index` against `descriptor`, keeping `top_k`.
/// Asking for more than the index holds returns the full ranking and
/// counts `top_k_truncated`.
pub fn query(
    index: &DescriptorIndex,
    query_id: &str,
    descriptor: &[f64],
    top_k: usize,
    diag: &mut Diagnostics,
) -> Result<RetrievalResult> {
    if descriptor.len() != index.dim {
        return Err(contract!(
            "query has dimension {}, index has {}",
            descriptor.len(),
            index.dim
        ));
    }
    if top_k > index.len() {
        diag.top_k_truncated += 1;
    }
    let k = top_k.min(index.len());
    let ranked = ranked_indices(index, descriptor, k)
        .into_iter()
        .map(|(s, i)| Ranked {
            frame_id: index.entries[i].frame_id.clone(),
            similarity: s,
        })
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.into(),
        ranked,
    })
}

/// Database and query frames of one scene, as positions in the input list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatabaseSplit {
    pub database: Vec<usize>,
    pub queries: Vec<usize>,
}

/// Greedy sweep in order: a frame joins the database when it is at least
/// `spacing` away from every database frame chosen so far.
pub fn select_database(poses: &[Vec3], spacing: f64) -> Result<DatabaseSplit> {
    if poses.is_empty() {
        return Err(contract!("database selection over an empty scene"));
    }
    let mut out = DatabaseSplit::default();
    for (i, p) in poses.iter().enumerate() {
        let far = out
            .database
            .iter()
            .all(|&j| sqrt(dist2_3(*p, poses[j])) >= spacing);
        if far {
            out.database.push(i);
        } else {
            out.queries.push(i);
        }
    }
    Ok(out)
}

/// One scene's database/query partition of a manifest split.
#[derive(Debug, Clone)]
pub struct SceneSelection<'a> {
    pub database: Vec<FrameRef<'a>>,
    pub queries: Vec<FrameRef<'a>>,
}

/// Applies [`select_database`] to every scene with frames in `split`.
pub fn select_split(
    manifest: &DatasetManifest,
    split: Split,
    spacing: f64,
) -> Result<Vec<SceneSelection<'_>>> {
    let mut out = Vec::new();
    for s in &manifest.scenes {
        let frames: Vec<FrameRef<'_>> = s
            .frames
            .iter()
            .filter(|f| f.split == split)
            .map(|f| FrameRef {
                scene_id: &s.scene_id,
                frame: f,
            })
            .collect();
        if frames.is_empty() {
            continue;
        }
        let poses: Vec<Vec3> = frames.iter().map(|f| f.pose()).collect();
        let sel = select_database(&poses, spacing)?;
        out.push(SceneSelection {
            database: sel.database.iter().map(|&i| frames[i]).collect(),
            queries: sel.queries.iter().map(|&i| frames[i]).collect(),
        });
    }
    Ok(out)
}

/// A query frame with its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryItem {
    pub frame_id: String,
    pub scene_id: String,
    pub pose: Vec3,
    pub descriptor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallTable {
    pub ks: Vec<usize>,
    /// Matched query count per k.
    pub matched: Vec<usize>,
    pub queries: usize,
    pub database: usize,
}

impl RecallTable {
    pub fn recall(&self, i: usize) -> f64 {
        self.matched[i] as f64 / self.queries as f64
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall(i))
    }
}

/// Whether a database entry matches a query: same scene, camera within
/// `radius`.
pub fn is_match(entry: &IndexEntry, q: &QueryItem, radius: f64) -> bool {
    entry.scene_id == q.scene_id && sqrt(dist2_3(entry.pose_f64(), q.pose)) <= radius
}

/// Recall@k: the share of queries with a match among their top `k`.
pub fn evaluate_recall(
    index: &DescriptorIndex,
    queries: &[QueryItem],
    ks: &[usize],
    radius: f64,
) -> Result<RecallTable> {
    if queries.is_empty() {
        return Err(contract!("recall evaluation needs at least one query"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(contract!("recall cut-offs must be positive"));
    }
    let kmax = ks.iter().copied().max().unwrap_or(1).min(index.len());
    let mut matched = alloc::vec![0usize; ks.len()];
    for q in queries {
        if q.descriptor.len() != index.dim {
            return Err(contract!(
                "query {} has dimension {}, index has {}",
                q.frame_id,
                q.descriptor.len(),
                index.dim
            ));
        }
        let top = ranked_indices(index, &q.descriptor, kmax);
        let first = top
            .iter()
            .position(|&(_, i)| is_match(&index.entries[i], q, radius));
        if let Some(r) = first {
            for (slot, &k) in ks.iter().enumerate() {
                if r < k {
                    matched[slot] += 1;
                }
            }
        }
    }
    Ok(RecallTable {
        ks: ks.to_vec(),
        matched,
        queries: queries.len(),
        database: index.len(),
    })
}

/// Expected Recall@k of a ranking that is uniformly random over the
/// database, averaged over queries.
pub fn chance_recall(index: &DescriptorIndex, queries: &[QueryItem], k: usize, radius: f64) -> f64 {
    let n = index.len();
    let mut total = 0.0;
    for q in queries {
        let m = index
            .entries
            .iter()
            .filter(|e| is_match(e, q, radius))
            .count();
        // 1 - C(n - m, k) / C(n, k)
        let mut miss = 1.0;
        for i in 0..k.min(n) {
            miss *= (n - m).saturating_sub(i) as f64 / (n - i) as f64;
        }
        total += 1.0 - miss;
    }
    total / queries.len() as f64
}
