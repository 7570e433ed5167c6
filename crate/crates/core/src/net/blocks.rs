//! Reducer, context-cluster and global-encoder blocks.
//!
//! Each block is split into a plan, which holds everything that depends
//! only on point positions and normals (sampling, neighborhoods, pair
//! encodings), and an apply step that runs the learnable part on a
//! [`Graph`]. Plans are constant with respect to the parameters, so a
//! frame can be planned once and reused across training steps.

use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{PairEncoding, StageConfig};
use crate::diffcore::{Graph, ParamId, Tensor, Var, NORM_EPS};
use crate::geom::geom_encode_unchecked;
use crate::math::{norm3, scale3, sqrt, Vec3};
use crate::sampling::{fps, knn};
use crate::{contract, Result};

/// Positions and unit normals of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl Level {
    pub fn new(positions: &[Vec3], normals: &[Vec3]) -> Level {
        assert_eq!(
            positions.len(),
            normals.len(),
            "contract violation: level positions and normals differ in length"
        );
        Level {
            positions: positions.to_vec(),
            normals: normals.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Level {
        Level {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

/// Affine map `x W + b` with `W: [fan_in, fan_out]`, `b: [1, fan_out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let y = g.matmul(x, vars[self.w.0]);
        g.add(y, vars[self.b.0])
    }
}

/// `f1` keys, `f2` queries, `f3` values, `f4` pair gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducerParams {
    pub f1: Linear,
    pub f2: Linear,
    pub f3: Linear,
    pub f4: Linear,
}

/// Affinity scale `alpha`, bias `beta` (both `[1]`), dispatch map `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub alpha: ParamId,
    pub beta: ParamId,
    pub h: Linear,
}

fn pair_row(enc: PairEncoding, p: Vec3, n: Vec3, pk: Vec3, nk: Vec3, out: &mut Vec<f64>) {
    match enc {
        PairEncoding::Geometric => out.extend_from_slice(&geom_encode_unchecked(p, n, pk, nk).0),
        PairEncoding::AbsolutePositions => {
            out.extend_from_slice(&pk);
            out.extend_from_slice(&p);
        }
    }
}

/// Sampling, neighborhoods and pair encodings of one reducer.
#[derive(Debug, Clone)]
pub struct ReducerPlan {
    /// Indices of the kept points in the input level.
    pub selected: Vec<usize>,
    pub k: usize,
    /// `selected.len() * k` input-level indices, nearest first.
    pub nbrs: Arc<[u32]>,
    /// `[selected.len() * k, pair_dim]` encodings of each (neighbor, center) pair.
    pub pairs: Tensor,
    pub output: Level,
}

/// Plans a reducer over `input`: farthest point sampling down to
/// `n / reduce_ratio` points, then the `k` nearest input points of each.
pub fn plan_reducer(input: &Level, cfg: &StageConfig, enc: PairEncoding) -> Result<ReducerPlan> {
    let n = input.len();
    if n < cfg.k_neighbors {
        return Err(contract!(
            "reducer needs at least k = {} input points, got {n}",
            cfg.k_neighbors
        ));
    }
    let n_out = cfg.reduced(n);
    let selected = fps(&input.positions, n_out)?.indices;
    let output = input.select(&selected);
    let k = cfg.k_neighbors;
    let nl = knn(&output.positions, &input.positions, k)?;
    let mut pairs = Vec::with_capacity(n_out * k * enc.dim());
    for (q, (&p, &nrm)) in output.positions.iter().zip(&output.normals).enumerate() {
        for &j in nl.of(q) {
            let j = j as usize;
            pair_row(
                enc,
                p,
                nrm,
                input.positions[j],
                input.normals[j],
                &mut pairs,
            );
        }
    }
    Ok(ReducerPlan {
        selected,
        k,
        nbrs: nl.indices.into(),
        pairs: Tensor::from_vec(&[n_out * k, enc.dim()], pairs),
        output,
    })
}

/// Intermediate values of a reducer pass.
#[derive(Debug, Clone, Copy)]
pub struct ReducerOut {
    /// `[n_out, out_dim]`.
    pub features: Var,
    /// `[n_out * k, heads]`; each column sums to one within a neighborhood.
    pub attention: Var,
    /// `[n_out * k, heads]` gate values `f4(g)`.
    pub gate: Var,
}

/// Attention-and-gate aggregation shared by reducers and the encoder.
///
/// `keys_src` feeds `f1` and `f3`, `query_src` feeds `f2`.
#[allow(clippy::too_many_arguments)]
fn gated_attention(
    g: &mut Graph,
    vars: &[Var],
    p: &ReducerParams,
    heads: usize,
    keys_src: Var,
    query_src: Var,
    nbrs: Arc<[u32]>,
    k: usize,
    pairs: &Tensor,
) -> ReducerOut {
    let keys = p.f1.apply(g, vars, keys_src);
    let values = p.f3.apply(g, vars, keys_src);
    let query = p.f2.apply(g, vars, query_src);
    let d = g.shape(query)[1];
    let scale = 1.0 / sqrt((d / heads) as f64);
    let logits = g.neighbor_logits(query, keys, nbrs.clone(), k, heads, scale);
    let attention = g.group_softmax(logits, k);
    let pair = g.constant(pairs.clone());
    let gate = p.f4.apply(g, vars, pair);
    let w = g.mul(gate, attention);
    let features = g.neighbor_aggregate(w, values, nbrs, k, heads);
    ReducerOut {
        features,
        attention,
        gate,
    }
}

/// Runs a planned reducer on input features `[n, d_in]`.
pub fn reducer_apply(
    g: &mut Graph,
    vars: &[Var],
    p: &ReducerParams,
    heads: usize,
    feats: Var,
    plan: &ReducerPlan,
) -> ReducerOut {
    let sel: Arc<[u32]> = plan.selected.iter().map(|&i| i as u32).collect();
    let query_src = g.gather_rows(feats, sel);
    gated_attention(
        g,
        vars,
        p,
        heads,
        feats,
        query_src,
        plan.nbrs.clone(),
        plan.k,
        &plan.pairs,
    )
}

/// Centers and the neighborhoods their initial features average over.
#[derive(Debug, Clone)]
pub struct ClusterPlan {
    pub centers: Vec<usize>,
    pub k: usize,
    /// `centers.len() * k` point indices.
    pub center_nbrs: Arc<[u32]>,
}

/// Plans `n / centers_ratio` centers by farthest point sampling. The
/// averaging neighborhood uses `k_neighbors`, capped at the level size.
pub fn plan_cluster(level: &Level, cfg: &StageConfig) -> Result<ClusterPlan> {
    let n = level.len();
    if n < cfg.centers_ratio {
        return Err(contract!(
            "cluster needs at least {} points, got {n}",
            cfg.centers_ratio
        ));
    }
    let centers = fps(&level.positions, n / cfg.centers_ratio)?.indices;
    let k = cfg.k_neighbors.min(n);
    let cpos: Vec<Vec3> = centers.iter().map(|&i| level.positions[i]).collect();
    let nl = knn(&cpos, &level.positions, k)?;
    Ok(ClusterPlan {
        centers,
        k,
        center_nbrs: nl.indices.into(),
    })
}

/// Affinities `sigmoid(alpha * cos(f'_c, f_p) + beta)`, `[n_c, n]`.
pub fn cluster_affinity(g: &mut Graph, alpha: Var, beta: Var, init: Var, feats: Var) -> Var {
    let cos = g.cosine_similarity(init, feats);
    let z = g.mul(cos, alpha);
    let z = g.add(z, beta);
    g.sigmoid(z)
}

/// Center features `(f'_c + sum_p s_cp f_p) / (1 + sum_p s_cp)`.
pub fn cluster_aggregate(g: &mut Graph, s: Var, init: Var, feats: Var) -> Var {
    let weighted = g.matmul(s, feats);
    let num = g.add(init, weighted);
    let den = g.sum_cols(s);
    let den = g.add_scalar(den, 1.0);
    g.div(num, den)
}

/// Residual dispatch `f_p + sum_c h(s_cp f_c)`, with `h` affine this is
/// `f_p + (s^T F_c) W + n_c b`.
pub fn cluster_dispatch(
    g: &mut Graph,
    vars: &[Var],
    h: &Linear,
    s: Var,
    centers: Var,
    feats: Var,
) -> Var {
    let nc = g.shape(s)[0] as f64;
    let st = g.transpose(s);
    let pooled = g.matmul(st, centers);
    let mapped = g.matmul(pooled, vars[h.w.0]);
    let bias = g.scale(vars[h.b.0], nc);
    let delta = g.add(mapped, bias);
    g.add(feats, delta)
}

/// Intermediate values of a cluster pass.
#[derive(Debug, Clone, Copy)]
pub struct ClusterOut {
    pub features: Var,
    pub affinity: Var,
    pub centers: Var,
    pub initial_centers: Var,
}

pub fn cluster_apply(
    g: &mut Graph,
    vars: &[Var],
    p: &ClusterParams,
    feats: Var,
    plan: &ClusterPlan,
) -> ClusterOut {
    let init = g.group_mean(feats, plan.center_nbrs.clone(), plan.k);
    let s = cluster_affinity(g, vars[p.alpha.0], vars[p.beta.0], init, feats);
    let centers = cluster_aggregate(g, s, init, feats);
    let features = cluster_dispatch(g, vars, &p.h, s, centers, feats);
    ClusterOut {
        features,
        affinity: s,
        centers,
        initial_centers: init,
    }
}

/// The single virtual output point of the global encoder and its pairs.
#[derive(Debug, Clone)]
pub struct EncoderPlan {
    pub position: Vec3,
    pub normal: Vec3,
    /// `[n, pair_dim]`, one row per input point.
    pub pairs: Tensor,
    pub nbrs: Arc<[u32]>,
}

/// The virtual point sits at the centroid with the renormalized mean
/// normal (`+z` if the normals cancel out).
pub fn plan_encoder(level: &Level, enc: PairEncoding) -> Result<EncoderPlan> {
    let n = level.len();
    if n == 0 {
        return Err(contract!("global encoder needs at least one point"));
    }
    let mut c = [0.0; 3];
    let mut nm = [0.0; 3];
    for (p, q) in level.positions.iter().zip(&level.normals) {
        for a in 0..3 {
            c[a] += p[a];
            nm[a] += q[a];
        }
    }
    let c = scale3(c, 1.0 / n as f64);
    let len = norm3(nm);
    let normal = if len > 1e-9 {
        scale3(nm, 1.0 / len)
    } else {
        [0.0, 0.0, 1.0]
    };
    let mut pairs = Vec::with_capacity(n * enc.dim());
    for (p, q) in level.positions.iter().zip(&level.normals) {
        pair_row(enc, c, normal, *p, *q, &mut pairs);
    }
    Ok(EncoderPlan {
        position: c,
        normal,
        pairs: Tensor::from_vec(&[n, enc.dim()], pairs),
        nbrs: (0..n as u32).collect(),
    })
}

/// Global descriptor `[1, descriptor_dim]`, unit length.
///
/// Input features are normalized per point; the virtual point's query
/// feature is the mean of the normalized features.
pub fn encoder_apply(
    g: &mut Graph,
    vars: &[Var],
    p: &ReducerParams,
    heads: usize,
    feats: Var,
    plan: &EncoderPlan,
) -> ReducerOut {
    let normed = g.l2_normalize_rows(feats, NORM_EPS);
    let query_src = g.mean_rows(normed);
    let n = plan.nbrs.len();
    let mut out = gated_attention(
        g,
        vars,
        p,
        heads,
        normed,
        query_src,
        plan.nbrs.clone(),
        n,
        &plan.pairs,
    );
    out.features = g.l2_normalize_rows(out.features, NORM_EPS);
    out
}
