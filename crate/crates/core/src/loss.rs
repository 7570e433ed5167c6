//! Circle loss, triplet loss and their weighted sum, as graph ops so the
//! gradients reach the model.

use alloc::vec::Vec;

use crate::diffcore::{Graph, Tensor, Var};
use crate::{contract, Result};

/// Which positive-pair weighting the circle loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PositiveWeighting {
    /// `a_p = [1 + m - s_p]_+`.
    #[default]
    Standard,
    /// `a_p = [s_p - 1 - m]_+`, which is zero for every similarity `<= 1`.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CircleConfig {
    pub m: f64,
    pub gamma: f64,
    pub delta_p: f64,
    pub delta_n: f64,
    pub weighting: PositiveWeighting,
}

impl Default for CircleConfig {
    fn default() -> Self {
        CircleConfig::with_margin(0.2, 1.0)
    }
}

impl CircleConfig {
    /// Margin `m` with the optima `delta_p = 1 - m`, `delta_n = m`.
    pub fn with_margin(m: f64, gamma: f64) -> Self {
        CircleConfig {
            m,
            gamma,
            delta_p: 1.0 - m,
            delta_n: m,
            weighting: PositiveWeighting::Standard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.m < 0.5)
            || !(self.gamma > 0.0)
            || !self.delta_p.is_finite()
            || !self.delta_n.is_finite()
        {
            return Err(contract!(
                "circle loss needs 0 < m < 0.5 and gamma > 0, got {:?}",
                self
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TripletConfig {
    pub m: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { m: 0.2 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0) {
            return Err(contract!("triplet margin must be positive, got {}", self.m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LossWeights {
    pub w_circle: f64,
    pub w_triplet: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_circle: 10.0,
            w_triplet: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_circle >= 0.0 && self.w_triplet >= 0.0) {
            return Err(contract!(
                "loss weights must be non-negative, got {:?}",
                self
            ));
        }
        Ok(())
    }
}

/// Circle loss over positive similarities `s_p` and negative similarities
/// `s_n` (any shapes, flattened). Returns a `[1]` tensor.
///
/// The weights `a_p` and `a_n` are part of the differentiated expression,
/// so the gradient is the exact derivative of the loss value.
#[track_caller]
pub fn circle_loss(g: &mut Graph, s_p: Var, s_n: Var, cfg: &CircleConfig) -> Var {
    if g.value(s_p).numel() == 0 || g.value(s_n).numel() == 0 {
        panic!("contract violation: circle loss needs non-empty positive and negative lists");
    }
    let a_p = match cfg.weighting {
        PositiveWeighting::Standard => {
            let t = g.neg(s_p);
            let t = g.add_scalar(t, 1.0 + cfg.m);
            g.relu(t)
        }
        PositiveWeighting::Printed => {
            let t = g.add_scalar(s_p, -1.0 - cfg.m);
            g.relu(t)
        }
    };
    let a_n = {
        let t = g.add_scalar(s_n, cfg.m);
        g.relu(t)
    };
    let dp = g.add_scalar(s_p, -cfg.delta_p);
    let pos = g.mul(a_p, dp);
    let pos = g.scale(pos, cfg.gamma);
    let dn = g.add_scalar(s_n, -cfg.delta_n);
    let neg = g.mul(a_n, dn);
    let neg = g.scale(neg, cfg.gamma);
    let lse_n = g.logsumexp(neg);
    let lse_p = g.logsumexp(pos);
    let diff = g.sub(lse_n, lse_p);
    g.softplus(diff)
}

/// Scalar evaluation of [`circle_loss`].
pub fn circle_loss_value(s_p: &[f64], s_n: &[f64], cfg: &CircleConfig) -> Result<f64> {
    if s_p.is_empty() || s_n.is_empty() {
        return Err(contract!(
            "circle loss needs non-empty positive and negative lists"
        ));
    }
    let mut g = Graph::new();
    let p = g.constant(Tensor::vector(s_p.to_vec()));
    let n = g.constant(Tensor::vector(s_n.to_vec()));
    let l = circle_loss(&mut g, p, n, cfg);
    Ok(g.value(l).item())
}

/// Squared Euclidean distance between two `[1, d]` rows, as `[1]`.
fn sq_dist(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d2 = g.square(d);
    g.sum(d2)
}

/// `max(d(g_p, g_q) - d(g_n, g_q) + m, 0)` with squared Euclidean `d`.
/// All three descriptors are `[1, dim]`.
pub fn triplet_loss(g: &mut Graph, g_q: Var, g_p: Var, g_n: Var, cfg: &TripletConfig) -> Var {
    let dp = sq_dist(g, g_p, g_q);
    let dn = sq_dist(g, g_n, g_q);
    let t = g.sub(dp, dn);
    let t = g.add_scalar(t, cfg.m);
    g.relu(t)
}

/// Scalar form of [`triplet_loss`] in terms of the two distances.
pub fn triplet_from_distances(d_p: f64, d_n: f64, cfg: &TripletConfig) -> f64 {
    (d_p - d_n + cfg.m).max(0.0)
}

/// Squared Euclidean distance between unit vectors with cosine `cos`.
pub fn metric_convert(cos: f64) -> f64 {
    2.0 - 2.0 * cos
}

/// `w_circle * circle + w_triplet * triplet`.
pub fn combined_loss(g: &mut Graph, circle: Var, triplet: Var, w: &LossWeights) -> Var {
    let c = g.scale(circle, w.w_circle);
    let t = g.scale(triplet, w.w_triplet);
    g.add(c, t)
}

/// Loss terms of one query batch, each a `[1]` tensor.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub circle: Var,
    pub triplet: Var,
    pub total: Var,
}

/// Circle loss on cosine similarities of the query to its positive and
/// negatives, plus the mean triplet loss over the negatives.
///
/// Every descriptor is a unit `[1, dim]` row.
pub fn query_batch_loss(
    g: &mut Graph,
    query: Var,
    positive: Var,
    negatives: &[Var],
    circle: &CircleConfig,
    triplet: &TripletConfig,
    weights: &LossWeights,
) -> BatchLoss {
    assert!(
        !negatives.is_empty(),
        "contract violation: a batch needs at least one negative"
    );
    let s_p = g.dot(query, positive);
    let s_n: Vec<Var> = negatives.iter().map(|&n| g.dot(query, n)).collect();
    let s_n = g.concat(&s_n, crate::diffcore::Axis::Rows);
    let c = circle_loss(g, s_p, s_n, circle);
    let mut t = triplet_loss(g, query, positive, negatives[0], triplet);
    for &n in &negatives[1..] {
        let ti = triplet_loss(g, query, positive, n, triplet);
        t = g.add(t, ti);
    }
    let t = g.scale(t, 1.0 / negatives.len() as f64);
    let total = combined_loss(g, c, t, weights);
    BatchLoss {
        circle: c,
        triplet: t,
        total,
    }
}
