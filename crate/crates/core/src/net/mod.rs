//! The feature extractor: an affine stem, stages of reducer and
//! context-cluster blocks, and the global encoder that emits one
//! unit-length descriptor per frame.

mod blocks;
mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use blocks::{
    cluster_affinity, cluster_aggregate, cluster_apply, cluster_dispatch, encoder_apply,
    plan_cluster, plan_encoder, plan_reducer, reducer_apply, ClusterOut, ClusterParams,
    ClusterPlan, EncoderPlan, Level, Linear, ReducerOut, ReducerParams, ReducerPlan,
};
pub use config::{ModelConfig, PairEncoding, StageConfig};

use crate::cloud::PointFrame;
use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::math::{sqrt, Vec3};
use crate::rng::SeededRng;
use crate::{contract, Result};

/// Per-point input channels: color, centered position, normal.
pub const STEM_INPUT_DIM: usize = 9;

const INIT_STREAM: u64 = 0x6e65_74;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    pub reducer: ReducerParams,
    pub cluster: ClusterParams,
}

/// Where every block's parameters live in the store.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub stem: Linear,
    pub stages: Vec<StageParams>,
    pub encoder: ReducerParams,
}

/// Geometry of one frame for a given configuration: everything the
/// forward pass needs besides parameters.
#[derive(Debug, Clone)]
pub struct FramePlan {
    /// `[n, 9]` stem input.
    pub stem_input: Tensor,
    pub stages: Vec<(ReducerPlan, ClusterPlan)>,
    pub encoder: EncoderPlan,
}

impl FramePlan {
    /// Point counts after each stage.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|(r, _)| r.selected.len()).collect()
    }
}

/// Plans a frame: stem input and every stage's sampling and neighborhoods.
pub fn plan_frame(frame: &PointFrame, cfg: &ModelConfig) -> Result<FramePlan> {
    frame.validate()?;
    let Some(normals) = frame.normals_f64() else {
        return Err(contract!(
            "frame {} has no normals; run estimate_normals first",
            frame.frame_id
        ));
    };
    let colors: Vec<Vec3> = frame
        .colors
        .iter()
        .map(|c| crate::cloud::to_f64(*c))
        .collect();
    plan_points(&colors, &frame.positions_f64(), &normals, cfg)
}

/// [`plan_frame`] on double-precision arrays.
pub fn plan_points(
    colors: &[Vec3],
    positions: &[Vec3],
    normals: &[Vec3],
    cfg: &ModelConfig,
) -> Result<FramePlan> {
    cfg.validate()?;
    let n = positions.len();
    if colors.len() != n || normals.len() != n {
        return Err(contract!(
            "{} colors and {} normals for {n} points",
            colors.len(),
            normals.len()
        ));
    }
    cfg.check_point_count(n)?;
    let mut c = [0.0; 3];
    for p in positions {
        for a in 0..3 {
            c[a] += p[a] / n as f64;
        }
    }
    let mut stem = Vec::with_capacity(n * STEM_INPUT_DIM);
    for i in 0..n {
        if cfg.use_color {
            stem.extend_from_slice(&colors[i]);
        } else {
            stem.extend_from_slice(&[0.0; 3]);
        }
        stem.extend((0..3).map(|a| positions[i][a] - c[a]));
        stem.extend_from_slice(&normals[i]);
    }
    let mut level = Level {
        positions: positions.to_vec(),
        normals: normals.to_vec(),
    };
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for s in &cfg.stages {
        let r = plan_reducer(&level, s, cfg.pair_encoding)?;
        let c = plan_cluster(&r.output, s)?;
        level = r.output.clone();
        stages.push((r, c));
    }
    let encoder = plan_encoder(&level, cfg.pair_encoding)?;
    Ok(FramePlan {
        stem_input: Tensor::from_vec(&[n, STEM_INPUT_DIM], stem),
        stages,
        encoder,
    })
}

fn uniform_tensor(rng: &mut SeededRng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.range(-bound, bound)).collect())
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut SeededRng,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: f64) -> Linear {
        let bound = 1.0 / sqrt(fan_in as f64);
        let w = self.store.add(
            format!("{name}.w"),
            uniform_tensor(self.rng, &[fan_in, fan_out], bound),
        );
        let b = self
            .store
            .add(format!("{name}.b"), Tensor::filled(&[1, fan_out], bias));
        Linear { w, b }
    }

    fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self
            .store
            .add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = self
            .store
            .add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Linear { w, b }
    }

    fn scalar(&mut self, name: String, value: f64) -> ParamId {
        self.store.add(name, Tensor::filled(&[1], value))
    }

    fn reducer(
        &mut self,
        name: &str,
        d_in: usize,
        d_out: usize,
        heads: usize,
        pair_dim: usize,
    ) -> ReducerParams {
        ReducerParams {
            f1: self.linear(&format!("{name}.f1"), d_in, d_out, 0.0),
            f2: self.linear(&format!("{name}.f2"), d_in, d_out, 0.0),
            f3: self.linear(&format!("{name}.f3"), d_in, d_out, 0.0),
            // Gates start near one so every neighbor contributes.
            f4: self.linear(&format!("{name}.f4"), pair_dim, heads, 1.0),
        }
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: ModelLayout,
}

impl Model {
    /// Fresh parameters. Weights are uniform in `±1/sqrt(fan_in)`, biases
    /// zero except the gate bias (one); cluster dispatch maps start at zero
    /// so every cluster block is the identity at initialization;
    /// `alpha = 1`, `beta = 0`. Values are rounded to `f32`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = SeededRng::derived(seed, INIT_STREAM);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let pd = config.pair_encoding.dim();
        let stem = b.linear("stem", STEM_INPUT_DIM, config.stem_dim, 0.0);
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut d_in = config.stem_dim;
        for (i, s) in config.stages.iter().enumerate() {
            let reducer = b.reducer(&format!("stage{i}.reducer"), d_in, s.out_dim, s.heads, pd);
            let cluster = ClusterParams {
                alpha: b.scalar(format!("stage{i}.cluster.alpha"), 1.0),
                beta: b.scalar(format!("stage{i}.cluster.beta"), 0.0),
                h: b.zero_linear(&format!("stage{i}.cluster.h"), s.out_dim, s.out_dim),
            };
            stages.push(StageParams { reducer, cluster });
            d_in = s.out_dim;
        }
        let encoder = b.reducer(
            "encoder",
            d_in,
            config.descriptor_dim,
            config.encoder_heads,
            pd,
        );
        let mut params = b.store;
        params.round_to_f32();
        Ok(Model {
            config,
            params,
            layout: ModelLayout {
                stem,
                stages,
                encoder,
            },
        })
    }

    /// Builds the layout for `config` and takes parameter values from
    /// `params`, which must match in names, order and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        let mut model = Model::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(contract!(
                "parameter count {} does not match the architecture ({})",
                params.len(),
                model.params.len()
            ));
        }
        for (want, got) in model.params.iter().zip(params.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(contract!(
                    "parameter {} {:?} does not match the architecture's {} {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                ));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn plan(&self, frame: &PointFrame) -> Result<FramePlan> {
        plan_frame(frame, &self.config)
    }

    /// Forward pass on bound parameter variables. Returns the `[1, dim]`
    /// unit descriptor.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], plan: &FramePlan) -> Var {
        self.forward_traced(g, vars, plan).descriptor
    }

    pub fn forward_traced(&self, g: &mut Graph, vars: &[Var], plan: &FramePlan) -> ForwardTrace {
        let x = g.constant(plan.stem_input.clone());
        let mut f = self.layout.stem.apply(g, vars, x);
        let stem = f;
        let mut stages = Vec::with_capacity(plan.stages.len());
        for ((rp, cp), (sp, cfg)) in plan
            .stages
            .iter()
            .zip(self.layout.stages.iter().zip(&self.config.stages))
        {
            let r = reducer_apply(g, vars, &sp.reducer, cfg.heads, f, rp);
            let c = cluster_apply(g, vars, &sp.cluster, r.features, cp);
            f = c.features;
            stages.push((r, c));
        }
        let e = encoder_apply(
            g,
            vars,
            &self.layout.encoder,
            self.config.encoder_heads,
            f,
            &plan.encoder,
        );
        ForwardTrace {
            stem,
            stages,
            encoder: e,
            descriptor: e.features,
        }
    }

    /// Inference: the descriptor of a planned frame.
    pub fn descriptor(&self, plan: &FramePlan) -> Vec<f64> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let d = self.forward(&mut g, &vars, plan);
        g.value(d).data().to_vec()
    }

    /// Plans and describes a frame.
    pub fn describe(&self, frame: &PointFrame) -> Result<Vec<f64>> {
        Ok(self.descriptor(&self.plan(frame)?))
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub stem: Var,
    pub stages: Vec<(ReducerOut, ClusterOut)>,
    pub encoder: ReducerOut,
    pub descriptor: Var,
}

#[cfg(test)]
mod tests;
