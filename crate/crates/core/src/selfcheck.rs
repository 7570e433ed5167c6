//! Central-difference gradient checks for every learnable block, on small
//! seeded instances. Shared by the `gradcheck` command and the test suites.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffcore::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamId, Tensor, Var};
use crate::loss::{
    circle_loss, query_batch_loss, triplet_loss, CircleConfig, LossWeights, TripletConfig,
};
use crate::math::{norm3, scale3, Vec3};
use crate::net::{
    cluster_apply, encoder_apply, plan_cluster, plan_encoder, plan_points, plan_reducer,
    reducer_apply, FramePlan, Level, Model, ModelConfig, PairEncoding, StageConfig,
};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub block: &'static str,
    pub report: GradCheckReport,
}

impl BlockCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

pub const BLOCKS: [&str; 7] = [
    "stem",
    "reducer",
    "cluster",
    "encoder",
    "circle_loss",
    "triplet_loss",
    "end_to_end",
];

fn unit(rng: &mut SeededRng) -> Vec3 {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let l = norm3(v);
        if l > 1e-3 {
            return scale3(v, 1.0 / l);
        }
    }
}

struct Cloud {
    colors: Vec<Vec3>,
    positions: Vec<Vec3>,
    normals: Vec<Vec3>,
}

fn cloud(n: usize, rng: &mut SeededRng) -> Cloud {
    Cloud {
        colors: (0..n)
            .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
            .collect(),
        positions: (0..n)
            .map(|_| {
                [
                    rng.range(-2.0, 2.0),
                    rng.range(-2.0, 2.0),
                    rng.range(0.0, 3.0),
                ]
            })
            .collect(),
        normals: (0..n).map(|_| unit(rng)).collect(),
    }
}

fn random(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| scale * rng.normal()).collect())
}

/// `sum(x^2) + sum(x * c)` with a fixed pattern `c`, so that every output
/// coordinate gets a distinct, nonzero upstream gradient.
fn probe(g: &mut Graph, x: Var) -> Var {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let c = g.constant(Tensor::from_vec(
        &shape,
        (0..n).map(|i| ((i % 7) as f64 - 3.0) * 0.1).collect(),
    ));
    let sq = g.square(x);
    let t = g.mul(x, c);
    let a = g.sum(sq);
    let b = g.sum(t);
    g.add(a, b)
}

fn params_of(model: &Model, ids: &[ParamId]) -> Vec<(String, Tensor)> {
    ids.iter()
        .map(|&id| {
            (
                model.params.get(id).name.clone(),
                model.params.get(id).value.clone(),
            )
        })
        .collect()
}

/// Rebinds block parameters: `vars` holds the checked tensors in order, and
/// `full` gets them at their store positions (everything else constant).
fn full_vars(g: &mut Graph, model: &Model, ids: &[ParamId], vars: &[Var]) -> Vec<Var> {
    let mut full = model.params.bind_frozen(g);
    for (&id, &v) in ids.iter().zip(vars) {
        full[id.0] = v;
    }
    full
}

fn small_config() -> ModelConfig {
    let s = StageConfig {
        k_neighbors: 8,
        reduce_ratio: 4,
        out_dim: 8,
        heads: 2,
        centers_ratio: 4,
    };
    ModelConfig {
        stem_dim: 8,
        stages: vec![s],
        descriptor_dim: 8,
        encoder_heads: 2,
        ..ModelConfig::default()
    }
}

fn mini_config() -> ModelConfig {
    let s = StageConfig {
        k_neighbors: 4,
        reduce_ratio: 2,
        out_dim: 4,
        heads: 2,
        centers_ratio: 2,
    };
    ModelConfig {
        stem_dim: 4,
        stages: vec![s, s],
        descriptor_dim: 4,
        encoder_heads: 2,
        ..ModelConfig::default()
    }
}

fn randomize_dispatch(model: &mut Model, rng: &mut SeededRng) {
    let ids: Vec<ParamId> = model
        .layout
        .stages
        .iter()
        .flat_map(|s| [s.cluster.h.w, s.cluster.h.b])
        .collect();
    for id in ids {
        for x in model.params.get_mut(id).value.data_mut() {
            *x = rng.range(-0.3, 0.3);
        }
    }
}

fn check_stem(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    let model = Model::new(small_config(), rng.next_u64()).expect("valid config");
    let stem = model.layout.stem;
    let ids = [stem.w, stem.b];
    let mut params = params_of(&model, &ids);
    params.push((
        String::from("input"),
        random(rng, &[16, crate::net::STEM_INPUT_DIM], 1.0),
    ));
    let f = |g: &mut Graph, vars: &[Var]| {
        let full = full_vars(g, &model, &ids, vars);
        let y = stem.apply(g, &full, vars[2]);
        probe(g, y)
    };
    grad_check(f, &params, cfg)
}

fn check_reducer(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    let model = Model::new(small_config(), rng.next_u64()).expect("valid config");
    let c = cloud(64, rng);
    let level = Level::new(&c.positions, &c.normals);
    let plan =
        plan_reducer(&level, &model.config.stages[0], PairEncoding::Geometric).expect("64 points");
    let r = model.layout.stages[0].reducer;
    let ids = [
        r.f1.w, r.f1.b, r.f2.w, r.f2.b, r.f3.w, r.f3.b, r.f4.w, r.f4.b,
    ];
    let mut params = params_of(&model, &ids);
    params.push((String::from("input"), random(rng, &[64, 8], 1.0)));
    let f = |g: &mut Graph, vars: &[Var]| {
        let full = full_vars(g, &model, &ids, vars);
        let out = reducer_apply(g, &full, &r, 2, vars[ids.len()], &plan);
        probe(g, out.features)
    };
    grad_check(
        f,
        &params,
        GradCheckConfig {
            max_coords: Some(24),
            ..cfg
        },
    )
}

fn check_cluster(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    let mut model = Model::new(small_config(), rng.next_u64()).expect("valid config");
    randomize_dispatch(&mut model, rng);
    let c = cloud(32, rng);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_cluster(&level, &model.config.stages[0]).expect("32 points");
    let p = model.layout.stages[0].cluster;
    model.params.get_mut(p.alpha).value = Tensor::filled(&[1], 1.7);
    model.params.get_mut(p.beta).value = Tensor::filled(&[1], -0.3);
    let ids = [p.alpha, p.beta, p.h.w, p.h.b];
    let mut params = params_of(&model, &ids);
    params.push((String::from("input"), random(rng, &[32, 8], 1.0)));
    let f = |g: &mut Graph, vars: &[Var]| {
        let full = full_vars(g, &model, &ids, vars);
        let out = cluster_apply(g, &full, &p, vars[ids.len()], &plan);
        probe(g, out.features)
    };
    grad_check(
        f,
        &params,
        GradCheckConfig {
            max_coords: Some(24),
            ..cfg
        },
    )
}

fn check_encoder(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    let model = Model::new(small_config(), rng.next_u64()).expect("valid config");
    let c = cloud(12, rng);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_encoder(&level, PairEncoding::Geometric).expect("non-empty level");
    let e = model.layout.encoder;
    let ids = [
        e.f1.w, e.f1.b, e.f2.w, e.f2.b, e.f3.w, e.f3.b, e.f4.w, e.f4.b,
    ];
    let mut params = params_of(&model, &ids);
    params.push((String::from("input"), random(rng, &[12, 8], 1.0)));
    let f = |g: &mut Graph, vars: &[Var]| {
        let full = full_vars(g, &model, &ids, vars);
        let out = encoder_apply(g, &full, &e, 2, vars[ids.len()], &plan);
        probe(g, out.features)
    };
    grad_check(
        f,
        &params,
        GradCheckConfig {
            max_coords: Some(24),
            ..cfg
        },
    )
}

fn check_circle(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    // Similarities stay inside (0, 1), away from the weight clamps.
    let sp = Tensor::vector((0..3).map(|_| rng.range(0.05, 0.95)).collect());
    let sn = Tensor::vector((0..5).map(|_| rng.range(0.05, 0.95)).collect());
    let circle = CircleConfig::default();
    let f = |g: &mut Graph, vars: &[Var]| circle_loss(g, vars[0], vars[1], &circle);
    grad_check(
        f,
        &[(String::from("s_p"), sp), (String::from("s_n"), sn)],
        cfg,
    )
}

fn check_triplet(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    // Positive far and negative near keep the hinge active.
    let q = random(rng, &[1, 6], 1.0);
    let offset = |rng: &mut SeededRng, s: f64| {
        let d: Vec<f64> = q.data().iter().map(|x| x + s * rng.normal()).collect();
        Tensor::from_vec(&[1, 6], d)
    };
    let p = offset(rng, 1.0);
    let n = offset(rng, 0.05);
    let triplet = TripletConfig::default();
    let f = |g: &mut Graph, vars: &[Var]| triplet_loss(g, vars[0], vars[1], vars[2], &triplet);
    grad_check(
        f,
        &[
            (String::from("query"), q.clone()),
            (String::from("positive"), p),
            (String::from("negative"), n),
        ],
        cfg,
    )
}

fn check_end_to_end(rng: &mut SeededRng, cfg: GradCheckConfig) -> GradCheckReport {
    let mut model = Model::new(mini_config(), rng.next_u64()).expect("valid config");
    randomize_dispatch(&mut model, rng);
    let plans: Vec<FramePlan> = (0..3)
        .map(|_| {
            let c = cloud(8, rng);
            plan_points(&c.colors, &c.positions, &c.normals, &model.config)
                .expect("8 points fit the miniature model")
        })
        .collect();
    let params: Vec<(String, Tensor)> = model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    let f = |g: &mut Graph, vars: &[Var]| {
        let d: Vec<Var> = plans.iter().map(|p| model.forward(g, vars, p)).collect();
        query_batch_loss(
            g,
            d[0],
            d[1],
            &d[2..],
            &CircleConfig::default(),
            &TripletConfig::default(),
            &LossWeights::default(),
        )
        .total
    };
    grad_check(f, &params, cfg)
}

/// Runs the check for one block by name; `None` for an unknown name.
pub fn check_block(block: &str, seed: u64, cfg: GradCheckConfig) -> Option<BlockCheck> {
    let i = BLOCKS.iter().position(|b| *b == block)?;
    let mut rng = SeededRng::derived(seed, 0x6763_0000 + i as u64);
    let report = match i {
        0 => check_stem(&mut rng, cfg),
        1 => check_reducer(&mut rng, cfg),
        2 => check_cluster(&mut rng, cfg),
        3 => check_encoder(&mut rng, cfg),
        4 => check_circle(&mut rng, cfg),
        5 => check_triplet(&mut rng, cfg),
        _ => check_end_to_end(&mut rng, cfg),
    };
    Some(BlockCheck {
        block: BLOCKS[i],
        report,
    })
}

/// Every block in [`BLOCKS`] order.
pub fn check_all(seed: u64, cfg: GradCheckConfig) -> Vec<BlockCheck> {
    BLOCKS
        .iter()
        .map(|b| check_block(b, seed, cfg).expect("known block"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_block_passes() {
        for c in check_all(3, GradCheckConfig::default()) {
            assert!(c.passed(), "{}: {:?}", c.block, c.report);
            assert!(
                c.report.params.iter().all(|p| p.coords_checked > 0),
                "{}",
                c.block
            );
        }
    }

    #[test]
    fn unknown_block() {
        assert!(check_block("nope", 0, GradCheckConfig::default()).is_none());
    }
}
