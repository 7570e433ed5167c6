use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::diffcore::{grad_check, GradCheckConfig};
use crate::loss::{query_batch_loss, CircleConfig, LossWeights, TripletConfig};
use crate::math::{dot3, norm3, scale3};

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

fn cloud(n: usize, seed: u64) -> Cloud {
    let mut rng = SeededRng::new(seed);
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
        normals: (0..n).map(|_| unit(&mut rng)).collect(),
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
        ..Default::default()
    }
}

fn randomize_dispatch(model: &mut Model, seed: u64) {
    let mut rng = SeededRng::new(seed);
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

fn set(model: &mut Model, id: ParamId, f: impl Fn(usize, usize) -> f64) {
    let t = &mut model.params.get_mut(id).value;
    let cols = t.cols();
    for (i, x) in t.data_mut().iter_mut().enumerate() {
        *x = f(i / cols, i % cols);
    }
}

fn param_list(model: &Model) -> Vec<(String, Tensor)> {
    model
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect()
}

#[test]
fn single_neighbor_passes_feature_through() {
    let cfg = ModelConfig {
        stem_dim: 3,
        stages: vec![StageConfig {
            k_neighbors: 1,
            reduce_ratio: 2,
            out_dim: 3,
            heads: 1,
            centers_ratio: 2,
        }],
        descriptor_dim: 3,
        encoder_heads: 1,
        ..Default::default()
    };
    let mut model = Model::new(cfg, 1).unwrap();
    let r = model.layout.stages[0].reducer;
    set(&mut model, r.f3.w, |i, j| if i == j { 1.0 } else { 0.0 });
    set(&mut model, r.f4.w, |_, _| 0.0);
    set(&mut model, r.f4.b, |_, _| 1.0);
    let c = cloud(8, 3);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_reducer(&level, &model.config.stages[0], PairEncoding::Geometric).unwrap();
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g);
    let feats = g.constant(Tensor::from_rows(&c.colors));
    let out = reducer_apply(&mut g, &vars, &r, 1, feats, &plan);
    assert!(g.value(out.attention).data().iter().all(|&a| a == 1.0));
    for (row, &src) in plan.selected.iter().enumerate() {
        assert_eq!(g.value(out.features).row(row), &c.colors[src][..]);
    }
}

#[test]
fn zero_values_give_zero_output() {
    let mut model = Model::new(mini_config(), 2).unwrap();
    let r = model.layout.stages[0].reducer;
    set(&mut model, r.f3.w, |_, _| 0.0);
    let c = cloud(8, 4);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_reducer(&level, &model.config.stages[0], PairEncoding::Geometric).unwrap();
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g);
    let mut rng = SeededRng::new(9);
    let feats = g.constant(Tensor::from_vec(
        &[8, 4],
        (0..32).map(|_| rng.normal()).collect(),
    ));
    let out = reducer_apply(&mut g, &vars, &r, 2, feats, &plan);
    assert!(g.value(out.features).data().iter().all(|&x| x == 0.0));
}

#[test]
fn reducer_on_64_points() {
    let cfg = ModelConfig {
        stem_dim: 8,
        stages: vec![StageConfig {
            out_dim: 8,
            heads: 2,
            ..Default::default()
        }],
        descriptor_dim: 8,
        encoder_heads: 2,
        ..Default::default()
    };
    let model = Model::new(cfg, 5).unwrap();
    let c = cloud(64, 6);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_reducer(&level, &model.config.stages[0], PairEncoding::Geometric).unwrap();
    assert_eq!(plan.selected.len(), 16);
    let mut rng = SeededRng::new(10);
    let input = Tensor::from_vec(&[64, 8], (0..512).map(|_| rng.normal()).collect());
    let r = model.layout.stages[0].reducer;
    let mut params = param_list(&model);
    params.push((String::from("input"), input));
    let f = |g: &mut Graph, vars: &[Var]| {
        let out = reducer_apply(g, vars, &r, 2, vars[vars.len() - 1], &plan);
        assert_eq!(g.shape(out.features), &[16, 8]);
        let sq = g.square(out.features);
        let w = g.constant(Tensor::from_vec(
            &[16, 8],
            (0..128).map(|i| ((i % 7) as f64 - 3.0) * 0.1).collect(),
        ));
        let t = g.mul(out.features, w);
        let a = g.sum(sq);
        let b = g.sum(t);
        g.add(a, b)
    };
    let report = grad_check(
        f,
        &params,
        GradCheckConfig {
            max_coords: Some(24),
            ..Default::default()
        },
    );
    assert!(report.passed(), "{report:?}");
}

#[test]
fn attention_columns_sum_to_one() {
    let model = Model::new(mini_config(), 7).unwrap();
    let c = cloud(8, 8);
    let plan = plan_points(&c.colors, &c.positions, &c.normals, &model.config).unwrap();
    let mut g = Graph::new();
    let vars = model.params.bind_frozen(&mut g);
    let trace = model.forward_traced(&mut g, &vars, &plan);
    for (r, _) in &trace.stages {
        let a = g.value(r.attention);
        let k = 4;
        for grp in 0..a.rows() / k {
            for h in 0..a.cols() {
                let s: f64 = (0..k).map(|j| a.row(grp * k + j)[h]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn eq3_single_pair() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::from_rows(&[[1.0]]));
    let init = g.constant(Tensor::from_rows(&[[0.0]]));
    let f = g.constant(Tensor::from_rows(&[[1.0]]));
    let c = cluster_aggregate(&mut g, s, init, f);
    assert_eq!(g.value(c).data(), &[0.5]);
}

#[test]
fn eq3_fixed_point() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::from_rows(&[[0.3, 0.9, 0.1]]));
    let init = g.constant(Tensor::from_rows(&[[0.25, -1.5]]));
    let f = g.constant(Tensor::from_rows(&[
        [0.25, -1.5],
        [0.25, -1.5],
        [0.25, -1.5],
    ]));
    let c = cluster_aggregate(&mut g, s, init, f);
    let v = g.value(c).data();
    assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] + 1.5).abs() < 1e-15);
}

#[test]
fn zero_dispatch_is_identity() {
    let model = Model::new(mini_config(), 11).unwrap();
    let c = cloud(8, 12);
    let level = Level::new(&c.positions, &c.normals);
    let plan = plan_cluster(&level, &model.config.stages[0]).unwrap();
    let mut g = Graph::new();
    let vars = model.params.bind(&mut g);
    let mut rng = SeededRng::new(13);
    let data: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
    let feats = g.constant(Tensor::from_vec(&[8, 4], data.clone()));
    let out = cluster_apply(&mut g, &vars, &model.layout.stages[0].cluster, feats, &plan);
    assert_eq!(g.value(out.features).data(), &data[..]);
}

#[test]
fn default_model_trace() {
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let c = cloud(2000, 14);
    let plan = plan_points(&c.colors, &c.positions, &c.normals, &model.config).unwrap();
    assert_eq!(plan.level_sizes(), vec![500, 125, 31, 7]);
    let d = model.descriptor(&plan);
    assert_eq!(d.len(), 256);
    let n: f64 = d.iter().map(|x| x * x).sum::<f64>();
    assert!((n.sqrt() - 1.0).abs() < 1e-6);
    assert_eq!(model.descriptor(&plan), d);
}

#[test]
fn single_point_encoder() {
    let model = Model::new(mini_config(), 15).unwrap();
    let level = Level::new(&[[0.1, 0.2, 0.3]], &[[0.0, 0.0, 1.0]]);
    let plan = plan_encoder(&level, PairEncoding::Geometric).unwrap();
    let mut g = Graph::new();
    let vars = model.params.bind_frozen(&mut g);
    let feats = g.constant(Tensor::from_rows(&[[3.0, 0.0, 4.0, 1.0]]));
    let out = encoder_apply(&mut g, &vars, &model.layout.encoder, 2, feats, &plan);
    // Oracle: psi = 1, gate = f4(g) per head, value = f3(normalized feature).
    let e = model.layout.encoder;
    let x = [
        3.0 / 26f64.sqrt(),
        0.0,
        4.0 / 26f64.sqrt(),
        1.0 / 26f64.sqrt(),
    ];
    let w3 = &model.params.get(e.f3.w).value;
    let b3 = &model.params.get(e.f3.b).value;
    let w4 = &model.params.get(e.f4.w).value;
    let b4 = &model.params.get(e.f4.b).value;
    let gvec = crate::geom::geom_encode(
        [0.1, 0.2, 0.3],
        [0.0, 0.0, 1.0],
        [0.1, 0.2, 0.3],
        [0.0, 0.0, 1.0],
    )
    .unwrap()
    .0;
    let mut v = [0.0; 4];
    for (j, vj) in v.iter_mut().enumerate() {
        let head = j / 2;
        let gate: f64 = b4.data()[head] + (0..8).map(|i| gvec[i] * w4.row(i)[head]).sum::<f64>();
        let val: f64 = b3.data()[j] + (0..4).map(|i| x[i] * w3.row(i)[j]).sum::<f64>();
        *vj = gate * val;
    }
    let l = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for (a, b) in g.value(out.features).data().iter().zip(v) {
        assert!((a - b / l).abs() < 1e-12);
    }
}

fn rotation(rng: &mut SeededRng) -> [[f64; 3]; 3] {
    let a = unit(rng);
    let mut b = unit(rng);
    let d = dot3(a, b);
    for i in 0..3 {
        b[i] -= d * a[i];
    }
    let b = scale3(b, 1.0 / norm3(b));
    let c = crate::math::cross3(a, b);
    [a, b, c]
}

fn apply(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [dot3(r[0], v), dot3(r[1], v), dot3(r[2], v)]
}

#[test]
fn rigid_motion_leaves_descriptor_unchanged_without_pose_channels() {
    let mut model = Model::new(ModelConfig::default(), 21).unwrap();
    // Position and normal channels both rotate with the frame.
    let stem_w = model.layout.stem.w;
    set(&mut model, stem_w, |i, j| {
        if i >= 3 {
            0.0
        } else {
            ((i * 31 + j * 17) % 13) as f64 * 0.05 - 0.3
        }
    });
    let c = cloud(2000, 22);
    let mut rng = SeededRng::new(23);
    let r = rotation(&mut rng);
    let t = [1.5, -0.7, 2.25];
    let moved: Vec<Vec3> = c
        .positions
        .iter()
        .map(|p| crate::math::add3(apply(&r, *p), t))
        .collect();
    let turned: Vec<Vec3> = c.normals.iter().map(|n| apply(&r, *n)).collect();
    let a =
        model.descriptor(&plan_points(&c.colors, &c.positions, &c.normals, &model.config).unwrap());
    let b = model.descriptor(&plan_points(&c.colors, &moved, &turned, &model.config).unwrap());
    let dev = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6, "deviation {dev}");
}

#[test]
fn random_init_separates_different_clouds() {
    let model = Model::new(ModelConfig::default(), 31).unwrap();
    let a = cloud(2000, 32);
    let b = cloud(2000, 33);
    let da =
        model.descriptor(&plan_points(&a.colors, &a.positions, &a.normals, &model.config).unwrap());
    let db =
        model.descriptor(&plan_points(&b.colors, &b.positions, &b.normals, &model.config).unwrap());
    let cos: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
    assert!(cos < 0.9999);
}

#[test]
fn missing_normals_is_a_contract_error() {
    let frame = crate::cloud::PointFrame {
        frame_id: "f".into(),
        scene_id: "s".into(),
        colors: vec![[0.5; 3]; 2000],
        positions: (0..2000).map(|i| [i as f32 * 0.01, 0.0, 0.0]).collect(),
        normals: None,
        pose_translation: [0.0; 3],
    };
    let err = plan_frame(&frame, &ModelConfig::default()).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn checkpoint_layout_must_match() {
    let a = Model::new(mini_config(), 1).unwrap();
    let b = Model::from_params(mini_config(), a.params.clone()).unwrap();
    assert_eq!(a, b);
    assert!(Model::from_params(ModelConfig::default(), a.params).is_err());
}

#[test]
fn miniature_pipeline_gradients() {
    let mut model = Model::new(mini_config(), 41).unwrap();
    randomize_dispatch(&mut model, 42);
    let plans: Vec<FramePlan> = (0..3)
        .map(|i| {
            let c = cloud(8, 50 + i);
            plan_points(&c.colors, &c.positions, &c.normals, &model.config).unwrap()
        })
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
    let report = grad_check(f, &param_list(&model), GradCheckConfig::default());
    assert!(report.passed(), "{report:?}");
}
