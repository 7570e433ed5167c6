use poco_core::diag::Diagnostics;
use poco_core::diffcore::LrSchedule;
use poco_core::geom::geom_encode;
use poco_core::loss::{
    circle_loss_value, metric_convert, triplet_from_distances, CircleConfig, TripletConfig,
};
use poco_core::retrieve::{query, DescriptorIndex, IndexEntry};
use poco_core::sampling::{fps, knn};
use proptest::prelude::*;

type V3 = [f64; 3];

fn unit(v: V3) -> V3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn vec3(r: f64) -> impl Strategy<Value = V3> {
    [-r..r, -r..r, -r..r]
}

fn dir() -> impl Strategy<Value = V3> {
    vec3(1.0)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(unit)
}

/// Rotation matrix of a unit quaternion built from four free components.
fn rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn apply(r: &[[f64; 3]; 3], v: V3) -> V3 {
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

fn quat() -> impl Strategy<Value = [f64; 4]> {
    [-1.0..1.0f64, -1.0..1.0, -1.0..1.0, -1.0..1.0]
        .prop_filter("nonzero", |q| q.iter().map(|x| x * x).sum::<f64>() > 1e-2)
}

fn d2(a: V3, b: V3) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Textbook greedy farthest point sampling with the same start rule.
fn fps_oracle(pts: &[V3], m: usize) -> Vec<usize> {
    let n = pts.len() as f64;
    let c = [0, 1, 2].map(|a| pts.iter().map(|p| p[a]).sum::<f64>() / n);
    let mut start = 0;
    for i in 1..pts.len() {
        if d2(pts[i], c) < d2(pts[start], c) {
            start = i;
        }
    }
    let mut sel = vec![start];
    while sel.len() < m {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..pts.len() {
            if sel.contains(&i) {
                continue;
            }
            let d = sel
                .iter()
                .map(|&j| d2(pts[i], pts[j]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        sel.push(best.unwrap());
    }
    sel
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn geom_is_rigid_motion_invariant(
        p in vec3(3.0), pk in vec3(3.0), n in dir(), nk in dir(), q in quat(), t in vec3(10.0)
    ) {
        let r = rotation(q);
        let mv = |v: V3| { let x = apply(&r, v); [x[0] + t[0], x[1] + t[1], x[2] + t[2]] };
        let a = geom_encode(p, n, pk, nk).unwrap();
        let b = geom_encode(mv(p), apply(&r, n), mv(pk), apply(&r, nk)).unwrap();
        for i in 0..8 {
            prop_assert!((a.0[i] - b.0[i]).abs() <= 1e-9, "component {i}: {} vs {}", a.0[i], b.0[i]);
        }
    }

    #[test]
    fn fps_matches_greedy_oracle(pts in prop::collection::vec(vec3(5.0), 1..48), frac in 0.0..1.0f64) {
        let m = 1 + ((pts.len() - 1) as f64 * frac) as usize;
        prop_assert_eq!(fps(&pts, m).unwrap().indices, fps_oracle(&pts, m));
    }

    #[test]
    fn knn_matches_full_sort(
        refs in prop::collection::vec(vec3(5.0), 1..80),
        qs in prop::collection::vec(vec3(5.0), 1..6),
        frac in 0.0..1.0f64,
    ) {
        let k = 1 + ((refs.len() - 1) as f64 * frac) as usize;
        let nl = knn(&qs, &refs, k).unwrap();
        for (qi, q) in qs.iter().enumerate() {
            let mut all: Vec<(f64, u32)> = refs.iter().enumerate().map(|(i, r)| (d2(*q, *r), i as u32)).collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<u32> = all[..k].iter().map(|x| x.1).collect();
            prop_assert_eq!(nl.of(qi), &want[..]);
        }
    }

    #[test]
    fn circle_loss_ignores_list_order(
        sp in prop::collection::vec(-1.0..1.0f64, 1..6),
        sn in prop::collection::vec(-1.0..1.0f64, 1..6),
        rot in 0usize..6,
    ) {
        let cfg = CircleConfig::default();
        let a = circle_loss_value(&sp, &sn, &cfg).unwrap();
        let mut sp2 = sp.clone();
        let mut sn2 = sn.clone();
        sp2.reverse();
        let r = rot % sn2.len();
        sn2.rotate_left(r);
        let b = circle_loss_value(&sp2, &sn2, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn circle_loss_monotone_on_unit_interval(sp in 0.0..1.0f64, sn in 0.0..1.0f64, d in 1e-3..0.1f64) {
        let cfg = CircleConfig::default();
        let base = circle_loss_value(&[sp], &[sn], &cfg).unwrap();
        let up_p = circle_loss_value(&[(sp + d).min(1.0)], &[sn], &cfg).unwrap();
        let up_n = circle_loss_value(&[sp], &[(sn + d).min(1.0)], &cfg).unwrap();
        prop_assert!(up_p <= base + 1e-15);
        prop_assert!(up_n >= base - 1e-15);
    }

    #[test]
    fn triplet_zero_exactly_when_margin_met(dp in 0.0..4.0f64, dn in 0.0..4.0f64) {
        let cfg = TripletConfig::default();
        let l = triplet_from_distances(dp, dn, &cfg);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, dn >= dp + cfg.m);
    }

    #[test]
    fn metric_convert_matches_squared_distance(a in dir(), b in dir()) {
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        prop_assert!((metric_convert(cos) - d2(a, b)).abs() <= 1e-12);
    }

    #[test]
    fn lr_is_non_increasing(total in 1u64..5000, lo in 1e-8..1e-5f64, hi in 1e-5..1e-2f64) {
        let s = LrSchedule { lr_max: hi, lr_min: lo, total_steps: total };
        let mut d = Diagnostics::default();
        let mut prev = f64::INFINITY;
        for step in 0..=total.min(400) {
            let step = step * total / total.min(400);
            let lr = s.lr_at(step, &mut d);
            prop_assert!(lr <= prev && lr >= lo && lr <= hi);
            prev = lr;
        }
        prop_assert_eq!(d.lr_step_clamped, 0);
    }

    #[test]
    fn query_order_ignores_entry_order(
        descs in prop::collection::vec(prop::collection::vec(-2i8..3, 4), 2..20),
        q in prop::collection::vec(-2i8..3, 4),
        shift in 0usize..20,
    ) {
        // Small integer components make exact similarity ties common.
        let norm = |v: &[i8]| -> Vec<f64> {
            let v: Vec<f64> = v.iter().map(|&x| x as f64 + 0.5).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        };
        let entries: Vec<IndexEntry> = descs
            .iter()
            .enumerate()
            .map(|(i, d)| IndexEntry::new(format!("f{i:02}"), "s", [0.0; 3], &norm(d)))
            .collect();
        let mut rotated = entries.clone();
        let r = shift % rotated.len();
        rotated.rotate_left(r);
        let mut diag = Diagnostics::default();
        let qd = norm(&q);
        let a = query(&DescriptorIndex::new(4, entries).unwrap(), "q", &qd, 5, &mut diag).unwrap();
        let b = query(&DescriptorIndex::new(4, rotated).unwrap(), "q", &qd, 5, &mut diag).unwrap();
        prop_assert_eq!(a, b);
    }
}
