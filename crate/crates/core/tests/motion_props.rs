use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use stmd::motion::{
    decode_features, decode_on_tape, encode_features, ContactThresholds, FeatureLayout, MotionSequence, Skeleton,
    Vec3,
};
use stmd::tensor::gradcheck::check;
use stmd::tensor::nn::ParamStore;
use stmd::tensor::Tape;

/// Independent FK: nalgebra rotations, explicit parent walk.
fn oracle_fk(sk: &Skeleton, t: Vec3, theta: &[Vec3]) -> Vec<Vec3> {
    let j = sk.num_joints();
    let mut rot = vec![Rotation3::identity(); j];
    let mut pos = vec![Vector3::from(t); j];
    for i in 0..j {
        let local = Rotation3::from_scaled_axis(Vector3::from(theta[i]));
        match sk.parent(i) {
            None => rot[i] = local,
            Some(p) => {
                pos[i] = pos[p] + rot[p] * Vector3::from(sk.offset(i));
                rot[i] = rot[p] * local;
            }
        }
    }
    pos.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    [-r..r, -r..r, -r..r]
}

fn motion(max_frames: usize) -> impl Strategy<Value = MotionSequence> {
    (2..max_frames).prop_flat_map(|n| {
        (
            prop::collection::vec(vec3(2.0), n),
            prop::collection::vec(prop::collection::vec(vec3(1.5), 8), n),
        )
            .prop_map(|(t, r)| MotionSequence::new(10, t, r).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fk_is_rigid_under_global_transforms(
        t in vec3(3.0),
        theta in prop::collection::vec(vec3(2.0), 8),
        axis in vec3(2.0),
        v in vec3(3.0),
    ) {
        let sk = Skeleton::default_chain();
        let g = Rotation3::from_scaled_axis(Vector3::from(axis));
        let base = sk.forward_kinematics(t, &theta).unwrap();
        let t2 = g * Vector3::from(t) + Vector3::from(v);
        let root = g * Rotation3::from_scaled_axis(Vector3::from(theta[0]));
        let mut theta2 = theta.clone();
        let ra = root.scaled_axis();
        theta2[0] = [ra.x, ra.y, ra.z];
        let moved = sk.forward_kinematics([t2.x, t2.y, t2.z], &theta2).unwrap();
        for (p, q) in base.iter().zip(&moved) {
            let expect = g * Vector3::from(*p) + Vector3::from(v);
            prop_assert!((expect - Vector3::from(*q)).norm() < 1e-9);
        }
    }

    #[test]
    fn markers_match_per_frame_oracle(m in motion(8)) {
        let sk = Skeleton::default_chain();
        let markers = m.markers(&sk).unwrap();
        for f in 0..m.num_frames() {
            let o = oracle_fk(&sk, m.translations[f], &m.rotations[f]);
            for (a, b) in markers[f].iter().zip(&o) {
                prop_assert!((Vector3::from(*a) - Vector3::from(*b)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_decode_round_trip(m in motion(24)) {
        let sk = Skeleton::default_chain();
        let (features, root) = encode_features(&sk, &m, ContactThresholds::default()).unwrap();
        prop_assert!(features.is_finite());
        let decoded = decode_features(&features, root).unwrap();
        let markers = m.markers(&sk).unwrap();
        let mut worst = 0.0f64;
        for f in 0..m.num_frames() {
            for (a, b) in decoded.joints[f].iter().zip(&markers[f]) {
                worst = worst.max((Vector3::from(*a) - Vector3::from(*b)).norm());
            }
        }
        prop_assert!(worst < 1e-6, "round trip error {worst}");
    }

    #[test]
    fn tape_decode_matches_plain_decode(m in motion(12)) {
        let sk = Skeleton::default_chain();
        let (features, root) = encode_features(&sk, &m, ContactThresholds::default()).unwrap();
        let plain = decode_features(&features, root).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let jv = decode_on_tape(&mut tape, x, root, FeatureLayout::new(8));
        for f in 0..m.num_frames() {
            for k in 0..8 {
                let p = plain.joints[f][k];
                prop_assert!((tape.value(jv.x).get(f, k) - p[0]).abs() < 1e-9);
                prop_assert!((tape.value(jv.y).get(f, k) - p[1]).abs() < 1e-9);
                prop_assert!((tape.value(jv.z).get(f, k) - p[2]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn tape_decode_gradient_matches_finite_differences() {
    let sk = Skeleton::default_chain();
    let m = MotionSequence::new(
        10,
        (0..5).map(|i| [0.1 * i as f64, 0.05 * i as f64, 0.9]).collect(),
        (0..5)
            .map(|i| {
                let mut r = vec![[0.1, -0.2, 0.3 * i as f64]];
                r.extend((1..8).map(|k| [0.05 * k as f64, 0.1, -0.02 * i as f64]));
                r
            })
            .collect(),
    )
    .unwrap();
    let (features, root) = encode_features(&sk, &m, ContactThresholds::default()).unwrap();
    let mut store = ParamStore::new();
    let id = store.add("features", features);
    let report = check(
        &store,
        |t| {
            let x = t.param(id);
            let jv = decode_on_tape(t, x, root, FeatureLayout::new(8));
            let a = t.mul(jv.x, jv.y);
            let b = t.sin(jv.z);
            let s = t.add(a, b);
            t.sum(s)
        },
        80,
        3,
    )
    .unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}
