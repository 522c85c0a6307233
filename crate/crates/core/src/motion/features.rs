use serde::{Deserialize, Serialize};

use super::skeleton::{rotate_z, sub, Skeleton};
use super::{MotionError, MotionSequence, Vec3};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYOUT_NAME: &str = "hml-lite-v1";

/// Column offsets of the `hml-lite-v1` per-frame feature vector.
///
/// | cols            | field                                        |
/// |-----------------|----------------------------------------------|
/// | 0               | root yaw angular velocity (rad/frame)        |
/// | 1..3            | root planar velocity in the heading frame    |
/// | 3               | root height                                  |
/// | 4..4+3(J-1)     | joints 1..J-1 relative to root, heading frame|
/// | ..+3J           | joint velocities, heading frame              |
/// | last 2          | left/right foot contact flags                |
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub num_joints: usize,
}

impl FeatureLayout {
    pub const YAW_VEL: usize = 0;
    pub const ROOT_VEL: usize = 1;
    pub const ROOT_HEIGHT: usize = 3;
    pub const LOCAL: usize = 4;

    pub fn new(num_joints: usize) -> Self {
        Self { num_joints }
    }

    pub fn dim(&self) -> usize {
        6 * self.num_joints + 3
    }

    pub fn local(&self) -> usize {
        Self::LOCAL
    }

    pub fn joint_vel(&self) -> usize {
        Self::LOCAL + 3 * (self.num_joints - 1)
    }

    pub fn contacts(&self) -> usize {
        self.joint_vel() + 3 * self.num_joints
    }

    /// Infers the joint count from a feature width.
    pub fn from_dim(d: usize) -> Result<Self, MotionError> {
        if d < 9 || (d - 3) % 6 != 0 {
            return Err(MotionError::FeatureWidth {
                expected: None,
                got: d,
            });
        }
        Ok(Self::new((d - 3) / 6))
    }
}

/// Initial root position and heading needed to integrate velocities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootState {
    pub pos: Vec3,
    pub yaw: f64,
}

impl Default for RootState {
    fn default() -> Self {
        Self {
            pos: [0.0; 3],
            yaw: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactThresholds {
    /// Metres per frame.
    pub velocity: f64,
    pub height: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self {
            velocity: 0.05,
            height: 0.08,
        }
    }
}

/// Root trajectory and world joint positions recovered from features.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub root: Vec<Vec3>,
    pub yaw: Vec<f64>,
    pub joints: Vec<Vec<Vec3>>,
}

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}

/// Forward difference of a per-frame sequence; the last frame repeats the
/// previous difference.
fn forward_diff<T: Copy>(n: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    (0..n)
        .map(|i| if i + 1 < n { f(i, i + 1) } else { f(i - 1, i) })
        .collect()
}

/// Per-frame foot flags (left, right): set iff the foot's speed and height
/// are both at or below their thresholds.
pub fn foot_contact_flags(
    skeleton: &Skeleton,
    joints: &[Vec<Vec3>],
    thresholds: ContactThresholds,
) -> Result<Vec<[bool; 2]>, MotionError> {
    let feet = skeleton.feet()?;
    if !(thresholds.velocity > 0.0 && thresholds.height > 0.0) {
        return Err(MotionError::Invalid("contact thresholds must be positive".into()));
    }
    let n = joints.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let speed = |f: usize, i: usize| -> f64 {
        if n < 2 {
            return 0.0;
        }
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        super::skeleton::dist(joints[b][f], joints[a][f])
    };
    Ok((0..n)
        .map(|i| {
            feet.map(|f| speed(f, i) <= thresholds.velocity && joints[i][f][2] <= thresholds.height)
        })
        .collect())
}

/// Encodes a motion into its `N × (6J+3)` feature matrix and the root state
/// needed to decode it.
pub fn encode_features(
    skeleton: &Skeleton,
    motion: &MotionSequence,
    thresholds: ContactThresholds,
) -> Result<(Tensor, RootState), MotionError> {
    let n = motion.num_frames();
    if n < 2 {
        return Err(MotionError::TooFewFrames(n));
    }
    let j = skeleton.num_joints();
    let layout = FeatureLayout::new(j);
    let mut joints = Vec::with_capacity(n);
    let mut yaw = Vec::with_capacity(n);
    for f in 0..n {
        let (p, r) = skeleton.forward_kinematics_full(motion.translations[f], &motion.rotations[f])?;
        joints.push(p);
        yaw.push(super::skeleton::heading(&r[0]));
    }
    let contacts = foot_contact_flags(skeleton, &joints, thresholds)?;
    let omega = forward_diff(n, |a, b| wrap_angle(yaw[b] - yaw[a]));
    let root_vel = forward_diff(n, |a, b| sub(joints[b][0], joints[a][0]));

    let d = layout.dim();
    let mut data = vec![0.0; n * d];
    for f in 0..n {
        let row = &mut data[f * d..(f + 1) * d];
        let inv = -yaw[f];
        row[FeatureLayout::YAW_VEL] = omega[f];
        let v = rotate_z(inv, root_vel[f]);
        row[FeatureLayout::ROOT_VEL] = v[0];
        row[FeatureLayout::ROOT_VEL + 1] = v[1];
        row[FeatureLayout::ROOT_HEIGHT] = joints[f][0][2];
        for k in 1..j {
            let l = rotate_z(inv, sub(joints[f][k], joints[f][0]));
            row[layout.local() + 3 * (k - 1)..layout.local() + 3 * k].copy_from_slice(&l);
        }
        let (a, b) = if f + 1 < n { (f, f + 1) } else { (f - 1, f) };
        for k in 0..j {
            let v = rotate_z(inv, sub(joints[b][k], joints[a][k]));
            row[layout.joint_vel() + 3 * k..layout.joint_vel() + 3 * k + 3].copy_from_slice(&v);
        }
        row[layout.contacts()] = f64::from(u8::from(contacts[f][0]));
        row[layout.contacts() + 1] = f64::from(u8::from(contacts[f][1]));
    }
    let root = RootState {
        pos: joints[0][0],
        yaw: yaw[0],
    };
    Ok((Tensor::matrix(n, d, data), root))
}

/// Integrates velocities from `root` and places local joints in the world.
///
/// Uses only yaw velocity, planar velocity, height and local positions; the
/// redundant joint-velocity and contact fields are ignored.
pub fn decode_features(features: &Tensor, root: RootState) -> Result<Decoded, MotionError> {
    let layout = FeatureLayout::from_dim(features.cols())?;
    let n = features.rows();
    let j = layout.num_joints;
    let mut yaw = Vec::with_capacity(n);
    let mut roots: Vec<Vec3> = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    let (mut cur_yaw, mut x, mut y) = (root.yaw, root.pos[0], root.pos[1]);
    for f in 0..n {
        let row = features.row_slice(f);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MotionError::Invalid(format!("non-finite feature in frame {f}")));
        }
        let r = [x, y, row[FeatureLayout::ROOT_HEIGHT]];
        let mut frame = Vec::with_capacity(j);
        frame.push(r);
        for k in 1..j {
            let o = layout.local() + 3 * (k - 1);
            let w = rotate_z(cur_yaw, [row[o], row[o + 1], row[o + 2]]);
            frame.push([r[0] + w[0], r[1] + w[1], r[2] + w[2]]);
        }
        roots.push(r);
        yaw.push(cur_yaw);
        joints.push(frame);
        let v = rotate_z(cur_yaw, [row[FeatureLayout::ROOT_VEL], row[FeatureLayout::ROOT_VEL + 1], 0.0]);
        x += v[0];
        y += v[1];
        cur_yaw += row[FeatureLayout::YAW_VEL];
    }
    Ok(Decoded {
        root: roots,
        yaw,
        joints,
    })
}

/// World joint coordinates as three `N × J` tape variables.
#[derive(Clone, Copy, Debug)]
pub struct JointVars {
    pub x: Var,
    pub y: Var,
    pub z: Var,
}

/// Differentiable twin of [`decode_features`]: `features` is an `N × d`
/// variable in raw (un-normalized) units.
pub fn decode_on_tape(tape: &mut Tape, features: Var, root: RootState, layout: FeatureLayout) -> JointVars {
    let (n, d) = tape.shape(features);
    assert_eq!(d, layout.dim(), "feature width");
    let j = layout.num_joints;
    // Strictly lower-triangular ones: prefix sums that exclude the current frame.
    let mut s = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..r {
            s[r * n + c] = 1.0;
        }
    }
    let prefix = tape.constant(Tensor::matrix(n, n, s));
    let select = |tape: &mut Tape, axis: usize| -> Var {
        let mut m = vec![0.0; d * (j - 1)];
        for k in 0..j - 1 {
            m[(layout.local() + 3 * k + axis) * (j - 1) + k] = 1.0;
        }
        let sel = tape.constant(Tensor::matrix(d, j - 1, m));
        tape.matmul(features, sel)
    };

    let omega = tape.slice_cols(features, 0, 1);
    let yaw = tape.matmul(prefix, omega);
    let yaw0 = tape.constant(Tensor::scalar(root.yaw));
    let yaw = tape.add_row(yaw, yaw0);
    let (c, s) = (tape.cos(yaw), tape.sin(yaw));

    let vx = tape.slice_cols(features, 1, 2);
    let vy = tape.slice_cols(features, 2, 3);
    let (cvx, svy) = (tape.mul(c, vx), tape.mul(s, vy));
    let (svx, cvy) = (tape.mul(s, vx), tape.mul(c, vy));
    let dx = tape.sub(cvx, svy);
    let dy = tape.add(svx, cvy);
    let rx = tape.matmul(prefix, dx);
    let x0 = tape.constant(Tensor::scalar(root.pos[0]));
    let rx = tape.add_row(rx, x0);
    let ry = tape.matmul(prefix, dy);
    let y0 = tape.constant(Tensor::scalar(root.pos[1]));
    let ry = tape.add_row(ry, y0);
    let rz = tape.slice_cols(features, 3, 4);
    if j == 1 {
        return JointVars { x: rx, y: ry, z: rz };
    }

    let (lx, ly, lz) = (select(tape, 0), select(tape, 1), select(tape, 2));
    let (clx, sly) = (tape.mul_col(lx, c), tape.mul_col(ly, s));
    let (slx, cly) = (tape.mul_col(lx, s), tape.mul_col(ly, c));
    let wx = tape.sub(clx, sly);
    let wx = tape.add_col(wx, rx);
    let wy = tape.add(slx, cly);
    let wy = tape.add_col(wy, ry);
    let wz = tape.add_col(lz, rz);
    JointVars {
        x: tape.concat_cols(&[rx, wx]),
        y: tape.concat_cols(&[ry, wy]),
        z: tape.concat_cols(&[rz, wz]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk(n: usize, speed: f64) -> MotionSequence {
        MotionSequence::new(
            10,
            (0..n).map(|i| [speed * i as f64 / 10.0, 0.0, 0.9]).collect(),
            vec![vec![[0.0; 3]; 8]; n],
        )
        .unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = FeatureLayout::new(8);
        assert_eq!(l.dim(), 51);
        assert_eq!(l.joint_vel(), 25);
        assert_eq!(l.contacts(), 49);
        assert_eq!(FeatureLayout::from_dim(51).unwrap(), l);
        assert!(FeatureLayout::from_dim(50).is_err());
    }

    #[test]
    fn standing_still_has_zero_velocities() {
        let sk = Skeleton::default_chain();
        let (f, _) = encode_features(&sk, &walk(5, 0.0), ContactThresholds::default()).unwrap();
        let l = FeatureLayout::new(8);
        for r in 0..5 {
            let row = f.row_slice(r);
            assert_eq!(&row[0..3], &[0.0; 3]);
            assert_eq!(row[3], 0.9);
            assert!(row[l.joint_vel()..l.contacts()].iter().all(|&v| v == 0.0));
            assert_eq!(&row[l.contacts()..], &[1.0, 1.0]);
        }
    }

    #[test]
    fn straight_walk_velocity() {
        let sk = Skeleton::default_chain();
        let (f, root) = encode_features(&sk, &walk(6, 1.0), ContactThresholds::default()).unwrap();
        for r in 0..6 {
            assert!((f.get(r, 1) - 0.1).abs() < 1e-12);
            assert_eq!(f.get(r, 2), 0.0);
        }
        assert_eq!(root.yaw, 0.0);
    }

    #[test]
    fn too_few_frames() {
        let sk = Skeleton::default_chain();
        let err = encode_features(&sk, &walk(1, 0.0), ContactThresholds::default());
        assert!(matches!(err, Err(MotionError::TooFewFrames(1))));
    }

    #[test]
    fn contact_flags_jump_and_boundary() {
        let sk = Skeleton::default_chain();
        let mut frames = vec![vec![[0.0; 3]; 8]; 3];
        frames[1][4] = [0.0, 0.0, 0.5];
        let flags = foot_contact_flags(&sk, &frames, ContactThresholds::default()).unwrap();
        assert_eq!(flags[1][0], false);
        assert_eq!(flags[2][1], true);

        let mut frames = vec![vec![[0.0; 3]; 8]; 2];
        frames[1][6] = [0.03, 0.04, 0.08];
        let speed = (0.03f64 * 0.03 + 0.04 * 0.04 + 0.08 * 0.08).sqrt();
        let t = ContactThresholds {
            velocity: speed,
            height: 0.08,
        };
        let flags = foot_contact_flags(&sk, &frames, t).unwrap();
        assert_eq!(flags[1][1], true);
        let tighter = ContactThresholds {
            velocity: speed * (1.0 - 1e-12),
            height: 0.08,
        };
        assert_eq!(foot_contact_flags(&sk, &frames, tighter).unwrap()[1][1], false);
    }

    #[test]
    fn no_feet_is_an_error() {
        let sk = Skeleton::new(vec!["r".into()], vec![None], vec![[0.0; 3]], None).unwrap();
        let r = foot_contact_flags(&sk, &[vec![[0.0; 3]]], ContactThresholds::default());
        assert!(matches!(r, Err(MotionError::NoFeet)));
    }
}
