use super::{MotionError, Vec3};

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rodrigues' formula for an axis-angle vector (radians).
pub fn axis_angle_to_matrix(v: Vec3) -> Mat3 {
    let angle = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if angle < 1e-12 {
        return IDENTITY;
    }
    let [x, y, z] = [v[0] / angle, v[1] / angle, v[2] / angle];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Inverse of [`axis_angle_to_matrix`] for proper rotations.
pub fn matrix_to_axis_angle(r: &Mat3) -> Vec3 {
    let cos = ((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-12 {
        return [0.0; 3];
    }
    if (std::f64::consts::PI - angle).abs() < 1e-6 {
        // Near pi the antisymmetric part vanishes; read the axis off the diagonal.
        let xx = ((r[0][0] + 1.0) / 2.0).max(0.0).sqrt();
        let yy = ((r[1][1] + 1.0) / 2.0).max(0.0).sqrt();
        let zz = ((r[2][2] + 1.0) / 2.0).max(0.0).sqrt();
        let mut axis = [xx, yy, zz];
        if xx >= yy && xx >= zz {
            axis[1] = axis[1].copysign(r[0][1]);
            axis[2] = axis[2].copysign(r[0][2]);
        } else if yy >= zz {
            axis[0] = axis[0].copysign(r[0][1]);
            axis[2] = axis[2].copysign(r[1][2]);
        } else {
            axis[0] = axis[0].copysign(r[0][2]);
            axis[1] = axis[1].copysign(r[1][2]);
        }
        return [axis[0] * angle, axis[1] * angle, axis[2] * angle];
    }
    let k = angle / (2.0 * angle.sin());
    [
        (r[2][1] - r[1][2]) * k,
        (r[0][2] - r[2][0]) * k,
        (r[1][0] - r[0][1]) * k,
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Heading angle of a rotation: direction of the rotated +X axis in the
/// ground plane.
pub fn heading(r: &Mat3) -> f64 {
    r[1][0].atan2(r[0][0])
}

/// Rotates `(x, y)` by `yaw` about +Z.
pub fn rotate_z(yaw: f64, v: Vec3) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Joint hierarchy with rest offsets in metres (Z-up, right-handed).
///
/// Parents always precede their children, so a single forward pass over
/// joint indices evaluates the kinematic chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<String>,
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
    feet: Option<[usize; 2]>,
}

impl Skeleton {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<Vec3>,
        feet: Option<[usize; 2]>,
    ) -> Result<Self, MotionError> {
        let j = parents.len();
        if j == 0 || names.len() != j || offsets.len() != j {
            return Err(MotionError::MalformedTree("joint arrays disagree in length".into()));
        }
        if parents[0].is_some() {
            return Err(MotionError::MalformedTree("joint 0 must be the root".into()));
        }
        for (i, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                Some(p) => {
                    return Err(MotionError::MalformedTree(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                None => {
                    return Err(MotionError::MalformedTree(format!("joint {i} has no parent")))
                }
            }
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MotionError::MalformedTree("non-finite offset".into()));
        }
        if let Some(f) = feet {
            if f.iter().any(|&x| x >= j) {
                return Err(MotionError::MalformedTree("foot index out of range".into()));
            }
        }
        Ok(Self {
            names,
            parents,
            offsets,
            feet,
        })
    }

    /// Eight-joint toy body: pelvis, spine, head, two hip→foot legs and a
    /// hand marker carried by the spine. Standing pelvis height is 0.9 m.
    pub fn default_chain() -> Self {
        let names = [
            "pelvis",
            "spine",
            "head",
            "left_hip",
            "left_foot",
            "right_hip",
            "right_foot",
            "hand",
        ];
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            vec![None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5), Some(1)],
            vec![
                [0.0, 0.0, 0.0],
                [0.0, 0.0, 0.3],
                [0.0, 0.0, 0.35],
                [0.0, 0.1, 0.0],
                [0.0, 0.0, -0.9],
                [0.0, -0.1, 0.0],
                [0.0, 0.0, -0.9],
                [0.1, -0.25, 0.2],
            ],
            Some([4, 6]),
        )
        .expect("default skeleton is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parents[j]
    }

    pub fn offset(&self, j: usize) -> Vec3 {
        self.offsets[j]
    }

    pub fn feet(&self) -> Result<[usize; 2], MotionError> {
        self.feet.ok_or(MotionError::NoFeet)
    }

    /// World joint positions for one frame. `theta[0]` is the global root
    /// orientation; the rest are relative to the parent.
    pub fn forward_kinematics(&self, translation: Vec3, theta: &[Vec3]) -> Result<Vec<Vec3>, MotionError> {
        Ok(self.forward_kinematics_full(translation, theta)?.0)
    }

    /// Positions plus world rotation of every joint.
    pub fn forward_kinematics_full(
        &self,
        translation: Vec3,
        theta: &[Vec3],
    ) -> Result<(Vec<Vec3>, Vec<Mat3>), MotionError> {
        let j = self.num_joints();
        if theta.len() != j {
            return Err(MotionError::JointCount {
                expected: j,
                got: theta.len(),
            });
        }
        let mut pos = vec![[0.0; 3]; j];
        let mut rot = vec![IDENTITY; j];
        pos[0] = translation;
        rot[0] = axis_angle_to_matrix(theta[0]);
        for i in 1..j {
            let p = self.parents[i].expect("validated");
            pos[i] = add(pos[p], mat_vec(&rot[p], self.offsets[i]));
            rot[i] = mat_mul(&rot[p], &axis_angle_to_matrix(theta[i]));
        }
        Ok((pos, rot))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        dist(a, b) <= tol
    }

    #[test]
    fn zero_pose_accumulates_rest_offsets() {
        let sk = Skeleton::default_chain();
        let p = sk.forward_kinematics([0.0; 3], &[[0.0; 3]; 8]).unwrap();
        assert!(close(p[2], [0.0, 0.0, 0.65], 1e-15));
        assert!(close(p[4], [0.0, 0.1, -0.9], 1e-15));
        assert!(close(p[7], [0.1, -0.25, 0.5], 1e-15));
    }

    #[test]
    fn translation_shifts_every_joint() {
        let sk = Skeleton::default_chain();
        let a = sk.forward_kinematics([0.0; 3], &[[0.0; 3]; 8]).unwrap();
        let b = sk.forward_kinematics([1.0, 0.0, 0.0], &[[0.0; 3]; 8]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(close(add(*x, [1.0, 0.0, 0.0]), *y, 1e-15));
        }
    }

    #[test]
    fn root_yaw_quarter_turn() {
        // Chain root -> child at (1, 0, 0); yaw +90 deg maps it to (0, 1, 0) + T.
        let sk = Skeleton::new(
            vec!["root".into(), "tip".into()],
            vec![None, Some(0)],
            vec![[0.0; 3], [1.0, 0.0, 0.0]],
            None,
        )
        .unwrap();
        let t = [2.0, -1.0, 0.5];
        let p = sk.forward_kinematics(t, &[[0.0, 0.0, FRAC_PI_2], [0.0; 3]]).unwrap();
        // Rz(90) = [[0,-1,0],[1,0,0],[0,0,1]] applied to (1,0,0) is (0,1,0).
        assert!(close(p[1], [2.0, 0.0, 0.5], 1e-12));
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let bad = Skeleton::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(1)],
            vec![[0.0; 3]; 2],
            None,
        );
        assert!(matches!(bad, Err(MotionError::MalformedTree(_))));
        let bad = Skeleton::new(vec!["a".into()], vec![Some(0)], vec![[0.0; 3]], None);
        assert!(bad.is_err());
    }

    #[test]
    fn axis_angle_round_trip() {
        for v in [[0.3, -0.2, 0.9], [0.0, 0.0, 3.0], [1e-3, 0.0, 0.0], [0.0, 3.1415, 0.0]] {
            let r = axis_angle_to_matrix(v);
            let back = matrix_to_axis_angle(&r);
            let r2 = axis_angle_to_matrix(back);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r[i][j] - r2[i][j]).abs() < 1e-6, "{v:?}");
                }
            }
        }
    }
}
