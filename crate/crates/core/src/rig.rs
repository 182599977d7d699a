//! Gaussian-ellipsoid joints, per-frame pose tables and skinning weights.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dualquat::{check_rotation, dq_from_pose7, DualQuaternion, Quaternion, ORTHONORMAL_TOL};
use crate::{Error, Mat3, Result, Vec3};

/// Default number of joints.
pub const DEFAULT_JOINTS: usize = 25;

/// A joint modelled as a Gaussian ellipsoid with center `O`, orientation `V`
/// and diagonal precision `Λ⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub struct Joint {
    center: Vec3,
    orientation: Mat3,
    precision: Vec3,
}

#[derive(Serialize, Deserialize)]
struct JointRepr {
    center: [f64; 3],
    orientation: [f64; 9],
    precision: [f64; 3],
}

impl TryFrom<JointRepr> for Joint {
    type Error = Error;
    fn try_from(r: JointRepr) -> Result<Self> {
        Joint::new(
            crate::vec3(r.center),
            Mat3::from_row_slice(&r.orientation),
            crate::vec3(r.precision),
        )
    }
}

impl From<Joint> for JointRepr {
    fn from(j: Joint) -> Self {
        let o = j.orientation;
        JointRepr {
            center: crate::arr3(&j.center),
            orientation: [
                o[(0, 0)],
                o[(0, 1)],
                o[(0, 2)],
                o[(1, 0)],
                o[(1, 1)],
                o[(1, 2)],
                o[(2, 0)],
                o[(2, 1)],
                o[(2, 2)],
            ],
            precision: crate::arr3(&j.precision),
        }
    }
}

impl Joint {
    pub fn new(center: Vec3, orientation: Mat3, precision: Vec3) -> Result<Self> {
        check_rotation(&orientation, ORTHONORMAL_TOL)?;
        if precision.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Parameter(format!(
                "joint precision must be positive, got {:?}",
                crate::arr3(&precision)
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("joint center must be finite".into()));
        }
        Ok(Joint { center, orientation, precision })
    }

    pub fn isotropic(center: Vec3, precision: f64) -> Result<Self> {
        Joint::new(center, Mat3::identity(), Vec3::repeat(precision))
    }

    pub fn center(&self) -> &Vec3 {
        &self.center
    }

    pub fn orientation(&self) -> &Mat3 {
        &self.orientation
    }

    pub fn precision(&self) -> &Vec3 {
        &self.precision
    }

    /// `(p−O)ᵀ Vᵀ Λ⁰ V (p−O)`.
    pub fn mahalanobis(&self, p: &Vec3) -> f64 {
        let v = self.orientation * (p - self.center);
        self.precision.x * v.x * v.x + self.precision.y * v.y * v.y + self.precision.z * v.z * v.z
    }

    /// The joint carried along by a rigid motion: center moved by `dq`,
    /// orientation composed with the inverse rotation so that
    /// `V'(dq(p) − dq(O)) = V(p − O)`.
    pub fn transformed(&self, dq: &DualQuaternion) -> Joint {
        let r = dq.real.to_rotation_matrix();
        Joint {
            center: dq.apply(&self.center),
            orientation: self.orientation * r.transpose(),
            precision: self.precision,
        }
    }
}

/// Ordered set of joints; the order indexes every weight vector and pose record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigRepr", into = "RigRepr")]
pub struct Rig {
    joints: Vec<Joint>,
    /// Additive per-joint logit bias, zero unless given.
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RigRepr {
    joints: Vec<Joint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<Vec<f64>>,
}

impl TryFrom<RigRepr> for Rig {
    type Error = Error;
    fn try_from(r: RigRepr) -> Result<Self> {
        let rig = Rig::new(r.joints)?;
        match r.bias {
            Some(b) => rig.with_bias(b),
            None => Ok(rig),
        }
    }
}

impl From<Rig> for RigRepr {
    fn from(r: Rig) -> Self {
        let bias = if r.bias.iter().all(|b| *b == 0.0) { None } else { Some(r.bias) };
        RigRepr { joints: r.joints, bias }
    }
}

impl Rig {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::Empty("rig needs at least one joint"));
        }
        let bias = vec![0.0; joints.len()];
        Ok(Rig { joints, bias })
    }

    /// `count` joints with identity orientation, isotropic `precision` and
    /// centers drawn uniformly from the axis-aligned box `[lo, hi]³`.
    pub fn uniform(count: usize, precision: f64, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::Parameter(format!("empty center box [{lo}, {hi}]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joints = (0..count)
            .map(|_| {
                let c = Vec3::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi));
                Joint::isotropic(c, precision)
            })
            .collect::<Result<Vec<_>>>()?;
        Rig::new(joints)
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != self.joints.len() {
            return Err(Error::Dimension { expected: self.joints.len(), got: bias.len() });
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Parameter("rig bias must be finite".into()));
        }
        self.bias = bias;
        Ok(self)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// The rig with every joint carried by its pose, used to evaluate
    /// skinning weights of points in the observation space.
    pub fn posed(&self, pose: &[DualQuaternion]) -> Result<Rig> {
        if pose.len() != self.joints.len() {
            return Err(Error::Dimension { expected: self.joints.len(), got: pose.len() });
        }
        let joints = self.joints.iter().zip(pose).map(|(j, dq)| j.transformed(dq)).collect();
        Ok(Rig { joints, bias: self.bias.clone() })
    }
}

pub fn mahalanobis_scores(p: &Vec3, rig: &Rig) -> Vec<f64> {
    rig.joints.iter().map(|j| j.mahalanobis(p)).collect()
}

/// Per-point skinning weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates nonnegativity and unit sum (within 1e-9).
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Input("weights must be nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("weights sum to {s}, expected 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        WeightVector(w)
    }

    /// Numerically stable softmax of `logits`.
    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        WeightVector(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// `softmax(−score + bias)`: closer joints get more influence.
pub fn skin_weights(p: &Vec3, rig: &Rig) -> WeightVector {
    let logits: Vec<f64> =
        rig.joints.iter().zip(&rig.bias).map(|(j, b)| b - j.mahalanobis(p)).collect();
    WeightVector::softmax(&logits)
}

/// One frame of per-joint 7-scalar records `[t1, t2, t3, qw, qx, qy, qz]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub t: i64,
    pub joints: Vec<[f64; 7]>,
}

impl PoseFrame {
    pub fn identity(t: i64, joints: usize) -> Self {
        PoseFrame { t, joints: vec![[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]; joints] }
    }

    /// Record reproducing a given unit dual quaternion.
    pub fn record_from_dq(dq: &DualQuaternion) -> [f64; 7] {
        let t = dq.translation();
        let q = dq.real;
        [t.x, t.y, t.z, q.w, q.x, q.y, q.z]
    }

    pub fn dual_quaternions(&self) -> Result<Vec<DualQuaternion>> {
        self.joints
            .iter()
            .map(|r| dq_from_pose7(r[0], r[1], r[2], &Quaternion::new(r[3], r[4], r[5], r[6])))
            .collect()
    }
}

/// Per-frame joint poses, `{"frames":[{"t":int,"joints":[[t1,t2,t3,qw,qx,qy,qz],…]}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTable {
    pub frames: Vec<PoseFrame>,
}

impl PoseTable {
    pub fn frame(&self, t: i64) -> Result<&PoseFrame> {
        self.frames
            .iter()
            .find(|f| f.t == t)
            .ok_or_else(|| Error::Input(format!("pose table has no frame t={t}")))
    }

    pub fn frame_mut(&mut self, t: i64) -> Result<&mut PoseFrame> {
        self.frames
            .iter_mut()
            .find(|f| f.t == t)
            .ok_or_else(|| Error::Input(format!("pose table has no frame t={t}")))
    }

    /// Unit dual quaternions of frame `t`, checked against the rig size.
    pub fn dual_quaternions(&self, t: i64, joints: usize) -> Result<Vec<DualQuaternion>> {
        let f = self.frame(t)?;
        if f.joints.len() != joints {
            return Err(Error::Dimension { expected: joints, got: f.joints.len() });
        }
        f.dual_quaternions()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualquat::RigidTransform;
    use proptest::prelude::*;

    fn rot(axis: Vec3, angle: f64) -> Mat3 {
        Quaternion::from_axis_angle(&axis, angle).to_rotation_matrix()
    }

    fn three_joint_rig() -> Rig {
        Rig::new(vec![
            Joint::new(Vec3::new(0.0, 0.0, 0.0), rot(Vec3::z(), 0.3), Vec3::new(1.0, 2.0, 0.5)).unwrap(),
            Joint::new(Vec3::new(1.0, 0.5, 0.0), rot(Vec3::x(), -0.7), Vec3::new(3.0, 1.0, 1.0)).unwrap(),
            Joint::new(Vec3::new(-0.5, 1.0, 0.2), Mat3::identity(), Vec3::new(0.5, 0.5, 4.0)).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn score_zero_at_center_and_unit_axis() {
        let j = Joint::isotropic(Vec3::new(0.2, 0.3, 0.4), 1.0).unwrap();
        assert_eq!(j.mahalanobis(&Vec3::new(0.2, 0.3, 0.4)), 0.0);
        let j = Joint::isotropic(Vec3::zeros(), 1.0).unwrap();
        assert_eq!(j.mahalanobis(&Vec3::x()), 1.0);
    }

    #[test]
    fn score_matches_dense_matrix_product() {
        let rig = three_joint_rig();
        let p = Vec3::new(0.7, -0.4, 1.3);
        for (j, s) in rig.joints().iter().zip(mahalanobis_scores(&p, &rig)) {
            let d = p - j.center();
            let lam = Mat3::from_diagonal(j.precision());
            let dense = (d.transpose() * j.orientation().transpose() * lam * j.orientation() * d)[(0, 0)];
            assert!((dense - s).abs() < 1e-12);
            assert!(s >= 0.0);
        }
    }

    #[test]
    fn nearer_joint_dominates_with_separation() {
        let mut prev = 0.0;
        for sep in [0.5, 1.0, 2.0, 4.0] {
            let rig = Rig::new(vec![
                Joint::isotropic(Vec3::zeros(), 1.0).unwrap(),
                Joint::isotropic(Vec3::new(sep, 0.0, 0.0), 1.0).unwrap(),
            ])
            .unwrap();
            let w = skin_weights(&Vec3::zeros(), &rig);
            assert!(w[0] > w[1]);
            assert!(w[0] > prev);
            prev = w[0];
        }
        assert!(prev > 1.0 - 1e-6);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let rig = Rig::new(vec![
            Joint::isotropic(Vec3::new(-1.0, 0.0, 0.0), 2.0).unwrap(),
            Joint::isotropic(Vec3::new(1.0, 0.0, 0.0), 2.0).unwrap(),
        ])
        .unwrap();
        let w = skin_weights(&Vec3::new(0.0, 0.7, -0.3), &rig);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_match_hand_rolled_softmax() {
        let rig = three_joint_rig();
        let p = Vec3::new(0.4, 0.2, -0.1);
        let scores = mahalanobis_scores(&p, &rig);
        let e: Vec<f64> = scores.iter().map(|s| (-s).exp()).collect();
        let z: f64 = e.iter().sum();
        let w = skin_weights(&p, &rig);
        for k in 0..3 {
            assert!((w[k] - e[k] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn bias_adds_to_logits() {
        let rig = Rig::new(vec![
            Joint::isotropic(Vec3::zeros(), 1.0).unwrap(),
            Joint::isotropic(Vec3::zeros(), 1.0).unwrap(),
        ])
        .unwrap()
        .with_bias(vec![0.0, 2f64.ln()])
        .unwrap();
        let w = skin_weights(&Vec3::x(), &rig);
        assert!((w[1] / w[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_joints_rejected() {
        assert!(Joint::isotropic(Vec3::zeros(), 0.0).is_err());
        assert!(Joint::new(Vec3::zeros(), Mat3::identity() * 2.0, Vec3::repeat(1.0)).is_err());
        assert!(Rig::new(vec![]).is_err());
    }

    #[test]
    fn uniform_rig_defaults() {
        let rig = Rig::uniform(DEFAULT_JOINTS, 1.0, -0.5, 0.5, 3).unwrap();
        assert_eq!(rig.len(), 25);
        for j in rig.joints() {
            assert_eq!(*j.orientation(), Mat3::identity());
            assert!(j.center().iter().all(|c| (-0.5..0.5).contains(c)));
        }
        assert_eq!(rig, Rig::uniform(DEFAULT_JOINTS, 1.0, -0.5, 0.5, 3).unwrap());
    }

    #[test]
    fn rig_json_round_trip() {
        let rig = three_joint_rig();
        let s = serde_json::to_string(&rig).unwrap();
        assert!(s.starts_with(r#"{"joints":[{"center":[0.0,0.0,0.0],"orientation":["#));
        let back: Rig = serde_json::from_str(&s).unwrap();
        for (a, b) in back.joints().iter().zip(rig.joints()) {
            assert!((a.orientation() - b.orientation()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn pose_json_and_frames() {
        let json = r#"{"frames":[{"t":3,"joints":[[1,2,3,1,0,0,0],[0,0,0,0,0,0,2]]}]}"#;
        let table: PoseTable = serde_json::from_str(json).unwrap();
        let dqs = table.dual_quaternions(3, 2).unwrap();
        assert!(dqs.iter().all(|d| d.is_unit(1e-9)));
        assert!((dqs[0].translation() - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert!(table.dual_quaternions(4, 2).is_err());
        assert!(matches!(table.dual_quaternions(3, 3), Err(Error::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn weights_on_simplex(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
            let w = skin_weights(&Vec3::new(x, y, z), &three_joint_rig());
            prop_assert!(w.iter().all(|v| *v > 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn nearest_joint_gets_largest_weight(x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
            let rig = three_joint_rig();
            let p = Vec3::new(x, y, z);
            let s = mahalanobis_scores(&p, &rig);
            let w = skin_weights(&p, &rig);
            let argmin = (0..3).min_by(|a, b| s[*a].total_cmp(&s[*b])).unwrap();
            prop_assert!((0..3).all(|k| w[argmin] >= w[k]));
        }

        #[test]
        fn weights_invariant_under_rigid_motion(
            x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64,
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64,
            tx in -2.0..2.0f64, ty in -2.0..2.0f64, tz in -2.0..2.0f64,
        ) {
            let rig = three_joint_rig();
            let rt = RigidTransform::from_axis_angle(&Vec3::new(ax, ay, az), Vec3::new(tx, ty, tz));
            let dq = crate::dualquat::rigid_to_dq(&rt).unwrap();
            let moved = rig.posed(&[dq; 3]).unwrap();
            let p = Vec3::new(x, y, z);
            let w0 = skin_weights(&p, &rig);
            let w1 = skin_weights(&rt.apply(&p), &moved);
            for k in 0..3 {
                prop_assert!((w0[k] - w1[k]).abs() < 1e-9);
            }
        }
    }
}
