//! Linear and dual quaternion blend skinning, plus the skin-collapse
//! demonstrator on a two-joint cylinder.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Matrix3x4;
use rayon::prelude::*;

use crate::dualquat::{dq_to_rigid, DualQuaternion, Quaternion, RigidTransform};
use crate::mesh::Mesh;
use crate::rig::{skin_weights, Rig};
use crate::{Error, Mat3, Result, Vec3};

/// Below this real-part norm a dual quaternion blend is treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lbs,
    Dbs,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lbs" => Ok(Method::Lbs),
            "dbs" => Ok(Method::Dbs),
            other => Err(Error::Parameter(format!("unknown skinning method {other:?}"))),
        }
    }
}

/// General affine map `p ↦ A p + b`; the result of linear blending, which
/// need not be rigid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub linear: Mat3,
    pub translation: Vec3,
}

impl Affine {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.linear * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear);
        m.set_column(3, &self.translation);
        m
    }
}

fn check_len(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension { expected: n, got: w.len() });
    }
    if w.is_empty() {
        return Err(Error::Empty("blend needs at least one transform"));
    }
    Ok(())
}

/// `Σ w_j T_j` as a 3×4 affine matrix.
pub fn lbs_blend(w: &[f64], transforms: &[RigidTransform]) -> Result<Affine> {
    check_len(w, transforms.len())?;
    let mut linear = Mat3::zeros();
    let mut translation = Vec3::zeros();
    for (wj, t) in w.iter().zip(transforms) {
        linear += t.rotation() * *wj;
        translation += t.translation() * *wj;
    }
    Ok(Affine { linear, translation })
}

/// Normalized weighted sum of unit dual quaternions. Every input is sign
/// aligned with the largest-weight one before summing; with `invert` each
/// input is replaced by its inverse first.
pub fn dbs_blend(w: &[f64], dqs: &[DualQuaternion], invert: bool) -> Result<DualQuaternion> {
    check_len(w, dqs.len())?;
    let mut pivot = 0;
    for (j, wj) in w.iter().enumerate() {
        if *wj > w[pivot] {
            pivot = j;
        }
    }
    let get = |j: usize| if invert { dqs[j].conjugate() } else { dqs[j] };
    let pivot_real = get(pivot).real;
    let mut acc = DualQuaternion::new(Quaternion::ZERO, Quaternion::ZERO);
    for (j, wj) in w.iter().enumerate() {
        if *wj == 0.0 {
            continue;
        }
        let dq = get(j);
        let s = if dq.real.dot(&pivot_real) < 0.0 { -wj } else { *wj };
        acc = acc.add(&dq.scale(s));
    }
    let norm = acc.real.norm();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateBlend { norm, vertex: None });
    }
    acc.normalize()
}

/// Blended position of `p` under explicit weights.
pub fn blend_point(p: &Vec3, w: &[f64], pose: &[DualQuaternion], method: Method) -> Result<Vec3> {
    match method {
        Method::Dbs => Ok(dbs_blend(w, pose, false)?.apply(p)),
        Method::Lbs => {
            let ts = pose.iter().map(dq_to_rigid).collect::<Result<Vec<_>>>()?;
            Ok(lbs_blend(w, &ts)?.apply(p))
        }
    }
}

fn attach_vertex(e: Error, vertex: usize) -> Error {
    match e {
        Error::DegenerateBlend { norm, .. } => Error::DegenerateBlend { norm, vertex: Some(vertex) },
        other => other,
    }
}

/// Deform every vertex with explicit per-vertex weights.
pub fn skin_vertices(
    vertices: &[Vec3],
    weights: &[Vec<f64>],
    pose: &[DualQuaternion],
    method: Method,
) -> Result<Vec<Vec3>> {
    if weights.len() != vertices.len() {
        return Err(Error::Dimension { expected: vertices.len(), got: weights.len() });
    }
    let rigid = match method {
        Method::Lbs => pose.iter().map(dq_to_rigid).collect::<Result<Vec<_>>>()?,
        Method::Dbs => Vec::new(),
    };
    vertices
        .par_iter()
        .zip(weights.par_iter())
        .enumerate()
        .map(|(i, (v, w))| {
            let r = match method {
                Method::Lbs => lbs_blend(w, &rigid).map(|a| a.apply(v)),
                Method::Dbs => dbs_blend(w, pose, false).map(|dq| dq.apply(v)),
            };
            r.map_err(|e| attach_vertex(e, i))
        })
        .collect()
}

/// Skin a rest-pose mesh with rig-derived weights evaluated at each vertex.
pub fn skin_mesh(mesh: &Mesh, rig: &Rig, pose: &[DualQuaternion], method: Method) -> Result<Mesh> {
    if mesh.vertices.is_empty() {
        return Err(Error::Empty("mesh has no vertices"));
    }
    if pose.len() != rig.len() {
        return Err(Error::Dimension { expected: rig.len(), got: pose.len() });
    }
    let weights: Vec<Vec<f64>> =
        mesh.vertices.par_iter().map(|v| skin_weights(v, rig).into_inner()).collect();
    let vertices = skin_vertices(&mesh.vertices, &weights, pose, method)?;
    Ok(Mesh { vertices, faces: mesh.faces.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollapseMode {
    /// Rotation of the top joint about the cylinder axis.
    Twist,
    /// Rotation of the top joint about the x axis through the mid point.
    Bend,
}

impl FromStr for CollapseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "twist" => Ok(CollapseMode::Twist),
            "bend" => Ok(CollapseMode::Bend),
            other => Err(Error::Parameter(format!("unknown collapse mode {other:?}"))),
        }
    }
}

/// Two-joint cylinder fixture: unit radius along z in `[-1, 1]`, 32 vertices
/// per ring and 64 height segments, so ring 32 lies at `z = 0`.
pub struct CollapseFixture {
    pub mesh: Mesh,
    pub weights: Vec<Vec<f64>>,
    pub radial: usize,
    pub mid_ring: usize,
}

impl CollapseFixture {
    pub const RADIUS: f64 = 1.0;

    pub fn new() -> Self {
        let (radial, segments) = (32, 64);
        let mesh = Mesh::cylinder(Self::RADIUS, 1.0, radial, segments);
        // Joint 0 holds the bottom, joint 1 the top, linearly in height.
        let weights = mesh
            .vertices
            .iter()
            .map(|v| {
                let w1 = ((v.z + 1.0) / 2.0).clamp(0.0, 1.0);
                vec![1.0 - w1, w1]
            })
            .collect();
        CollapseFixture { mesh, weights, radial, mid_ring: segments / 2 }
    }

    pub fn pose(mode: CollapseMode, angle_deg: f64) -> [DualQuaternion; 2] {
        let axis = match mode {
            CollapseMode::Twist => Vec3::z(),
            CollapseMode::Bend => Vec3::x(),
        };
        let q = Quaternion::from_axis_angle(&axis, angle_deg.to_radians());
        [DualQuaternion::IDENTITY, DualQuaternion::new(q, Quaternion::ZERO)]
    }

    fn mid_indices(&self) -> std::ops::Range<usize> {
        self.mid_ring * self.radial..(self.mid_ring + 1) * self.radial
    }

    /// Smallest distance of a deformed mid-ring vertex from the deformed ring center.
    pub fn mid_radius(&self, deformed: &[Vec3], pose: &[DualQuaternion], method: Method) -> Result<f64> {
        let idx = self.mid_indices();
        let center = blend_point(&Vec3::zeros(), &self.weights[idx.start], pose, method)?;
        Ok(deformed[idx].iter().map(|v| (v - center).norm()).fold(f64::INFINITY, f64::min))
    }
}

impl Default for CollapseFixture {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseRow {
    pub angle: f64,
    pub lbs_mid_radius: f64,
    pub dbs_mid_radius: f64,
    pub lbs_volume: f64,
    pub dbs_volume: f64,
}

/// Mid-ring radius and enclosed volume under both blends for each angle
/// (degrees, within `[0, 180]`).
pub fn collapse_report(angles: &[f64], mode: CollapseMode) -> Result<Vec<CollapseRow>> {
    if let Some(a) = angles.iter().find(|a| !(0.0..=180.0).contains(*a)) {
        return Err(Error::Parameter(format!("angle {a} outside [0, 180] degrees")));
    }
    let fx = CollapseFixture::new();
    angles
        .iter()
        .map(|&angle| {
            let pose = CollapseFixture::pose(mode, angle);
            let lbs = skin_vertices(&fx.mesh.vertices, &fx.weights, &pose, Method::Lbs)?;
            let dbs = skin_vertices(&fx.mesh.vertices, &fx.weights, &pose, Method::Dbs)?;
            let vol = |v: Vec<Vec3>| Mesh { vertices: v, faces: fx.mesh.faces.clone() }.signed_volume();
            Ok(CollapseRow {
                angle,
                lbs_mid_radius: fx.mid_radius(&lbs, &pose, Method::Lbs)?,
                dbs_mid_radius: fx.mid_radius(&dbs, &pose, Method::Dbs)?,
                lbs_volume: vol(lbs),
                dbs_volume: vol(dbs),
            })
        })
        .collect()
}

pub fn collapse_csv(rows: &[CollapseRow]) -> String {
    let mut s = String::from("angle,lbs_mid_radius,dbs_mid_radius,lbs_volume,dbs_volume\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9}",
            r.angle,
            r.lbs_mid_radius.max(0.0),
            r.dbs_mid_radius,
            r.lbs_volume,
            r.dbs_volume
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualquat::{dq_from_pose7, Quaternion};
    use crate::rig::Joint;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn rz(a: f64) -> RigidTransform {
        RigidTransform::from_axis_angle(&(Vec3::z() * a), Vec3::zeros())
    }

    fn dq_rz(a: f64) -> DualQuaternion {
        DualQuaternion::new(Quaternion::from_axis_angle(&Vec3::z(), a), Quaternion::ZERO)
    }

    #[test]
    fn lbs_one_hot_selects_transform() {
        let t = RigidTransform::from_axis_angle(&Vec3::new(0.3, -0.2, 0.5), Vec3::new(1.0, 2.0, 3.0));
        let a = lbs_blend(&[0.0, 1.0], &[RigidTransform::IDENTITY, t]).unwrap();
        assert_eq!(a.linear, *t.rotation());
        assert_eq!(a.translation, *t.translation());
    }

    #[test]
    fn lbs_half_turn_collapses_to_axis() {
        let a = lbs_blend(&[0.5, 0.5], &[RigidTransform::IDENTITY, rz(PI)]).unwrap();
        let expected = Mat3::from_diagonal(&Vec3::new(0.0, 0.0, 1.0));
        assert!((a.linear - expected).abs().max() < 1e-15);
        assert!(a.apply(&Vec3::x()).norm() < 1e-15);
        let m = a.to_matrix();
        assert_eq!(m[(2, 2)], 1.0);
    }

    #[test]
    fn lbs_translation_is_weighted_sum() {
        let ts = [
            RigidTransform::from_axis_angle(&Vec3::new(0.1, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)),
            RigidTransform::from_axis_angle(&Vec3::new(0.0, 0.7, 0.0), Vec3::new(0.0, 2.0, 0.0)),
            RigidTransform::from_axis_angle(&Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 4.0)),
        ];
        let a = lbs_blend(&[0.2, 0.3, 0.5], &ts).unwrap();
        assert!((a.translation - Vec3::new(0.2, 0.6, 2.0)).norm() < 1e-15);
    }

    #[test]
    fn blend_length_mismatch() {
        assert!(matches!(
            lbs_blend(&[1.0], &[RigidTransform::IDENTITY, RigidTransform::IDENTITY]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(dbs_blend(&[0.5, 0.5], &[DualQuaternion::IDENTITY], false), Err(Error::Dimension { .. })));
    }

    #[test]
    fn dbs_half_turn_gives_quarter_turn() {
        let dq = dbs_blend(&[0.5, 0.5], &[DualQuaternion::IDENTITY, dq_rz(PI)], false).unwrap();
        let r = dq.real;
        assert!((r.w - FRAC_1_SQRT_2).abs() < 1e-15 && (r.z - FRAC_1_SQRT_2).abs() < 1e-15);
        let p = dq.apply(&Vec3::x());
        assert!((p - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn dbs_one_hot_and_inverse() {
        let a = dq_from_pose7(1.0, -2.0, 0.5, &Quaternion::new(0.3, 0.1, -0.4, 0.8)).unwrap();
        let b = dq_rz(1.0);
        let sel = dbs_blend(&[0.0, 1.0, 0.0], &[b, a, b], false).unwrap();
        assert!(sel.to_array().iter().zip(a.to_array()).all(|(x, y)| (x - y).abs() < 1e-15));
        let inv = dbs_blend(&[1.0], &[a], true).unwrap();
        let p = Vec3::new(0.3, 0.2, -1.0);
        assert!((inv.apply(&a.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn dbs_degenerate_needs_cancelling_weights() {
        // Sign alignment removes the antipodal case for simplex weights; a
        // blend can still cancel when weights are signed.
        let e = dbs_blend(&[1.0, -1.0], &[DualQuaternion::IDENTITY, DualQuaternion::IDENTITY], false);
        assert!(matches!(e, Err(Error::DegenerateBlend { .. })));
        assert!(dbs_blend(&[0.5, 0.5], &[DualQuaternion::IDENTITY, -DualQuaternion::IDENTITY], false).is_ok());
    }

    #[test]
    fn skin_mesh_identity_and_rigid() {
        let mesh = Mesh::cylinder(0.5, 1.0, 8, 4);
        let rig = Rig::new(vec![
            Joint::isotropic(Vec3::new(0.0, 0.0, -0.5), 4.0).unwrap(),
            Joint::isotropic(Vec3::new(0.0, 0.0, 0.5), 4.0).unwrap(),
        ])
        .unwrap();
        for method in [Method::Lbs, Method::Dbs] {
            let out = skin_mesh(&mesh, &rig, &[DualQuaternion::IDENTITY; 2], method).unwrap();
            assert!(out.vertices.iter().zip(&mesh.vertices).all(|(a, b)| (a - b).norm() < 1e-15));
            let g = dq_from_pose7(0.2, 0.1, -0.3, &Quaternion::new(0.9, 0.2, 0.3, 0.1)).unwrap();
            let out = skin_mesh(&mesh, &rig, &[g, g], method).unwrap();
            for i in 0..mesh.vertices.len() {
                for j in 0..mesh.vertices.len() {
                    let d0 = (mesh.vertices[i] - mesh.vertices[j]).norm();
                    let d1 = (out.vertices[i] - out.vertices[j]).norm();
                    assert!((d0 - d1).abs() < 1e-9);
                }
            }
            assert_eq!(out.faces, mesh.faces);
        }
    }

    #[test]
    fn skin_mesh_reports_vertex_of_degenerate_blend() {
        let e = Error::DegenerateBlend { norm: 0.0, vertex: None };
        assert!(matches!(attach_vertex(e, 7), Error::DegenerateBlend { vertex: Some(7), .. }));
    }

    #[test]
    fn collapse_twist_and_bend_values() {
        let rows = collapse_report(&[0.0, 90.0, 180.0], CollapseMode::Twist).unwrap();
        assert!((rows[0].lbs_mid_radius - 1.0).abs() < 1e-12 && (rows[0].dbs_mid_radius - 1.0).abs() < 1e-12);
        assert!((rows[1].lbs_mid_radius - FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(rows[2].lbs_mid_radius <= 1e-9);
        assert!((rows[2].dbs_mid_radius - 1.0).abs() < 1e-6);
        let bend = collapse_report(&[90.0], CollapseMode::Bend).unwrap();
        assert!((bend[0].lbs_mid_radius - FRAC_1_SQRT_2).abs() < 1e-6);
        assert!((bend[0].dbs_mid_radius - 1.0).abs() < 1e-6);
    }

    #[test]
    fn collapse_lbs_shrinks_monotonically() {
        let angles: Vec<f64> = (0..=12).map(|k| 15.0 * k as f64).collect();
        for mode in [CollapseMode::Twist, CollapseMode::Bend] {
            let rows = collapse_report(&angles, mode).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].lbs_mid_radius < w[0].lbs_mid_radius);
                assert!(w[1].lbs_volume < w[0].lbs_volume + 1e-12);
            }
            for r in &rows {
                assert!((r.dbs_mid_radius - 1.0).abs() < 1e-6);
            }
        }
        assert!(collapse_report(&[190.0], CollapseMode::Twist).is_err());
    }

    #[test]
    fn collapse_csv_layout() {
        let csv = collapse_csv(&collapse_report(&[180.0], CollapseMode::Twist).unwrap());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "angle,lbs_mid_radius,dbs_mid_radius,lbs_volume,dbs_volume");
        let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(cells[0], "180");
        assert_eq!(cells[1], "0.000000000");
        assert_eq!(cells[2], "1.000000000");
    }

    fn arb_dq() -> impl Strategy<Value = DualQuaternion> {
        (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform4(-1.0..1.0f64))
            .prop_filter("nonzero", |(_, q)| q.iter().map(|v| v * v).sum::<f64>() > 1e-2)
            .prop_map(|(t, q)| dq_from_pose7(t[0], t[1], t[2], &Quaternion::new(q[0], q[1], q[2], q[3])).unwrap())
    }

    fn arb_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01..1.0f64, n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        })
    }

    proptest! {
        #[test]
        fn dbs_is_rigid(dqs in prop::collection::vec(arb_dq(), 4), w in arb_weights(4),
                        p in prop::array::uniform3(-3.0..3.0f64), q in prop::array::uniform3(-3.0..3.0f64)) {
            let b = dbs_blend(&w, &dqs, false).unwrap();
            prop_assert!(b.is_unit(1e-9));
            let (p, q) = (crate::vec3(p), crate::vec3(q));
            prop_assert!(((b.apply(&p) - b.apply(&q)).norm() - (p - q).norm()).abs() < 1e-9);
        }

        #[test]
        fn dbs_ignores_input_signs(dqs in prop::collection::vec(arb_dq(), 3), w in arb_weights(3),
                                   flips in prop::array::uniform3(any::<bool>()), p in prop::array::uniform3(-3.0..3.0f64)) {
            let flipped: Vec<_> = dqs.iter().zip(flips).map(|(d, f)| if f { -*d } else { *d }).collect();
            let p = crate::vec3(p);
            let a = dbs_blend(&w, &dqs, false).unwrap().apply(&p);
            let b = dbs_blend(&w, &flipped, false).unwrap().apply(&p);
            prop_assert!((a - b).norm() < 1e-9);
        }

        #[test]
        fn lbs_and_dbs_agree_on_identical_inputs(d in arb_dq(), w in arb_weights(3), p in prop::array::uniform3(-3.0..3.0f64)) {
            let p = crate::vec3(p);
            let dqs = [d, d, d];
            let a = blend_point(&p, &w, &dqs, Method::Lbs).unwrap();
            let b = blend_point(&p, &w, &dqs, Method::Dbs).unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }

        #[test]
        fn dbs_is_continuous_in_weights(dqs in prop::collection::vec(arb_dq(), 3), w in arb_weights(3),
                                        p in prop::array::uniform3(-1.0..1.0f64)) {
            let p = crate::vec3(p);
            let eps = 1e-7;
            let mut w2 = w.clone();
            w2[0] += eps;
            w2[1] -= eps;
            let a = dbs_blend(&w, &dqs, false).unwrap().apply(&p);
            let b = dbs_blend(&w2, &dqs, false).unwrap().apply(&p);
            // Lipschitz bound loose enough for any non-degenerate draw.
            prop_assert!((a - b).norm() < 1e-2);
        }
    }
}
