//! Articulated shape machinery: rigid deformation by dual quaternion blend
//! skinning, SDF volume rendering with texture filtering, entropic optimal
//! transport matching between pixels and canonical points, reconstruction
//! metrics, and a small analysis-by-synthesis pose fitter.
//!
//! Conventions used throughout:
//!
//! * Quaternions are stored scalar-first, `(w, x, y, z)`.
//! * Signed distances are negative inside a shape and positive outside.
//! * A camera extrinsic maps canonical/world coordinates into camera
//!   coordinates; the camera looks down `+z`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deform;
pub mod dualquat;
pub mod error;
pub mod field;
pub mod fit;
pub mod image;
pub mod losses;
pub mod matching;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod rig;
pub mod skinning;

pub use error::{Error, Result};

/// Points and vectors in scene units.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 matrices (rotations, covariance-like forms).
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Sum with a fixed pairwise tree, so that reductions are independent of how
/// the input was produced (sequential or parallel).
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub(crate) fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub(crate) fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}
