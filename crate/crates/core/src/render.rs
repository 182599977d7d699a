//! Volume rendering of a canonical SDF scene seen through a deformed frame:
//! composited color (with texture filtering), opacity, surface points, depth
//! and 2D flow to another frame.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::FrameWarp;
use crate::field::{density, texture_filter, SdfScene, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::image::Image;
use crate::{Error, Result, Vec3};

/// Opacity below which a pixel carries no surface and no flow.
pub const MIN_OPACITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub samples: usize,
    pub near: f64,
    pub far: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Density amplitude; `1/beta` when unset.
    pub amp: Option<f64>,
    pub texture_filter: bool,
    /// Random offsets inside each stratum instead of stratum midpoints.
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            samples: 128,
            near: 0.1,
            far: 10.0,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            amp: None,
            texture_filter: true,
            jitter: false,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Parameter(format!("need at least 2 samples per ray, got {}", self.samples)));
        }
        if !(self.near >= 0.0 && self.near < self.far) || !self.far.is_finite() {
            return Err(Error::Parameter(format!("invalid depth range [{}, {}]", self.near, self.far)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Parameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let Some(a) = self.amp {
            if !(a >= 0.0) {
                return Err(Error::Parameter(format!("amplitude must be nonnegative, got {a}")));
            }
        }
        Ok(())
    }

    pub fn amplitude(&self) -> f64 {
        self.amp.unwrap_or(1.0 / self.beta)
    }

    /// Stratified sample distances and their interval lengths; the last
    /// interval runs to `far`.
    pub fn sample_distances(&self, rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Vec<f64>) {
        let n = self.samples;
        let bin = (self.far - self.near) / n as f64;
        let t: Vec<f64> = match rng {
            Some(rng) => (0..n).map(|k| self.near + (k as f64 + rng.gen::<f64>()) * bin).collect(),
            None => (0..n).map(|k| self.near + (k as f64 + 0.5) * bin).collect(),
        };
        let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        delta.push(self.far - t[n - 1]);
        (t, delta)
    }
}

/// `τ_k = α_k ∏_{i<k}(1 − α_i)` with `α_k = 1 − exp(−σ_k δ_k)`.
pub fn composite_weights(densities: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    if densities.len() != deltas.len() {
        return Err(Error::Dimension { expected: densities.len(), got: deltas.len() });
    }
    let mut transmittance = 1.0;
    let mut tau = Vec::with_capacity(densities.len());
    for (&s, &d) in densities.iter().zip(deltas) {
        if !(s >= 0.0) {
            return Err(Error::Input(format!("density must be nonnegative, got {s}")));
        }
        if !(d >= 0.0) {
            return Err(Error::Input(format!("sample interval must be nonnegative, got {d}")));
        }
        let alpha = -(-s * d).exp_m1();
        tau.push(alpha * transmittance);
        transmittance *= 1.0 - alpha;
    }
    Ok(tau)
}

/// Samples along one ray after compositing.
#[derive(Debug, Clone)]
pub struct RayTrace {
    pub tau: Vec<f64>,
    /// Canonical-space sample positions.
    pub canonical: Vec<Vec3>,
    /// Camera-space sample positions.
    pub observed: Vec<Vec3>,
    pub sdf: Vec<f64>,
    /// Texture-filter weight per sample (1 when filtering is off).
    pub filter: Vec<f64>,
    pub color: Vec3,
    pub opacity: f64,
    pub surface: Vec3,
    /// Opacity-normalized camera-space depth, 0 for empty pixels.
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelOutput {
    pub color: Vec3,
    pub opacity: f64,
    pub surface: Vec3,
    pub depth: f64,
}

/// Flow of a pixel to another frame; `valid` is false for empty pixels and
/// when a contributing sample projects behind the other camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub flow: [f64; 2],
    pub valid: bool,
}

impl FlowSample {
    pub const INVALID: FlowSample = FlowSample { flow: [0.0, 0.0], valid: false };
}

fn pixel_rng(cfg: &RenderConfig, index: u64) -> Option<ChaCha8Rng> {
    cfg.jitter.then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        rng
    })
}

/// March the ray through pixel coordinates `(u, v)` (pixel centers sit at
/// half-integers).
pub fn trace_ray(u: f64, v: f64, warp: &FrameWarp, scene: &SdfScene, cfg: &RenderConfig, rng: Option<&mut ChaCha8Rng>) -> Result<RayTrace> {
    let dir = warp.camera.ray_direction(u, v);
    let (t, delta) = cfg.sample_distances(rng);
    let amp = cfg.amplitude();
    let n = t.len();
    let mut observed = Vec::with_capacity(n);
    let mut canonical = Vec::with_capacity(n);
    let mut sdf = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for &tk in &t {
        let x = dir * tk;
        let xc = warp.to_canonical(&x)?;
        let (d, c) = scene.sdf_color(&xc);
        sigma.push(density(d, cfg.beta, amp)?);
        observed.push(x);
        canonical.push(xc);
        sdf.push(d);
        colors.push(c);
    }
    let tau = composite_weights(&sigma, &delta)?;
    let filter: Vec<f64> = if cfg.texture_filter {
        sdf.iter().map(|d| texture_filter(*d, cfg.gamma, cfg.lambda)).collect()
    } else {
        vec![1.0; n]
    };
    let mut color = Vec3::zeros();
    let mut surface = Vec3::zeros();
    let mut opacity = 0.0;
    let mut z = 0.0;
    for k in 0..n {
        if tau[k] == 0.0 {
            continue;
        }
        color += colors[k] * (tau[k] * filter[k]);
        surface += canonical[k] * tau[k];
        opacity += tau[k];
        z += tau[k] * observed[k].z;
    }
    let depth = if opacity > MIN_OPACITY { z / opacity } else { 0.0 };
    Ok(RayTrace {
        tau,
        canonical,
        observed,
        sdf,
        filter,
        color: color.map(|c| c.clamp(0.0, 1.0)),
        opacity,
        surface,
        depth,
    })
}

impl RayTrace {
    pub fn output(&self) -> PixelOutput {
        PixelOutput { color: self.color, opacity: self.opacity, surface: self.surface, depth: self.depth }
    }

    /// Composited reprojection of this ray's canonical samples into frame
    /// `to`, normalized by opacity, minus the source pixel. Samples with
    /// negligible weight are skipped.
    pub fn flow(&self, u: f64, v: f64, to: &FrameWarp) -> Result<FlowSample> {
        if self.opacity <= MIN_OPACITY {
            return Ok(FlowSample::INVALID);
        }
        let cutoff = MIN_OPACITY * self.opacity;
        let (mut x, mut y, mut wsum) = (0.0, 0.0, 0.0);
        for (tau, xc) in self.tau.iter().zip(&self.canonical) {
            if *tau <= cutoff {
                continue;
            }
            let obs = to.to_observed(xc)?;
            match to.camera.project_camera_space(&obs) {
                Ok([px, py]) => {
                    x += tau * px;
                    y += tau * py;
                    wsum += tau;
                }
                Err(Error::BehindCamera(_)) => return Ok(FlowSample::INVALID),
                Err(e) => return Err(e),
            }
        }
        Ok(FlowSample { flow: [x / wsum - u, y / wsum - v], valid: true })
    }
}

pub fn render_pixel(u: f64, v: f64, warp: &FrameWarp, scene: &SdfScene, cfg: &RenderConfig) -> Result<PixelOutput> {
    cfg.validate()?;
    let mut rng = pixel_rng(cfg, 0);
    Ok(trace_ray(u, v, warp, scene, cfg, rng.as_mut())?.output())
}

/// Flow of pixel `(u, v)` from the frame of `from` to the frame of `to`,
/// using the compositing weights of `from`.
pub fn render_flow(u: f64, v: f64, from: &FrameWarp, to: &FrameWarp, scene: &SdfScene, cfg: &RenderConfig) -> Result<FlowSample> {
    cfg.validate()?;
    let mut rng = pixel_rng(cfg, 0);
    trace_ray(u, v, from, scene, cfg, rng.as_mut())?.flow(u, v, to)
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub color: Image,
    pub opacity: Image,
    pub depth: Image,
    /// Composited canonical surface point per pixel, row-major.
    pub surface: Vec<Vec3>,
    pub flow: Option<Vec<FlowSample>>,
}

/// Render a `width × height` image; with `flow_to`, also the flow of each
/// pixel into that frame. Pixels are independent and seeded by their index.
pub fn render(
    warp: &FrameWarp,
    scene: &SdfScene,
    cfg: &RenderConfig,
    width: usize,
    height: usize,
    flow_to: Option<&FrameWarp>,
) -> Result<RenderOutput> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("image size {width}x{height} is empty")));
    }
    let pixels: Vec<(PixelOutput, Option<FlowSample>)> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % width) as f64 + 0.5, (i / width) as f64 + 0.5);
            let mut rng = pixel_rng(cfg, i as u64);
            let ray = trace_ray(u, v, warp, scene, cfg, rng.as_mut())?;
            let flow = flow_to.map(|to| ray.flow(u, v, to)).transpose()?;
            Ok((ray.output(), flow))
        })
        .collect::<Result<_>>()?;
    let mut color = Image::new(width, height, 3);
    let mut opacity = Image::new(width, height, 1);
    let mut depth = Image::new(width, height, 1);
    let mut surface = Vec::with_capacity(pixels.len());
    for (i, (p, _)) in pixels.iter().enumerate() {
        color.data[3 * i..3 * i + 3].copy_from_slice(p.color.as_slice());
        opacity.data[i] = p.opacity;
        depth.data[i] = p.depth;
        surface.push(p.surface);
    }
    let flow = flow_to.map(|_| pixels.iter().map(|(_, f)| f.unwrap_or(FlowSample::INVALID)).collect());
    Ok(RenderOutput { width, height, color, opacity, depth, surface, flow })
}

/// `x,y,fx,fy,valid` per pixel, row-major.
pub fn flow_csv(flow: &[FlowSample], width: usize) -> String {
    let mut s = String::from("x,y,fx,fy,valid\n");
    for (i, f) in flow.iter().enumerate() {
        let _ = writeln!(s, "{},{},{:.9},{:.9},{}", i % width, i / width, f.flow[0], f.flow[1], f.valid as u8);
    }
    s
}

/// Interleaved little-endian f32 `(fx, fy)` per pixel; invalid pixels are NaN.
pub fn flow_raw(flow: &[FlowSample]) -> Vec<u8> {
    flow.iter()
        .flat_map(|f| {
            let [a, b] = if f.valid { f.flow } else { [f64::NAN; 2] };
            [(a as f32).to_le_bytes(), (b as f32).to_le_bytes()]
        })
        .flatten()
        .collect()
}

/// Inverse of [`flow_raw`]; a NaN component marks the pixel invalid.
pub fn parse_flow_raw(bytes: &[u8]) -> Result<Vec<FlowSample>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Parse(format!("flow data length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let a = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            let b = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
            if a.is_nan() || b.is_nan() {
                FlowSample::INVALID
            } else {
                FlowSample { flow: [a, b], valid: true }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deform::Camera;
    use crate::dualquat::{DualQuaternion, Quaternion, RigidTransform};
    use crate::field::Primitive;
    use crate::rig::{Joint, Rig};
    use std::f64::consts::E;

    fn one_joint_rig() -> Rig {
        Rig::new(vec![Joint::isotropic(Vec3::zeros(), 1.0).unwrap()]).unwrap()
    }

    fn camera(z: f64) -> Camera {
        Camera::new(RigidTransform::from_translation(Vec3::new(0.0, 0.0, z)), 32.0, 32.0, 16.0, 16.0).unwrap()
    }

    fn sphere(r: f64, color: [f64; 3]) -> SdfScene {
        SdfScene::from_primitives(vec![Primitive::sphere(Vec3::zeros(), r, color)]).unwrap()
    }

    fn cfg() -> RenderConfig {
        RenderConfig { near: 1.0, far: 5.0, ..RenderConfig::default() }
    }

    #[test]
    fn composite_closed_form() {
        let tau = composite_weights(&[1.0; 3], &[1.0; 3]).unwrap();
        let a = 1.0 - 1.0 / E;
        let expected = [a, a / E, a / (E * E)];
        for (t, e) in tau.iter().zip(expected) {
            assert!((t - e).abs() < 1e-15);
        }
        assert_eq!(composite_weights(&[0.0; 4], &[0.5; 4]).unwrap(), vec![0.0; 4]);
        let sat = composite_weights(&[1e9, 1.0, 1.0], &[1.0; 3]).unwrap();
        assert!((sat[0] - 1.0).abs() < 1e-15 && sat[1] < 1e-15 && sat[2] < 1e-15);
        assert!(composite_weights(&[-1.0], &[1.0]).is_err());
    }

    #[test]
    fn weights_sum_to_one_minus_transmittance() {
        let sigma = [0.3, 2.0, 0.0, 5.0, 0.7, 1.2];
        let delta = [0.1, 0.2, 0.3, 0.05, 0.4, 0.2];
        let tau = composite_weights(&sigma, &delta).unwrap();
        let trans: f64 = sigma.iter().zip(&delta).map(|(s, d)| (-s * d).exp()).product();
        assert!((tau.iter().sum::<f64>() - (1.0 - trans)).abs() < 1e-12);
        assert!(tau.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(RenderConfig { samples: 1, ..cfg() }.validate().is_err());
        assert!(RenderConfig { near: 5.0, far: 5.0, ..cfg() }.validate().is_err());
        assert!(RenderConfig { beta: 0.0, ..cfg() }.validate().is_err());
        let (t, d) = RenderConfig { samples: 4, near: 0.0, far: 4.0, ..cfg() }.sample_distances(None);
        assert_eq!(t, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(d, vec![1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn empty_scene_renders_black() {
        let rig = one_joint_rig();
        let warp = FrameWarp::new(camera(3.0), &rig, vec![DualQuaternion::IDENTITY]).unwrap();
        let s = SdfScene::from_primitives(vec![]).unwrap();
        let p = render_pixel(16.0, 16.0, &warp, &s, &cfg()).unwrap();
        assert_eq!(p.opacity, 0.0);
        assert_eq!(p.color, Vec3::zeros());
    }

    #[test]
    fn solid_sphere_center_and_miss() {
        let rig = one_joint_rig();
        let warp = FrameWarp::new(camera(3.0), &rig, vec![DualQuaternion::IDENTITY]).unwrap();
        let s = sphere(1.0, [1.0, 0.0, 0.0]);
        let c = render_pixel(16.0, 16.0, &warp, &s, &cfg()).unwrap();
        assert!(c.opacity >= 0.99);
        // Front surface at z = -1 in canonical space.
        let delta = 4.0 / 128.0;
        assert!((c.surface - Vec3::new(0.0, 0.0, -1.0)).norm() < 2.0 * delta);
        assert!((c.depth - 2.0).abs() < 2.0 * delta);
        let m = render_pixel(0.5, 0.5, &warp, &s, &cfg()).unwrap();
        assert!(m.opacity <= 0.01);
    }

    #[test]
    fn enlarging_the_solid_never_lowers_opacity() {
        let rig = one_joint_rig();
        let warp = FrameWarp::new(camera(3.0), &rig, vec![DualQuaternion::IDENTITY]).unwrap();
        let cfg = RenderConfig { samples: 32, ..cfg() };
        let small = render(&warp, &sphere(0.6, [1.0; 3]), &cfg, 12, 12, None).unwrap();
        let big = render(&warp, &sphere(0.7, [1.0; 3]), &cfg, 12, 12, None).unwrap();
        for (a, b) in small.opacity.data.iter().zip(&big.opacity.data) {
            assert!(b >= a);
        }
    }

    #[test]
    fn jittered_render_is_deterministic() {
        let rig = one_joint_rig();
        let warp = FrameWarp::new(camera(3.0), &rig, vec![DualQuaternion::IDENTITY]).unwrap();
        let cfg = RenderConfig { samples: 16, jitter: true, seed: 9, ..cfg() };
        let a = render(&warp, &sphere(1.0, [0.2, 0.4, 0.6]), &cfg, 8, 8, None).unwrap();
        let b = render(&warp, &sphere(1.0, [0.2, 0.4, 0.6]), &cfg, 8, 8, None).unwrap();
        assert_eq!(a.color, b.color);
        let c = render(&warp, &sphere(1.0, [0.2, 0.4, 0.6]), &RenderConfig { seed: 10, ..cfg }, 8, 8, None).unwrap();
        assert_ne!(a.opacity, c.opacity);
    }

    #[test]
    fn static_flow_is_zero() {
        let rig = one_joint_rig();
        let pose = vec![crate::dualquat::dq_from_pose7(0.1, -0.2, 0.0, &Quaternion::new(0.9, 0.1, 0.2, 0.3)).unwrap()];
        let warp = FrameWarp::new(camera(3.0), &rig, pose).unwrap();
        let out = render(&warp, &sphere(1.0, [1.0; 3]), &RenderConfig { samples: 64, ..cfg() }, 8, 8, Some(&warp)).unwrap();
        for f in out.flow.unwrap() {
            if f.valid {
                assert!(f.flow[0].abs() < 1e-9 && f.flow[1].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn flow_behind_camera_is_invalid() {
        let rig = one_joint_rig();
        let id = vec![DualQuaternion::IDENTITY];
        let from = FrameWarp::new(camera(3.0), &rig, id.clone()).unwrap();
        let to = FrameWarp::new(camera(-3.0), &rig, id).unwrap();
        let f = render_flow(16.0, 16.0, &from, &to, &sphere(1.0, [1.0; 3]), &cfg()).unwrap();
        assert!(!f.valid);
        let csv = flow_csv(&[f], 1);
        assert!(csv.ends_with(",0\n"));
        assert_eq!(flow_raw(&[f]).len(), 8);
    }

    #[test]
    fn flow_raw_round_trip() {
        let f = vec![FlowSample { flow: [0.5, -2.25], valid: true }, FlowSample::INVALID];
        assert_eq!(parse_flow_raw(&flow_raw(&f)).unwrap(), f);
        assert!(parse_flow_raw(&[0u8; 7]).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: RenderConfig = serde_json::from_str(r#"{"samples":64,"beta":0.05}"#).unwrap();
        assert_eq!(c.samples, 64);
        assert_eq!(c.far, RenderConfig::default().far);
        assert!(serde_json::from_str::<RenderConfig>(r#"{"sample":64}"#).is_err());
    }
}
