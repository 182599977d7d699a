//! Pose and camera recovery by analysis-by-synthesis: render the scene under
//! candidate parameters, compare against target images, descend.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{Camera, FrameWarp};
use crate::dualquat::{DualQuaternion, RigidTransform};
use crate::field::{eikonal_residual, SdfScene};
use crate::image::Image;
use crate::losses::{flow_loss, rgb_loss, sil_loss, total_loss, LossReport, LossTerms, LossWeights, Reduction};
use crate::render::{parse_flow_raw, render, FlowSample, RenderConfig};
use crate::rig::{PoseFrame, PoseTable, Rig};
use crate::{Error, Result, Vec3};

/// Halvings tried before a line search gives up.
pub const MAX_HALVINGS: usize = 20;
/// Surface points with at least this opacity enter the cycle term.
const CYCLE_OPACITY: f64 = 0.5;
const EIKONAL_SAMPLES: usize = 512;
const EIKONAL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Initial line-search step.
    pub step_size: f64,
    pub iterations: usize,
    /// Central-difference step for every parameter.
    pub fd_step: f64,
    /// Seeds render jitter and the eikonal sample set.
    pub seed: u64,
    /// Stop once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Per-pixel (mean) image losses instead of sums.
    pub normalize: bool,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings { step_size: 1.0, iterations: 300, fd_step: 1e-3, seed: 0, grad_tol: 1e-6, normalize: true }
    }
}

impl OptimizerSettings {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.fd_step > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::Parameter("optimizer steps must be positive and grad_tol nonnegative".into()));
        }
        Ok(())
    }
}

/// Target observations of one frame; at least one image is required.
#[derive(Debug, Clone)]
pub struct FitFrame {
    pub t: i64,
    pub camera: Camera,
    pub color: Option<Image>,
    pub silhouette: Option<Image>,
    /// Flow into the next frame of the problem.
    pub flow: Option<Vec<FlowSample>>,
}

impl FitFrame {
    fn size(&self) -> Option<(usize, usize)> {
        self.color.as_ref().or(self.silhouette.as_ref()).map(|i| (i.width, i.height))
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub frames: Vec<FitFrame>,
    pub scene: SdfScene,
    pub rig: Rig,
    pub init: PoseTable,
    pub weights: LossWeights,
    pub render: RenderConfig,
    pub optimizer: OptimizerSettings,
    width: usize,
    height: usize,
    eikonal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pose,
    Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub frame: i64,
    pub stage: Stage,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct PoseFit {
    pub poses: PoseTable,
    pub trace: Vec<TraceRow>,
    /// Loss at the returned parameters of each frame.
    pub reports: Vec<LossReport>,
}

#[derive(Debug, Clone)]
pub struct CameraFit {
    pub cameras: Vec<Camera>,
    pub trace: Vec<TraceRow>,
    pub reports: Vec<LossReport>,
}

/// Flatten a pose frame into `7 × joints` parameters.
pub fn pose_params(frame: &PoseFrame) -> Vec<f64> {
    frame.joints.iter().flatten().copied().collect()
}

fn params_to_frame(t: i64, x: &[f64]) -> PoseFrame {
    PoseFrame { t, joints: x.chunks_exact(7).map(|c| c.try_into().expect("7-chunk")).collect() }
}

fn params_to_pose(x: &[f64]) -> Result<Vec<DualQuaternion>> {
    params_to_frame(0, x).dual_quaternions()
}

/// Rescale the quaternion part of every joint record to unit length.
pub fn normalize_pose_params(x: &mut [f64]) -> Result<()> {
    for rec in x.chunks_exact_mut(7) {
        let n = rec[3..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::Numerical(format!("quaternion parameters collapsed to norm {n}")));
        }
        rec[3..].iter_mut().for_each(|v| *v /= n);
    }
    Ok(())
}

fn camera_params(c: &Camera) -> Vec<f64> {
    let r = c.extrinsic.rotation_vector();
    let t = c.extrinsic.translation();
    vec![r.x, r.y, r.z, t.x, t.y, t.z]
}

fn params_to_camera(base: &Camera, x: &[f64]) -> Camera {
    base.with_extrinsic(RigidTransform::from_axis_angle(&Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5])))
}

/// Central differences, one parallel task per evaluation.
pub fn finite_difference_gradient<F>(f: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let evals: Vec<f64> = (0..2 * x.len())
        .into_par_iter()
        .map(|k| {
            let mut p = x.to_vec();
            p[k / 2] += if k % 2 == 0 { h } else { -h };
            f(&p)
        })
        .collect::<Result<_>>()?;
    Ok(evals.chunks_exact(2).map(|e| (e[0] - e[1]) / (2.0 * h)).collect())
}

struct Descent {
    x: Vec<f64>,
    trace: Vec<(usize, f64, f64, f64)>,
}

/// Gradient descent with backtracking; every accepted step strictly lowers
/// the loss, so the final point is the best seen.
fn descend<F, P>(x0: &[f64], f: &F, project: &P, settings: &OptimizerSettings) -> Result<Descent>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    P: Fn(&mut [f64]) -> Result<()>,
{
    let mut x = x0.to_vec();
    project(&mut x)?;
    let mut fx = f(&x)?;
    let mut alpha = settings.step_size;
    let mut trace = vec![(0, fx, f64::NAN, 0.0)];
    for it in 1..=settings.iterations {
        let g = finite_difference_gradient(f, &x, settings.fd_step)?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn < settings.grad_tol {
            trace.push((it, fx, gn, 0.0));
            break;
        }
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect();
            project(&mut cand)?;
            let fc = f(&cand)?;
            if fc < fx {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                trace.push((it, fc, gn, alpha));
                x = cand;
                fx = fc;
                alpha *= 2.0;
            }
            None => {
                log::debug!("line search stalled at iteration {it}, gradient norm {gn:e}");
                trace.push((it, fx, gn, 0.0));
                break;
            }
        }
    }
    Ok(Descent { x, trace })
}

impl FitProblem {
    pub fn new(
        frames: Vec<FitFrame>,
        scene: SdfScene,
        rig: Rig,
        init: PoseTable,
        weights: LossWeights,
        render: RenderConfig,
        optimizer: OptimizerSettings,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("fit problem needs at least one frame"));
        }
        weights.validate()?;
        render.validate()?;
        optimizer.validate()?;
        let (width, height) = frames[0]
            .size()
            .ok_or_else(|| Error::Input(format!("frame t={} has no color or silhouette target", frames[0].t)))?;
        for (i, f) in frames.iter().enumerate() {
            if f.size() != Some((width, height)) {
                return Err(Error::Input(format!("frame t={} images differ from {width}x{height}", f.t)));
            }
            if let Some(c) = &f.color {
                if c.channels != 3 {
                    return Err(Error::Input(format!("frame t={} color target needs 3 channels", f.t)));
                }
            }
            if let Some(s) = &f.silhouette {
                if (s.width, s.height, s.channels) != (width, height, 1) {
                    return Err(Error::Input(format!("frame t={} silhouette must be {width}x{height}x1", f.t)));
                }
            }
            if let Some(fl) = &f.flow {
                if fl.len() != width * height {
                    return Err(Error::Dimension { expected: width * height, got: fl.len() });
                }
                if i + 1 == frames.len() {
                    return Err(Error::Input(format!("frame t={} has a flow target but no next frame", f.t)));
                }
            }
            init.dual_quaternions(f.t, rig.len())?;
        }
        let eikonal = if weights.eikonal > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(optimizer.seed);
            let b = scene.bounds;
            let pts: Vec<Vec3> = (0..EIKONAL_SAMPLES)
                .map(|_| b.min + b.extent().component_mul(&Vec3::new(rng.gen(), rng.gen(), rng.gen())))
                .collect();
            eikonal_residual(&scene, &pts, EIKONAL_STEP)?
        } else {
            0.0
        };
        let mut render = render;
        render.seed = optimizer.seed;
        Ok(FitProblem { frames, scene, rig, init, weights, render, optimizer, width, height, eikonal })
    }

    /// Reads a problem description whose file references are relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let file: ProblemFile = serde_json::from_str(&text)?;
        file.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn reduction(&self) -> Reduction {
        if self.optimizer.normalize {
            Reduction::Mean
        } else {
            Reduction::Sum
        }
    }

    /// Loss of frame `index` rendered with `pose` through `camera`.
    pub fn evaluate(&self, index: usize, pose: Vec<DualQuaternion>, camera: Camera) -> Result<LossReport> {
        let frame = &self.frames[index];
        let warp = FrameWarp::new(camera, &self.rig, pose)?;
        let next = match &frame.flow {
            Some(_) if self.weights.flow > 0.0 => {
                let nf = &self.frames[index + 1];
                Some(FrameWarp::new(nf.camera, &self.rig, self.init.dual_quaternions(nf.t, self.rig.len())?)?)
            }
            _ => None,
        };
        let out = render(&warp, &self.scene, &self.render, self.width, self.height, next.as_ref())?;
        let red = self.reduction();
        let mut terms = LossTerms { eikonal: self.eikonal, ..LossTerms::default() };
        if let Some(c) = &frame.color {
            terms.rgb = rgb_loss(&out.color, c, red)?;
        }
        if let Some(s) = &frame.silhouette {
            terms.sil = sil_loss(&out.opacity, s, red)?;
        }
        if let (Some(target), Some(rendered)) = (&frame.flow, &out.flow) {
            let valid: Vec<bool> = target.iter().zip(rendered).map(|(a, b)| a.valid && b.valid).collect();
            let r: Vec<[f64; 2]> = rendered.iter().map(|f| f.flow).collect();
            let o: Vec<[f64; 2]> = target.iter().map(|f| f.flow).collect();
            terms.flow = flow_loss(&r, &o, &valid, red)?;
        }
        if self.weights.cycle > 0.0 && self.rig.len() > 1 {
            let res: Vec<f64> = out
                .surface
                .iter()
                .zip(&out.opacity.data)
                .filter(|(_, o)| **o >= CYCLE_OPACITY)
                .map(|(p, _)| warp.cycle_residual(p))
                .collect::<Result<_>>()?;
            if !res.is_empty() {
                terms.cycle = res.iter().sum::<f64>() / res.len() as f64;
            }
        }
        total_loss(&self.weights, &terms)
    }

    /// Loss of frame `index` at flattened pose parameters, initial camera.
    pub fn pose_loss(&self, index: usize, params: &[f64]) -> Result<LossReport> {
        if params.len() != 7 * self.rig.len() {
            return Err(Error::Dimension { expected: 7 * self.rig.len(), got: params.len() });
        }
        self.evaluate(index, params_to_pose(params)?, self.frames[index].camera)
    }

    fn record(trace: &mut Vec<TraceRow>, frame: i64, stage: Stage, d: &Descent) {
        trace.extend(d.trace.iter().map(|&(iteration, loss, grad_norm, step)| TraceRow {
            frame,
            stage,
            iteration,
            loss,
            grad_norm,
            step,
        }));
    }

    /// Fit each frame's joint parameters independently, starting from the
    /// initial table. Frames outside the problem are copied unchanged.
    pub fn fit_pose(&self) -> Result<PoseFit> {
        let mut poses = self.init.clone();
        let mut trace = Vec::new();
        let mut reports = Vec::new();
        for (index, frame) in self.frames.iter().enumerate() {
            let x0 = pose_params(self.init.frame(frame.t)?);
            let f = |x: &[f64]| self.pose_loss(index, x).map(|r| r.total);
            let d = descend(&x0, &f, &normalize_pose_params, &self.optimizer)?;
            Self::record(&mut trace, frame.t, Stage::Pose, &d);
            reports.push(self.pose_loss(index, &d.x)?);
            *poses.frame_mut(frame.t)? = params_to_frame(frame.t, &d.x);
        }
        Ok(PoseFit { poses, trace, reports })
    }

    /// Fit each frame's camera extrinsic (rotation vector and translation)
    /// with the joint poses held at `poses`.
    pub fn refit_camera(&self, poses: &PoseTable) -> Result<CameraFit> {
        let mut cameras = Vec::new();
        let mut trace = Vec::new();
        let mut reports = Vec::new();
        for (index, frame) in self.frames.iter().enumerate() {
            let pose = poses.dual_quaternions(frame.t, self.rig.len())?;
            let f = |x: &[f64]| self.evaluate(index, pose.clone(), params_to_camera(&frame.camera, x)).map(|r| r.total);
            let d = descend(&camera_params(&frame.camera), &f, &|_: &mut [f64]| Ok(()), &self.optimizer)?;
            Self::record(&mut trace, frame.t, Stage::Camera, &d);
            let cam = params_to_camera(&frame.camera, &d.x);
            reports.push(self.evaluate(index, pose, cam)?);
            cameras.push(cam);
        }
        Ok(CameraFit { cameras, trace, reports })
    }
}

/// `frame,stage,iteration,loss,grad_norm,step`; the first row of each fit
/// is the initial loss with an empty gradient.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("frame,stage,iteration,loss,grad_norm,step\n");
    for r in rows {
        let stage = match r.stage {
            Stage::Pose => "pose",
            Stage::Camera => "camera",
        };
        let gn = if r.grad_norm.is_nan() { String::new() } else { format!("{:.9e}", r.grad_norm) };
        let _ = writeln!(s, "{},{},{},{:.12e},{},{:.6e}", r.frame, stage, r.iteration, r.loss, gn, r.step);
    }
    s
}

/// Either a path relative to the problem file or the value inline.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Source<T> {
    Path(String),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned> Source<T> {
    fn resolve(self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v),
            Source::Path(p) => Ok(serde_json::from_str(&std::fs::read_to_string(base.join(p))?)?),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    t: i64,
    camera: Source<Camera>,
    color: Option<PathBuf>,
    silhouette: Option<PathBuf>,
    /// Interleaved f32 flow, NaN where invalid.
    flow: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    scene: PathBuf,
    rig: Source<Rig>,
    init_pose: Source<PoseTable>,
    frames: Vec<FrameFile>,
    #[serde(default)]
    weights: LossWeights,
    #[serde(default)]
    render: RenderConfig,
    #[serde(default)]
    optimizer: OptimizerSettings,
}

impl ProblemFile {
    fn resolve(self, base: &Path) -> Result<FitProblem> {
        let scene = SdfScene::load(base.join(&self.scene))?;
        let rig = self.rig.resolve(base)?;
        let init = self.init_pose.resolve(base)?;
        let frames = self
            .frames
            .into_iter()
            .map(|f| {
                Ok(FitFrame {
                    t: f.t,
                    camera: f.camera.resolve(base)?,
                    color: f.color.map(|p| Image::read_netpbm(base.join(p))).transpose()?,
                    silhouette: f.silhouette.map(|p| Image::read_netpbm(base.join(p))).transpose()?,
                    flow: f.flow.map(|p| parse_flow_raw(&std::fs::read(base.join(p))?)).transpose()?,
                })
            })
            .collect::<Result<_>>()?;
        FitProblem::new(frames, scene, rig, init, self.weights, self.render, self.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualquat::Quaternion;
    use crate::field::Primitive;
    use crate::rig::Joint;

    fn sphere_scene() -> SdfScene {
        SdfScene::from_primitives(vec![Primitive::sphere(Vec3::zeros(), 0.5, [0.9, 0.3, 0.2])]).unwrap()
    }

    fn camera() -> Camera {
        Camera::new(RigidTransform::from_translation(Vec3::new(0.0, 0.0, 3.0)), 24.0, 24.0, 8.0, 8.0).unwrap()
    }

    fn cfg() -> RenderConfig {
        RenderConfig { samples: 48, near: 1.5, far: 4.5, beta: 0.05, ..RenderConfig::default() }
    }

    /// One frame whose targets are rendered from `pose`.
    fn problem_from(scene: SdfScene, rig: Rig, target: &PoseFrame, init: PoseFrame, opt: OptimizerSettings) -> FitProblem {
        let warp = FrameWarp::new(camera(), &rig, target.dual_quaternions().unwrap()).unwrap();
        let out = render(&warp, &scene, &cfg(), 16, 16, None).unwrap();
        let frame = FitFrame { t: 0, camera: camera(), color: Some(out.color), silhouette: Some(out.opacity), flow: None };
        FitProblem::new(
            vec![frame],
            scene,
            rig,
            PoseTable { frames: vec![init] },
            LossWeights::default(),
            cfg(),
            opt,
        )
        .unwrap()
    }

    fn one_joint() -> Rig {
        Rig::new(vec![Joint::isotropic(Vec3::zeros(), 1.0).unwrap()]).unwrap()
    }

    #[test]
    fn start_at_optimum_is_stationary() {
        let id = PoseFrame::identity(0, 1);
        let p = problem_from(sphere_scene(), one_joint(), &id, id.clone(), OptimizerSettings::default());
        let fit = p.fit_pose().unwrap();
        assert_eq!(fit.poses, p.init);
        assert!(fit.trace.last().unwrap().grad_norm < 1e-6);
        assert_eq!(fit.reports[0].terms["sil"], 0.0);
    }

    #[test]
    fn translation_recovered_and_trace_monotone() {
        let target = PoseFrame { t: 0, joints: vec![[0.08, -0.05, 0.0, 1.0, 0.0, 0.0, 0.0]] };
        let opt = OptimizerSettings { iterations: 60, ..OptimizerSettings::default() };
        let p = problem_from(sphere_scene(), one_joint(), &target, PoseFrame::identity(0, 1), opt);
        let fit = p.fit_pose().unwrap();
        let got = fit.poses.frames[0].joints[0];
        assert!((got[0] - 0.08).abs() < 0.01 && (got[1] + 0.05).abs() < 0.01, "{got:?}");
        for w in fit.trace.windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
        let q = &got[3..];
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        let start = p.pose_loss(0, &pose_params(&p.init.frames[0])).unwrap().total;
        assert!(fit.reports[0].total <= start);
    }

    #[test]
    fn fd_gradient_matches_secant() {
        let target = PoseFrame { t: 0, joints: vec![[0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]] };
        let weights = LossWeights { rgb: 1.0, ..LossWeights::ZERO };
        let mut p = problem_from(sphere_scene(), one_joint(), &target, PoseFrame::identity(0, 1), OptimizerSettings::default());
        p.weights = weights;
        let x = pose_params(&p.init.frames[0]);
        let f = |x: &[f64]| p.pose_loss(0, x).map(|r| r.total);
        let g = finite_difference_gradient(&f, &x, 1e-3).unwrap();
        let g_fine = finite_difference_gradient(&f, &x, 1e-4).unwrap();
        assert!(g[0].abs() > 1e-4);
        assert!((g[0] - g_fine[0]).abs() <= 0.05 * g_fine[0].abs());
    }

    #[test]
    fn camera_translation_recovered() {
        let id = PoseFrame::identity(0, 1);
        let mut p = problem_from(sphere_scene(), one_joint(), &id, id.clone(), OptimizerSettings {
            iterations: 60,
            ..OptimizerSettings::default()
        });
        let truth = p.frames[0].camera;
        p.frames[0].camera = truth.with_extrinsic(RigidTransform::from_translation(Vec3::new(0.05, 0.0, 3.0)));
        let fit = p.refit_camera(&p.init).unwrap();
        let t = fit.cameras[0].extrinsic.translation();
        assert!((t - truth.extrinsic.translation()).norm() < 0.01, "{t:?}");

        let q = Quaternion::from_rotation_matrix(fit.cameras[0].extrinsic.rotation());
        assert!(q.geodesic_distance(&Quaternion::IDENTITY).to_degrees() < 1.0);
    }

    #[test]
    fn nan_target_names_term() {
        let id = PoseFrame::identity(0, 1);
        let mut p = problem_from(sphere_scene(), one_joint(), &id, id.clone(), OptimizerSettings::default());
        p.frames[0].silhouette.as_mut().unwrap().data[0] = f64::NAN;
        let e = p.fit_pose().unwrap_err();
        assert!(e.is_numerical() && e.to_string().contains("sil"), "{e}");
    }

    #[test]
    fn validation() {
        let id = PoseFrame::identity(0, 1);
        let p = problem_from(sphere_scene(), one_joint(), &id, id.clone(), OptimizerSettings::default());
        let mut frames = p.frames.clone();
        frames[0].silhouette = Some(Image::new(8, 8, 1));
        let mk = |frames: Vec<FitFrame>, init: PoseTable| {
            FitProblem::new(frames, sphere_scene(), one_joint(), init, LossWeights::default(), cfg(), OptimizerSettings::default())
        };
        assert!(mk(frames, p.init.clone()).is_err());
        assert!(mk(vec![], p.init.clone()).is_err());
        assert!(mk(p.frames.clone(), PoseTable { frames: vec![PoseFrame::identity(3, 1)] }).is_err());
        let mut flow = p.frames.clone();
        flow[0].flow = Some(vec![FlowSample::INVALID; 256]);
        assert!(mk(flow, p.init.clone()).is_err());
    }

    #[test]
    fn problem_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let id = PoseFrame::identity(0, 1);
        let p = problem_from(sphere_scene(), one_joint(), &id, id.clone(), OptimizerSettings::default());
        std::fs::write(dir.path().join("scene.json"), r#"{"primitives":[{"type":"sphere","center":[0,0,0],"radius":0.5}]}"#).unwrap();
        p.frames[0].silhouette.as_ref().unwrap().write_netpbm(dir.path().join("sil.pgm")).unwrap();
        std::fs::write(dir.path().join("rig.json"), serde_json::to_string(&one_joint()).unwrap()).unwrap();
        let problem = serde_json::json!({
            "scene": "scene.json",
            "rig": "rig.json",
            "init_pose": {"frames": [{"t": 0, "joints": [[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]]}]},
            "frames": [{"t": 0, "camera": serde_json::to_value(camera()).unwrap(), "silhouette": "sil.pgm"}],
            "render": {"samples": 48, "near": 1.5, "far": 4.5, "beta": 0.05},
            "optimizer": {"iterations": 5}
        });
        let path = dir.path().join("problem.json");
        std::fs::write(&path, problem.to_string()).unwrap();
        let loaded = FitProblem::load(&path).unwrap();
        assert_eq!(loaded.size(), (16, 16));
        assert_eq!(loaded.optimizer.iterations, 5);
        let fit = loaded.fit_pose().unwrap();
        let csv = trace_csv(&fit.trace);
        assert!(csv.starts_with("frame,stage,iteration,loss,grad_norm,step\n0,pose,0,"));
    }
}
