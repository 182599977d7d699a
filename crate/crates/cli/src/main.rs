//! `articulate`: command-line front end for skinning, rendering, matching,
//! fitting and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use articulate::deform::{Camera, FrameWarp};
use articulate::field::{extract_mesh, SdfScene};
use articulate::fit::{trace_csv, FitProblem};
use articulate::image::Image;
use articulate::matching::{
    correlation, cost_from_similarity, entropy, expected_match, sinkhorn, softargmax_match, softargmax_weights,
    CanonicalGrid, FeatureMatrix, SinkhornOptions, DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TEMPERATURE, DEFAULT_TOL,
};
use articulate::mesh::Mesh;
use articulate::metrics::{evaluate_meshes, DEFAULT_SAMPLES, DEFAULT_SEED};
use articulate::render::{flow_csv, flow_raw, render, RenderConfig};
use articulate::rig::{PoseTable, Rig};
use articulate::skinning::{collapse_csv, collapse_report, skin_mesh, CollapseMode, Method};
use articulate::Error;

#[derive(Parser)]
#[command(name = "articulate", version, about = "Articulated shape skinning, rendering, matching and fitting")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lbs,
    Dbs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Lbs => Method::Lbs,
            MethodArg::Dbs => Method::Dbs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Bend,
    Twist,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Channel {
    Color,
    Opacity,
    Depth,
    Flow,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FlowFormat {
    Csv,
    Raw,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Baseline {
    Softargmax,
    None,
}

#[derive(Subcommand)]
enum Command {
    /// Deform a mesh by a rig pose.
    Skin {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, value_enum, default_value = "dbs")]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        frame: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mid-ring radius and volume of the two-joint cylinder under LBS and DBS.
    CollapseDemo {
        /// Comma-separated angles in degrees, each within [0, 180].
        #[arg(long, value_delimiter = ',', default_value = "0,30,60,90,120,150,180")]
        angles: Vec<f64>,
        #[arg(long, value_enum, default_value = "twist")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Volume-render a scene through a posed rig.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: i64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "color,opacity")]
        channels: Vec<Channel>,
        /// Frame the flow points into (default: frame + 1).
        #[arg(long)]
        flow_frame: Option<i64>,
        /// Camera of the flow frame (default: the same camera).
        #[arg(long)]
        flow_camera: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        flow_format: FlowFormat,
        /// Render settings as JSON; unset fields keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        no_texture_filter: bool,
        #[arg(long)]
        jitter: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Outputs are `<prefix>_color.ppm`, `_opacity.pgm`, `_depth.pgm`
        /// (depth / far) and `_flow.csv` or `_flow.bin`.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Entropic optimal transport between pixel and canonical point features.
    Match {
        #[arg(long)]
        features_a: PathBuf,
        #[arg(long)]
        features_b: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, value_enum, default_value = "none")]
        baseline: Baseline,
        #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        /// Per-pixel matched canonical points as CSV.
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover joint poses (and optionally cameras) from target images.
    Fit {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        refit_camera: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Chamfer distance and F-score between two meshes.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Marching-cubes surface of a scene's zero level set.
    ExtractMesh {
        #[arg(long)]
        scene: PathBuf,
        /// Lattice nodes per axis, 8 to 64.
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn json_text(v: &serde_json::Value) -> String {
    // serde_json maps are ordered by key.
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Skin { mesh, rig, pose, method, frame, out } => {
            let mesh = Mesh::read_obj(&mesh)?;
            let rig: Rig = read_json(&rig)?;
            let table: PoseTable = read_json(&pose)?;
            let dqs = table.dual_quaternions(frame, rig.len())?;
            skin_mesh(&mesh, &rig, &dqs, method.into())?.write_obj(&out)
        }
        Command::CollapseDemo { angles, mode, out } => {
            let mode = match mode {
                ModeArg::Bend => CollapseMode::Bend,
                ModeArg::Twist => CollapseMode::Twist,
            };
            write(&out, collapse_csv(&collapse_report(&angles, mode)?))
        }
        Command::Render {
            scene,
            camera,
            rig,
            pose,
            frame,
            width,
            height,
            channels,
            flow_frame,
            flow_camera,
            flow_format,
            config,
            samples,
            beta,
            no_texture_filter,
            jitter,
            seed,
            out_prefix,
        } => {
            let scene = SdfScene::load(&scene)?;
            let cam: Camera = read_json(&camera)?;
            let rig: Rig = read_json(&rig)?;
            let table: PoseTable = read_json(&pose)?;
            let mut cfg = match config {
                Some(p) => read_json(&p)?,
                None => RenderConfig::default(),
            };
            if let Some(n) = samples {
                cfg.samples = n;
            }
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.texture_filter &= !no_texture_filter;
            cfg.jitter |= jitter;
            let warp = FrameWarp::new(cam, &rig, table.dual_quaternions(frame, rig.len())?)?;
            let next = if channels.contains(&Channel::Flow) {
                let cam2 = match flow_camera {
                    Some(p) => read_json(&p)?,
                    None => cam,
                };
                let t2 = flow_frame.unwrap_or(frame + 1);
                Some(FrameWarp::new(cam2, &rig, table.dual_quaternions(t2, rig.len())?)?)
            } else {
                None
            };
            let out = render(&warp, &scene, &cfg, width, height, next.as_ref())?;
            for ch in channels {
                match ch {
                    Channel::Color => out.color.write_netpbm(with_suffix(&out_prefix, "_color.ppm"))?,
                    Channel::Opacity => out.opacity.write_netpbm(with_suffix(&out_prefix, "_opacity.pgm"))?,
                    Channel::Depth => {
                        let scaled = out.depth.data.iter().map(|d| d / cfg.far).collect();
                        Image::from_data(width, height, 1, scaled)?
                            .write_netpbm(with_suffix(&out_prefix, "_depth.pgm"))?
                    }
                    Channel::Flow => {
                        let flow = out.flow.as_deref().unwrap_or_default();
                        match flow_format {
                            FlowFormat::Csv => write(&with_suffix(&out_prefix, "_flow.csv"), flow_csv(flow, width))?,
                            FlowFormat::Raw => write(&with_suffix(&out_prefix, "_flow.bin"), flow_raw(flow))?,
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Match {
            features_a,
            features_b,
            grid,
            epsilon,
            iters,
            tol,
            baseline,
            temperature,
            matches,
            out,
        } => {
            let a = FeatureMatrix::load(&features_a)?;
            let b = FeatureMatrix::load(&features_b)?;
            let grid = match grid {
                Some(p) => CanonicalGrid::load(&p)?,
                None => CanonicalGrid::default(),
            };
            if grid.len() != b.len() {
                return Err(Error::Dimension { expected: grid.len(), got: b.len() });
            }
            let m = correlation(&a, &b)?;
            let plan = sinkhorn(&cost_from_similarity(&m), &SinkhornOptions { epsilon, max_iters: iters, tol })?;
            write(&out, plan.to_csv())?;
            let mean_entropy = (0..plan.rows()).map(|i| plan.row_entropy(i)).sum::<f64>() / plan.rows() as f64;
            let mut summary = json!({
                "converged": plan.converged,
                "iterations": plan.iterations,
                "marginal_error": plan.marginal_error,
                "mean_row_entropy": mean_entropy,
            });
            let soft = if baseline == Baseline::Softargmax {
                let w = softargmax_weights(&m, temperature)?;
                let e = w.row_iter().map(|r| entropy(&r.iter().copied().collect::<Vec<_>>())).sum::<f64>();
                summary["baseline_mean_row_entropy"] = json!(e / w.nrows() as f64);
                Some(softargmax_match(&m, &grid, temperature)?)
            } else {
                None
            };
            if let Some(path) = matches {
                let ot = expected_match(&plan, &grid)?;
                let mut s = String::from(if soft.is_some() { "row,x,y,z,sx,sy,sz\n" } else { "row,x,y,z\n" });
                for (i, p) in ot.iter().enumerate() {
                    s.push_str(&format!("{i},{:.9},{:.9},{:.9}", p.x, p.y, p.z));
                    if let Some(sp) = &soft {
                        s.push_str(&format!(",{:.9},{:.9},{:.9}", sp[i].x, sp[i].y, sp[i].z));
                    }
                    s.push('\n');
                }
                write(&path, s)?;
            }
            if !plan.converged {
                log::warn!("sinkhorn did not converge ({} iterations, marginal error {:e})", plan.iterations, plan.marginal_error);
            }
            print!("{}", json_text(&summary));
            Ok(())
        }
        Command::Fit { problem, refit_camera, out, trace } => {
            let problem = FitProblem::load(&problem)?;
            let fit = problem.fit_pose()?;
            let mut rows = fit.trace.clone();
            let mut doc = serde_json::to_value(&fit.poses)?;
            if refit_camera {
                let cams = problem.refit_camera(&fit.poses)?;
                rows.extend(cams.trace);
                doc["cameras"] = serde_json::to_value(&cams.cameras)?;
            }
            write(&out, json_text(&doc))?;
            if let Some(path) = trace {
                write(&path, trace_csv(&rows))?;
            }
            Ok(())
        }
        Command::Metrics { pred, gt, samples, seed, out } => {
            let report = evaluate_meshes(&Mesh::read_obj(&pred)?, &Mesh::read_obj(&gt)?, samples, seed)?;
            let text = json_text(&serde_json::to_value(report)?);
            match out {
                Some(p) => write(&p, text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::ExtractMesh { scene, res, out } => extract_mesh(&SdfScene::load(&scene)?, res)?.write_obj(&out),
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail("usage", first, 2);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail("validation", "--threads must be positive", 2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("validation", &e.to_string(), 2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_numerical() => fail("numerical", &e.to_string(), 3),
        Err(e) => fail("validation", &e.to_string(), 2),
    }
}
