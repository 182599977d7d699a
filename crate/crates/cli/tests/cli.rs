use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const RIG: &str = r#"{"joints":[{"center":[0,0,0],"orientation":[1,0,0,0,1,0,0,0,1],"precision":[1,1,1]}]}"#;
const IDENTITY_POSE: &str = r#"{"frames":[{"t":0,"joints":[[0,0,0,1,0,0,0]]},{"t":1,"joints":[[0,0,0,1,0,0,0]]}]}"#;
const CAMERA: &str = r#"{"extrinsic":{"rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,3]},"intrinsics":[16,16,8,8]}"#;
const SPHERE: &str = r#"{"primitives":[{"type":"sphere","center":[0,0,0],"radius":0.6,"color":[0.9,0.4,0.1]}]}"#;

fn articulate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_articulate")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace { dir: tempfile::tempdir().unwrap() };
        ws.file("rig.json", RIG);
        ws.file("pose.json", IDENTITY_POSE);
        ws.file("camera.json", CAMERA);
        ws.file("scene.json", SPHERE);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn single_line_error(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn collapse_demo_full_twist() {
    let ws = Workspace::new();
    let out_path = ws.path("report.csv");
    assert_ok(&articulate(&["collapse-demo", "--angles", "180", "--mode", "twist", "--out", p(&out_path)]));
    let text = fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("angle,lbs_mid_radius,dbs_mid_radius,lbs_volume,dbs_volume"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "180");
    assert_eq!(row[1], "0.000000000");
    assert_eq!(row[2], "1.000000000");
}

#[test]
fn identity_skin_reproduces_obj() {
    let ws = Workspace::new();
    let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0.25 -0.5 1.5\nf 1 2 3\nf 1 3 4\n";
    let mesh = ws.file("in.obj", obj);
    for method in ["lbs", "dbs"] {
        let out_path = ws.path(&format!("out_{method}.obj"));
        assert_ok(&articulate(&[
            "skin", "--mesh", p(&mesh), "--rig", p(&ws.path("rig.json")), "--pose", p(&ws.path("pose.json")),
            "--method", method, "--frame", "0", "--out", p(&out_path),
        ]));
        assert_eq!(fs::read_to_string(&out_path).unwrap(), obj);
    }
}

#[test]
fn metrics_identical_meshes() {
    let ws = Workspace::new();
    let obj = ws.file("m.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n");
    let out_path = ws.path("metrics.json");
    assert_ok(&articulate(&[
        "metrics", "--pred", p(&obj), "--gt", p(&obj), "--samples", "2000", "--seed", "42", "--out", p(&out_path),
    ]));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["f_score_2pct"], 100.0);
    assert_eq!(v["chamfer_sum"], 0.0);
    assert_eq!(v["n_samples"], 2000);
    assert_eq!(v["seed"], 42);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["chamfer_mean", "chamfer_sum", "f_score_2pct", "n_samples", "seed"]);
}

#[test]
fn extract_mesh_of_sphere() {
    let ws = Workspace::new();
    let out_path = ws.path("sphere.obj");
    assert_ok(&articulate(&["extract-mesh", "--scene", p(&ws.path("scene.json")), "--res", "24", "--out", p(&out_path)]));
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("v ")).count() > 100);
    assert!(text.lines().any(|l| l.starts_with("f ")));
    let bad = articulate(&["extract-mesh", "--scene", p(&ws.path("scene.json")), "--res", "4", "--out", p(&out_path)]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(single_line_error(&bad)["error"], "validation");
}

fn render_args<'a>(ws: &'a Workspace, prefix: &'a Path) -> Vec<String> {
    [
        "render", "--scene", p(&ws.path("scene.json")), "--camera", p(&ws.path("camera.json")), "--rig",
        p(&ws.path("rig.json")), "--pose", p(&ws.path("pose.json")), "--frame", "0", "--width", "16", "--height",
        "16", "--samples", "48", "--beta", "0.05", "--channels", "color,opacity,depth,flow", "--out-prefix",
        p(prefix),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn render_is_deterministic() {
    let ws = Workspace::new();
    let a = ws.path("a");
    let b = ws.path("b");
    for prefix in [&a, &b] {
        let args = render_args(&ws, prefix);
        assert_ok(&articulate(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    }
    for suffix in ["_color.ppm", "_opacity.pgm", "_depth.pgm", "_flow.csv"] {
        let x = fs::read(ws.path(&format!("a{suffix}"))).unwrap();
        let y = fs::read(ws.path(&format!("b{suffix}"))).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{suffix}");
    }
    assert!(fs::read(ws.path("a_color.ppm")).unwrap().starts_with(b"P6"));
    assert!(fs::read(ws.path("a_opacity.pgm")).unwrap().starts_with(b"P5"));
    let flow = fs::read_to_string(ws.path("a_flow.csv")).unwrap();
    assert!(flow.starts_with("x,y,fx,fy,valid\n"));
    // Same pose and camera in both frames: no motion.
    for line in flow.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!((f[2], f[3]), (0.0, 0.0));
    }
}

#[test]
fn match_writes_plan_and_summary() {
    let ws = Workspace::new();
    let rows_a: Vec<String> = (0..16).map(|i| if i == 0 { "1,0".into() } else if i == 1 { "0,1".into() } else { "0,0".into() }).collect();
    let rows_b: Vec<String> = (0..16).map(|i| if i == 0 { "0,1".into() } else if i == 1 { "1,0".into() } else { "0,0".into() }).collect();
    let fa = ws.file("a.csv", &(rows_a.join("\n") + "\n"));
    let fb = ws.file("b.csv", &(rows_b.join("\n") + "\n"));
    let grid = ws.file("grid.json", r#"{"dims":[2,1,1],"bounds":[0,0,0,1,1,1]}"#);
    let plan = ws.path("plan.csv");
    let matches = ws.path("matches.csv");
    let out = articulate(&[
        "match", "--features-a", p(&fa), "--features-b", p(&fb), "--grid", p(&grid), "--epsilon", "0.01",
        "--iters", "1000", "--baseline", "softargmax", "--matches", p(&matches), "--out", p(&plan),
    ]);
    assert_ok(&out);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["converged"], true);
    let mut total = 0.0;
    for line in fs::read_to_string(&plan).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let m: f64 = f[2].parse().unwrap();
        total += m;
        if m > 0.01 {
            // Pixel 0 resembles point 1 and pixel 1 resembles point 0.
            assert_ne!(f[0], f[1]);
        }
    }
    assert!((total - 1.0).abs() < 1e-6);
    let m = fs::read_to_string(&matches).unwrap();
    assert!(m.starts_with("row,x,y,z,sx,sy,sz\n0,1.0"));

    let bad = articulate(&["match", "--features-a", p(&fa), "--features-b", p(&fb), "--out", p(&plan)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(single_line_error(&bad)["message"].as_str().unwrap().contains("dimension"));
}

#[test]
fn fit_recovers_rendered_targets() {
    let ws = Workspace::new();
    let prefix = ws.path("target");
    let args = render_args(&ws, &prefix);
    let mut args: Vec<&str> = args.iter().map(String::as_str).collect();
    let ch = args.iter().position(|a| *a == "color,opacity,depth,flow").unwrap();
    args[ch] = "opacity";
    assert_ok(&articulate(&args));
    ws.file("shifted.json", r#"{"frames":[{"t":0,"joints":[[0.05,0,0,1,0,0,0]]}]}"#);
    let problem = serde_json::json!({
        "scene": "scene.json",
        "rig": "rig.json",
        "init_pose": "shifted.json",
        "frames": [{"t": 0, "camera": "camera.json", "silhouette": "target_opacity.pgm"}],
        "render": {"samples": 48, "beta": 0.05},
        "optimizer": {"iterations": 30}
    });
    let prob = ws.file("problem.json", &problem.to_string());
    let fitted = ws.path("fitted.json");
    let trace = ws.path("trace.csv");
    assert_ok(&articulate(&["fit", "--problem", p(&prob), "--out", p(&fitted), "--trace", p(&trace), "--threads", "2"]));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fitted).unwrap()).unwrap();
    let tx = v["frames"][0]["joints"][0][0].as_f64().unwrap();
    assert!(tx.abs() < 0.02, "{tx}");
    let t = fs::read_to_string(&trace).unwrap();
    let losses: Vec<f64> = t.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(losses.len() > 1);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn missing_input_is_a_validation_error() {
    let ws = Workspace::new();
    let out = articulate(&["extract-mesh", "--scene", p(&ws.path("nope.json")), "--out", p(&ws.path("x.obj"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(single_line_error(&out)["error"], "validation");
    let usage = articulate(&["skin", "--mesh"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(single_line_error(&usage)["error"], "usage");
}

#[test]
fn numerical_failure_exits_three() {
    let ws = Workspace::new();
    let rows_a: Vec<&str> = (0..16).map(|i| if i == 0 { "1,0" } else if i == 1 { "0,1" } else { "0,0" }).collect();
    let rows_b: Vec<&str> = (0..16).map(|i| if i == 0 { "0.6,1" } else if i == 1 { "0.8,0" } else { "0,0" }).collect();
    let fa = ws.file("a.csv", &rows_a.join("\n"));
    let fb = ws.file("b.csv", &rows_b.join("\n"));
    let grid = ws.file("grid.json", r#"{"dims":[2,1,1],"bounds":[0,0,0,1,1,1]}"#);
    // A denormal epsilon overflows the log-domain potentials.
    let out = articulate(&[
        "match", "--features-a", p(&fa), "--features-b", p(&fb), "--grid", p(&grid), "--epsilon", "1e-320",
        "--out", p(&ws.path("plan.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(single_line_error(&out)["error"], "numerical");
}
