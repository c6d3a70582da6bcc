use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tempscene");

const SCRIPT: &str = r#"
seed = 11
noise = 0.001

[room]
width = 3.0
depth = 3.0
viewpoints = [[0.2, 0.2, 1.6], [2.8, 2.8, 1.6], [0.2, 2.8, 1.6]]

[[prototypes]]
name = "crate"
class = 2
shape = { kind = "box", size = [0.5, 0.4, 0.4] }

[[prototypes]]
name = "bin"
class = 3
shape = { kind = "cylinder", radius = 0.15, height = 0.5 }

[[objects]]
id = 1
prototype = "crate"
pose = { x = 0.9, y = 1.0, yaw_deg = 10.0 }

[[objects]]
id = 2
prototype = "bin"
pose = { x = 2.0, y = 2.0 }

[[steps]]
events = [{ kind = "move", object = 1, pose = { x = 1.3, y = 1.8, yaw_deg = 40.0 } }]

[[steps]]
events = [{ kind = "remove", object = 2 }]
"#;

fn tempscene(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the test scene with `synth` and returns its directory.
fn synth_scene(root: &Path) -> std::path::PathBuf {
    let script = root.join("scene.toml");
    fs::write(&script, SCRIPT).unwrap();
    let dir = root.join("scene");
    let out = tempscene(&["synth", "--script", p(&script), "--out", p(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

/// Vertex colors of an ASCII PLY keyed by the `instance` column.
fn colors_by_instance(path: &Path) -> BTreeMap<u32, BTreeSet<[u8; 3]>> {
    let text = fs::read_to_string(path).unwrap();
    let (header, body) = text.split_once("end_header\n").unwrap();
    let props: Vec<&str> = header
        .lines()
        .filter_map(|l| l.strip_prefix("property "))
        .map(|l| l.rsplit(' ').next().unwrap())
        .collect();
    let col = |name: &str| props.iter().position(|p| *p == name).unwrap();
    let (r, g, b, inst) = (col("red"), col("green"), col("blue"), col("instance"));
    let mut out: BTreeMap<u32, BTreeSet<[u8; 3]>> = BTreeMap::new();
    for line in body.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let c = [f[r].parse().unwrap(), f[g].parse().unwrap(), f[b].parse().unwrap()];
        out.entry(f[inst].parse().unwrap()).or_default().insert(c);
    }
    out
}

#[test]
fn run_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let out = dir.path().join("out");
    let r = tempscene(&["run", p(&scene), "--out", p(&out), "--trace"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(out.join("traces").join("step_001.csv").exists());
    assert!(!out.join(".lock").exists());

    let e = tempscene(&["evaluate", p(&out), p(&scene), "--csv", p(&dir.path().join("m.csv"))]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let table = String::from_utf8(e.stdout).unwrap();
    assert!(table.starts_with("timestep,semantic_miou,instance_map50,transfer_miou\n"));
    assert_eq!(table.lines().count(), 4);
    assert_eq!(fs::read_to_string(dir.path().join("m.csv")).unwrap(), table);

    // same id, same color across timesteps; two objects, two colors
    let v1 = dir.path().join("v1.ply");
    let v2 = dir.path().join("v2.ply");
    let labels = out.join("labels");
    for (t, v) in [(1, &v1), (2, &v2)] {
        let x = tempscene(&["export-viz", p(&labels.join(format!("scan_00{t}.ply"))), "--out", p(v)]);
        assert_eq!(code(&x), 0, "{}", stderr(&x));
    }
    let c1 = colors_by_instance(&v1);
    let c2 = colors_by_instance(&v2);
    assert_eq!(c1.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
    let objects: BTreeSet<[u8; 3]> = c1.iter().filter(|(&k, _)| k != 0).flat_map(|(_, c)| c.clone()).collect();
    assert_eq!(objects.len(), 2);
    assert!(c1.values().all(|c| c.len() == 1));
    assert_eq!(c1[&1], c2[&1]);

    let m = tempscene(&["export-viz", p(&out.join("models").join("t002")), "--out", p(&dir.path().join("m.ply"))]);
    assert_eq!(code(&m), 0, "{}", stderr(&m));
    // object 2 is gone at t2
    assert_eq!(colors_by_instance(&dir.path().join("m.ply")).keys().copied().collect::<Vec<_>>(), vec![1]);
}

#[test]
fn induct_step_by_step() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let m0 = dir.path().join("m0");
    let m1 = dir.path().join("m1");
    let b = tempscene(&["induct", "--scan", p(&scene.join("scan_000.ply")), "--out", p(&m0)]);
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    let s = tempscene(&[
        "induct",
        "--model",
        p(&m0.join("model")),
        "--scan",
        p(&scene.join("scan_001.ply")),
        "--out",
        p(&m1),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&s), 0, "{}", stderr(&s));
    for f in ["labeled.ply", "report.json", "timing.json", "model/model.json"] {
        assert!(m1.join(f).exists(), "{f}");
    }
    assert!(!m1.join("trace.csv").exists());
    let report = fs::read_to_string(m1.join("report.json")).unwrap();
    assert!(report.contains("\"timestep\": 1"));

    let props = tempscene(&["propose", "--model", p(&m0.join("model")), "--scan", p(&scene.join("scan_001.ply"))]);
    assert_eq!(code(&props), 0, "{}", stderr(&props));
    let json = String::from_utf8(props.stdout).unwrap();
    assert!(json.contains("\"1\"") && json.contains("\"2\"") && json.contains("score"));
}

#[test]
fn corrupt_scan_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let bad = dir.path().join("bad.ply");
    fs::write(&bad, "ply\nformat ascii 1.0\nelement vertex 3\nend_header\n1 2\n").unwrap();
    let out = tempscene(&["induct", "--model", p(&scene), "--scan", p(&bad), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("parse error"), "{}", stderr(&out));
}

#[test]
fn unlabeled_bootstrap_is_a_pipeline_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let out = tempscene(&["induct", "--scan", p(&scene.join("scan_001.ply")), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bootstrap requires labels"));
}

#[test]
fn held_lock_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_scene(dir.path());
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let r = tempscene(&["run", p(&scene), "--out", p(&out)]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("locked"));
    // a refused run must not release someone else's lock
    assert!(out.join(".lock").exists());
}

#[test]
fn bad_arguments_and_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&tempscene(&["frobnicate"])), 2);
    assert_eq!(code(&tempscene(&["export-viz", "x.ply", "--out", "y.ply", "--viz-mode", "depth"])), 2);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[anneal]\niterations = \"many\"\n").unwrap();
    let out = tempscene(&["--config", p(&cfg), "evaluate", "a", "b"]);
    assert_eq!(code(&out), 2);
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let scene = synth_scene(dir.path());
    assert_eq!(code(&tempscene(&["evaluate", p(&empty), p(&scene)])), 2);
}
