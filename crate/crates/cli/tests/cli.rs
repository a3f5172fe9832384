use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use splatvox::io::save_primitives;
use splatvox::metrics::psnr;
use splatvox::stream::MotionFile;
use splatvox::{ImageBuffer, PrimitiveSet};

fn splatvox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatvox")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = splatvox(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("scene");
    let mut args = vec!["gen-synthetic", "--out-dir", p(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_synthetic_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["--scene", "blobs", "--n-splats", "100", "--n-views", "4", "--seed", "7"];
    let fa = files(&gen(a.path(), &args));
    let fb = files(&gen(b.path(), &args));
    assert!(fa.len() > 5);
    assert_eq!(fa, fb);
}

#[test]
fn static_scene_has_zero_motion() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-frames", "3"]);
    let m = MotionFile::load(s.join("motion.json")).unwrap();
    assert_eq!(m.frames, 3);
    assert!(m.motion.is_static());
}

#[test]
fn motion_with_one_frame_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatvox(&["gen-synthetic", "--n-frames", "1", "--motion", "translate", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 frames"));
}

#[test]
fn unknown_scene_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatvox(&["gen-synthetic", "--scene", "teapot", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_without_prims_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatvox(&["render", "--cameras", "c.json", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_single_splat_and_self_compare() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-splats", "1", "--n-views", "1"]);
    let r1 = dir.path().join("r1");
    ok(&["render", "--prims", p(&s.join("scene.ply")), "--cameras", p(&s.join("cameras.json")), "--out-dir", p(&r1)]);
    let pngs: Vec<_> = files(&r1).into_iter().filter(|(f, _)| f.extension().is_some_and(|e| e == "png")).collect();
    assert_eq!(pngs.len(), 1);
    assert!(r1.join("effective_config.json").exists());

    let r2 = dir.path().join("r2");
    let stdout = ok(&[
        "render",
        "--prims",
        p(&s.join("scene.ply")),
        "--cameras",
        p(&s.join("cameras.json")),
        "--out-dir",
        p(&r2),
        "--gt-dir",
        p(&r1),
    ]);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["psnr"], 99.0);
}

#[test]
fn fuse_of_empty_input_fails_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &[]);
    let empty = dir.path().join("empty.ply");
    save_primitives(&empty, &PrimitiveSet::new(0, None), None).unwrap();
    let out = splatvox(&[
        "fuse",
        "--prims",
        p(&empty),
        "--target-camera",
        p(&s.join("target_camera.json")),
        "--out-prims",
        p(&dir.path().join("out.ply")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no occupied voxels"));
}

#[test]
fn fuse_collapses_overlapping_sets() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-splats", "100"]);
    let ply = s.join("scene.ply");
    let out = dir.path().join("fused").join("out.ply");
    let stdout = ok(&[
        "fuse",
        "--prims",
        p(&ply),
        "--prims",
        p(&ply),
        "--target-camera",
        p(&s.join("target_camera.json")),
        "--out-prims",
        p(&out),
        "--fine-depth",
        "64",
        "--fine-hw",
        "64x64",
        "--seed",
        "9",
    ]);
    let sm: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(sm["splats_in"], 200);
    assert!(sm["splats_out"].as_u64().unwrap() <= sm["retained_fine"].as_u64().unwrap());
    assert!(sm["retained_fine"].as_u64().unwrap() <= sm["occupied_fine"].as_u64().unwrap());
    for key in ["multiview", "deposit", "transformer", "head", "render"] {
        assert!(sm["timings"][key].is_number(), "{key}");
    }
    let file: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("summary.json")).unwrap()).unwrap();
    assert_eq!(file, sm);
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(out.parent().unwrap().join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["fine_hw"], serde_json::json!([64, 64]));
}

#[test]
fn fuse_rejects_unpaired_features() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &[]);
    let ply = s.join("scene.ply");
    let out = splatvox(&[
        "fuse",
        "--prims",
        p(&ply),
        "--prims",
        p(&ply),
        "--features",
        "a.bin",
        "--target-camera",
        p(&s.join("target_camera.json")),
        "--out-prims",
        p(&dir.path().join("out.ply")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identity_head_fuse_rerenders_input() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-splats", "100"]);
    let target = s.join("target_camera.json");
    let fused = dir.path().join("fused.png");
    ok(&[
        "fuse",
        "--prims",
        p(&s.join("scene.ply")),
        "--target-camera",
        p(&target),
        "--out-prims",
        p(&dir.path().join("fused.ply")),
        "--render-out",
        p(&fused),
        "--identity-head",
        "--keep-fraction",
        "1",
    ]);
    let direct = ImageBuffer::load_png(s.join("frames/target/frame_0000.png")).unwrap();
    let refined = ImageBuffer::load_png(&fused).unwrap();
    assert!(psnr(&refined, &direct).unwrap() >= 30.0);
}

fn run_stream(dir: &Path, scene: &Path, tracker: &str) -> Vec<Value> {
    let frames = scene.join("frames");
    let out = dir.join("stream");
    let cams = scene.join("cameras.json");
    let target = scene.join("target_camera.json");
    let oracle = format!("oracle:{}", p(&frames.join("prims")));
    let args = [
        "stream",
        "--frames-dir",
        p(&frames),
        "--cameras",
        p(&cams),
        "--target-camera",
        p(&target),
        "--tracker",
        tracker,
        "--predictor",
        &oracle,
        "--out-dir",
        p(&out),
    ];
    let stdout = ok(&args);
    assert!(out.join("effective_config.json").exists());
    let logged = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(logged, stdout);
    stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn static_stream_has_no_flicker() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-frames", "10", "--scene", "orbit"]);
    let log = run_stream(dir.path(), &s, "identity");
    assert_eq!(log.len(), 10);
    assert!(log[0]["flicker_t"].is_null());
    for entry in &log[1..] {
        // Logged flicker is scaled by 1e3.
        assert!(entry["flicker_t"].as_f64().unwrap() / 1e3 <= 1e-4, "{entry}");
        assert!(entry["n_tokens"].as_u64().unwrap() > 0);
    }
}

#[test]
fn ground_truth_tracker_triangulates_translation() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--scene", "checker", "--n-splats", "200", "--n-frames", "4", "--motion", "translate"]);
    let tracker = format!("groundtruth:{}", p(&s.join("motion.json")));
    let log = run_stream(dir.path(), &s, &tracker);
    for entry in &log[1..] {
        let sm = &entry["summary"];
        assert!(sm["anchors"].as_u64().unwrap() > 0);
        assert_eq!(sm["triangulated"], sm["anchors"]);
    }
}

#[test]
fn stream_names_missing_view() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-views", "3"]);
    std::fs::remove_dir_all(s.join("frames/view_2")).unwrap();
    let out = splatvox(&[
        "stream",
        "--frames-dir",
        p(&s.join("frames")),
        "--cameras",
        p(&s.join("cameras.json")),
        "--target-camera",
        p(&s.join("target_camera.json")),
        "--out-dir",
        p(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("view_2"));
}

#[test]
fn eval_reports_metrics_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-frames", "3", "--motion", "swirl"]);
    let gt = s.join("frames/target");
    let stdout = ok(&["eval", "--pred-dir", p(&gt), "--gt-dir", p(&gt)]);
    let r: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(r["psnr"], 99.0);
    assert_eq!(r["flicker"], 0.0);
    assert_eq!(r["per_frame"].as_array().unwrap().len(), 3);
    assert!((r["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen(dir.path(), &["--n-splats", "1", "--n-views", "1"]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"background": [1.0, 1.0, 1.0], "seed": 4}"#).unwrap();
    let out = dir.path().join("r");
    ok(&[
        "render",
        "--prims",
        p(&s.join("scene.ply")),
        "--cameras",
        p(&s.join("cameras.json")),
        "--out-dir",
        p(&out),
        "--config",
        p(&cfg),
        "--background",
        "0,0,1",
    ]);
    let echoed: Value = serde_json::from_str(&std::fs::read_to_string(out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(echoed["background"], serde_json::json!([0.0, 0.0, 1.0]));
    assert_eq!(echoed["seed"], 4);
    let img = ImageBuffer::load_png(out.join("view_0.png")).unwrap();
    assert_eq!(img.pixel(0, 0), &[0.0, 0.0, 1.0]);
}
