use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raycal::distortion::{ParametricProfile, ProfileKind};
use raycal::image::Image;
use raycal::lens_db::{LensCategory, LensDatabase, LensProfile, LensRecord};
use raycal::synth::{line_fit_residual, psnr, soft_checkerboard, trace_vertical_edge};
use serde_json::Value;
use tempfile::TempDir;

fn raycal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raycal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp paths")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes `n` frames of a soft checkerboard into `dir/frames`.
fn frames(dir: &Path, n: usize, w: u32, h: u32) -> PathBuf {
    let d = dir.join("frames");
    fs::create_dir_all(&d).unwrap();
    for i in 0..n {
        soft_checkerboard(w, h, 16.0 + 4.0 * i as f64)
            .unwrap()
            .write_pnm(d.join(format!("f{i:02}.pgm")))
            .unwrap();
    }
    d
}

fn identity_db(dir: &Path) -> PathBuf {
    let rec = LensRecord {
        name: "identity".into(),
        fov_deg: 60.0,
        f_number: 2.8,
        numerical_aperture: 0.18,
        category: LensCategory::Symmetric,
        profile: LensProfile::Parametric(
            ParametricProfile::new(ProfileKind::RadialPoly, vec![0.0, 0.0], 200.0).unwrap(),
        ),
    };
    let p = dir.join("identity.jsonl");
    fs::write(&p, serde_json::to_string(&rec).unwrap() + "\n").unwrap();
    p
}

fn bundled_db(dir: &Path) -> PathBuf {
    let p = dir.join("bundled.jsonl");
    fs::write(&p, LensDatabase::bundled().to_jsonl().unwrap()).unwrap();
    p
}

#[test]
fn simulate_identity_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 2, 64, 48);
    let db = identity_db(tmp.path());
    let out = tmp.path().join("out");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&out),
        "--db",
        s(&db),
        "--seed",
        "3",
    ]));
    for name in ["f00.pgm", "f01.pgm"] {
        assert_eq!(fs::read(input.join(name)).unwrap(), fs::read(out.join(name)).unwrap());
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["meta"]["seed"], 3);
    assert_eq!(manifest["record"], "identity");
    assert_eq!(manifest["frames"], 2);
    assert!(manifest["meta"]["tool_version"].is_string());
    assert_eq!(manifest["meta"]["inputs"].as_object().unwrap().len(), 3);
    let field = read_json(&out.join("field.json"));
    assert_eq!(field["meta"]["seed"], 3);
    let scene = read_json(&out.join("gt_scene.json"));
    assert_eq!(scene["bundles"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 2, 80, 60);
    let run = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        assert_ok(&raycal(&[
            "simulate",
            "--images",
            s(&input),
            "--out",
            s(&out),
            "--seed",
            seed,
        ]));
        read_json(&out.join("manifest.json"))["outputs"].clone()
    };
    let a = run("11", "a");
    let b = run("11", "b");
    assert_eq!(a, b);
    assert_ne!(a, run("12", "c"));
}

#[test]
fn simulate_then_undistort_with_field_restores_frames() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 1, 320, 240);
    let sim = tmp.path().join("sim");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&sim),
        "--record",
        "synthetic-barrel-mild",
    ]));
    let fixed = tmp.path().join("fixed");
    assert_ok(&raycal(&[
        "undistort",
        "--images",
        s(&sim),
        "--field",
        s(&sim.join("field.json")),
        "--out",
        s(&fixed),
    ]));
    let original = Image::read_pnm(input.join("f00.pgm")).unwrap();
    let distorted = Image::read_pnm(sim.join("f00.pgm")).unwrap();
    let restored = Image::read_pnm(fixed.join("f00.pgm")).unwrap();
    let before = psnr(&original, &distorted, 0.8).unwrap();
    let after = psnr(&original, &restored, 0.8).unwrap();
    assert!(
        after > 35.0 && after > before + 10.0,
        "PSNR {before:.2} -> {after:.2} dB"
    );
    let manifest = read_json(&fixed.join("manifest.json"));
    assert_eq!(manifest["source"], "field");
    assert!(manifest["outputs"].get("flow.rcfl").is_some());
}

#[test]
fn undistort_pinhole_bundle_is_zero_flow() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 1, 96, 72);
    let sim = tmp.path().join("sim");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&sim),
        "--db",
        s(&identity_db(tmp.path())),
    ]));
    let fixed = tmp.path().join("fixed");
    assert_ok(&raycal(&[
        "undistort",
        "--images",
        s(&input),
        "--bundle",
        s(&sim.join("gt_scene.json")),
        "--out",
        s(&fixed),
    ]));
    let manifest = read_json(&fixed.join("manifest.json"));
    assert_eq!(manifest["source"], "bundle");
    assert!(manifest["max_flow_px"].as_f64().unwrap() < 1e-6, "{manifest}");
    assert!(manifest["fit_rms_angular_deg"].as_f64().unwrap() < 1e-6);
    let a = Image::read_pnm(input.join("f00.pgm")).unwrap();
    let b = Image::read_pnm(fixed.join("f00.pgm")).unwrap();
    assert!(psnr(&a, &b, 1.0).unwrap() > 60.0);
    assert_eq!(read_json(&fixed.join("fit.json"))["converged"], true);
}

#[test]
fn undistort_bundle_straightens_barrel_edges() {
    let tmp = TempDir::new().unwrap();
    let (w, h) = (320u32, 240u32);
    let input = tmp.path().join("frames");
    fs::create_dir_all(&input).unwrap();
    let x0 = 70.0;
    Image::from_fn(w, h, |x, _| {
        (127.5 + 127.5 * ((x as f64 + 0.5 - x0) / 1.5).tanh()) as f32
    })
    .unwrap()
    .write_pnm(input.join("edge.pgm"))
    .unwrap();
    let sim = tmp.path().join("sim");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&sim),
        "--record",
        "synthetic-barrel-wide",
        "--rows",
        "12",
        "--cols",
        "16",
    ]));
    let fixed = tmp.path().join("fixed");
    assert_ok(&raycal(&[
        "undistort",
        "--images",
        s(&sim),
        "--bundle",
        s(&sim.join("gt_scene.json")),
        "--out",
        s(&fixed),
    ]));
    let trace = |p: &Path| {
        let pts = trace_vertical_edge(&Image::read_pnm(p).unwrap(), x0, 40.0, 30..210, 20.0);
        assert!(pts.len() > 150, "traced {} rows", pts.len());
        line_fit_residual(&pts).unwrap()
    };
    let bent = trace(&sim.join("edge.pgm"));
    let straight = trace(&fixed.join("edge.pgm"));
    assert!(straight < 0.5 * bent, "edge residual {bent:.3} -> {straight:.3}");
}

#[test]
fn missing_inputs_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let nowhere = tmp.path().join("nowhere");
    let out = tmp.path().join("out");
    let code = |args: &[&str]| raycal(args).status.code();
    assert_eq!(
        code(&[
            "undistort",
            "--images",
            s(&nowhere),
            "--field",
            "x.json",
            "--out",
            s(&out)
        ]),
        Some(64)
    );
    let input = frames(tmp.path(), 1, 32, 32);
    assert_eq!(
        code(&[
            "undistort",
            "--images",
            s(&input),
            "--field",
            s(&nowhere),
            "--out",
            s(&out)
        ]),
        Some(64)
    );
    // Exactly one of --bundle/--field.
    assert_eq!(code(&["undistort", "--images", s(&input), "--out", s(&out)]), Some(64));
    assert_eq!(
        code(&[
            "undistort",
            "--images",
            s(&input),
            "--bundle",
            "a.json",
            "--field",
            "b.json",
            "--out",
            s(&out)
        ]),
        Some(64)
    );
    assert_eq!(code(&["fit", "--bundle", s(&nowhere), "--out", s(&out)]), Some(64));
    assert_eq!(code(&["no-such-command"]), Some(64));
}

#[test]
fn malformed_inputs_are_input_errors() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = tmp.path().join("fit.json");
    assert_eq!(
        raycal(&["fit", "--bundle", s(&bad), "--out", s(&out)]).status.code(),
        Some(2)
    );
    let db = tmp.path().join("db.jsonl");
    fs::write(&db, "{\"name\": \"x\"}\n").unwrap();
    let r = raycal(&["lens", "validate", "--db", s(&db)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 1"));
}

#[test]
fn fit_and_eval_on_simulated_scene() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 4, 128, 96);
    let sim = tmp.path().join("sim");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&sim),
        "--db",
        s(&identity_db(tmp.path())),
        "--focal",
        "150",
    ]));
    let scene = sim.join("gt_scene.json");
    let fit = tmp.path().join("fit.json");
    assert_ok(&raycal(&[
        "fit",
        "--bundle",
        s(&scene),
        "--camera",
        "2",
        "--out",
        s(&fit),
        "--seed",
        "5",
    ]));
    let v = read_json(&fit);
    assert!(
        (v["intrinsics"]["fx"].as_f64().unwrap() - 150.0).abs() < 150.0 * 1e-6,
        "{}",
        v["intrinsics"]
    );
    assert_eq!(v["converged"], true);
    assert_eq!(v["meta"]["seed"], 5);
    assert_eq!(
        raycal(&["fit", "--bundle", s(&scene), "--camera", "9", "--out", s(&fit)])
            .status
            .code(),
        Some(64)
    );

    let report = tmp.path().join("eval.json");
    assert_ok(&raycal(&[
        "eval",
        "--pred",
        s(&scene),
        "--gt",
        s(&scene),
        "--out",
        s(&report),
    ]));
    let r = read_json(&report);
    assert_eq!(r["rotation_acc_at_15"], 1.0);
    assert_eq!(r["center_acc_at_0_1"], 1.0);
    assert!(r["mean_angular_deg"].as_f64().unwrap() < 1e-5);
    assert_eq!(r["per_pair_rotation_err"].as_array().unwrap().len(), 6);
    assert_eq!(r["meta"]["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn ddpm_demo_logs_every_step() {
    let tmp = TempDir::new().unwrap();
    let input = frames(tmp.path(), 1, 64, 48);
    let sim = tmp.path().join("sim");
    assert_ok(&raycal(&[
        "simulate",
        "--images",
        s(&input),
        "--out",
        s(&sim),
        "--rows",
        "3",
        "--cols",
        "4",
    ]));
    let csv = tmp.path().join("demo.csv");
    assert_ok(&raycal(&[
        "ddpm-demo",
        "--target",
        s(&sim.join("gt_scene.json")),
        "--T",
        "20",
        "--zero-noise",
        "--out",
        s(&csv),
        "--seed",
        "8",
    ]));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let meta: Value = serde_json::from_str(lines[0].strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(meta["seed"], 8);
    assert_eq!(lines[1], "step,mse,angular_deg");
    assert_eq!(lines.len(), 2 + 20);
    let steps: Vec<usize> = lines[2..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(steps, (0..20).rev().collect::<Vec<_>>());
    let last: Vec<f64> = lines[21].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert!(last[0] < 1e-12 && last[1] < 1e-5, "{last:?}");

    // Stdout mode with the same seed gives the same log.
    let stdout = raycal(&[
        "ddpm-demo",
        "--target",
        s(&sim.join("gt_scene.json")),
        "--steps",
        "20",
        "--zero-noise",
        "--seed",
        "8",
    ]);
    assert_ok(&stdout);
    assert_eq!(
        String::from_utf8(stdout.stdout)
            .unwrap()
            .lines()
            .skip(1)
            .collect::<Vec<_>>(),
        lines[1..]
    );
}

#[test]
fn edges_writes_map_and_sidecar() {
    let tmp = TempDir::new().unwrap();
    let img = tmp.path().join("step.pgm");
    Image::from_fn(40, 30, |x, _| if x < 20 { 0.0 } else { 255.0 })
        .unwrap()
        .write_pnm(&img)
        .unwrap();
    let out = tmp.path().join("edges.pgm");
    assert_ok(&raycal(&["edges", "--in", s(&img), "--out", s(&out)]));
    let map = Image::read_pnm(&out).unwrap();
    assert_eq!((map.width(), map.height()), (40, 30));
    let count = (0..30)
        .flat_map(|y| (0..40).map(move |x| (x, y)))
        .filter(|&(x, y)| map.get(x, y, 0) > 0.0)
        .count();
    let side = read_json(&tmp.path().join("edges.pgm.meta.json"));
    assert_eq!(side["edge_pixels"].as_u64().unwrap() as usize, count);
    assert!(count >= 20, "{count} edge pixels");
    assert_eq!(side["params"]["low"], 50.0);
    assert_eq!(side["output_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(
        raycal(&["edges", "--in", s(&img), "--out", s(&out), "--kernel", "4"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn lens_validate_and_sample() {
    let tmp = TempDir::new().unwrap();
    let db = bundled_db(tmp.path());
    let v = raycal(&["lens", "validate", "--db", s(&db)]);
    assert_ok(&v);
    let text = String::from_utf8(v.stdout).unwrap();
    assert!(text.starts_with("12 records OK"), "{text}");

    let sample = |seed: &str| {
        let o = raycal(&["lens", "sample", "--category", "barrel", "--seed", seed]);
        assert_ok(&o);
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let a = sample("42");
    assert_eq!(a["category"], "barrel");
    assert_eq!(a["name"], "synthetic-barrel-mild");
    assert_eq!(a["meta"]["seed"], 42);
    assert_eq!(a, sample("42"));

    let out = tmp.path().join("rec.json");
    assert_ok(&raycal(&["lens", "sample", "--db", s(&db), "--out", s(&out)]));
    let rec = read_json(&out);
    assert!(rec["meta"]["inputs"]
        .as_object()
        .unwrap()
        .values()
        .next()
        .unwrap()
        .is_string());

    let one = identity_db(tmp.path());
    assert_eq!(
        raycal(&["lens", "sample", "--db", s(&one), "--category", "fisheye"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn selftest_reports_and_detects_faults() {
    let ok = raycal(&["selftest", "--json"]);
    assert_ok(&ok);
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 9);

    let bad = raycal(&["pipeline-selftest", "--inject-fault", "--json"]);
    assert_eq!(bad.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(report["fault_injected"], true);
    let failed: Vec<u64> = report["criteria"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["id"].as_u64().unwrap())
        .collect();
    assert_eq!(failed, vec![4]);
}
