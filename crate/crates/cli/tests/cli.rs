use std::path::{Path, PathBuf};

use burstsr::align::endpoint_error;
use burstsr::io::{read_tensor, write_png_code_values, write_tensor, write_tensor_as, Dtype};
use burstsr::metrics::mse;
use burstsr::scene::{generate, SceneKind};
use burstsr::{AffineWarp, Tensor3};
use burstsr_cli::manifest::{MetricsFile, Psnr, SceneManifest, WarpsFile};
use burstsr_cli::run_args;
use tempfile::TempDir;

fn write_pngs(dir: &Path, kind: SceneKind, size: usize, seeds: &[u64]) -> PathBuf {
    let input = dir.join("in");
    std::fs::create_dir_all(&input).unwrap();
    for &s in seeds {
        let img = generate(kind, size, size, s);
        write_png_code_values(&img, input.join(format!("scene{s:02}.png"))).unwrap();
    }
    input
}

fn ok(args: &[&str]) {
    assert_eq!(run_args(args.iter().copied()).unwrap(), 0, "{args:?}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn default_synthesis_geometry() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Smooth, 384, &[1]);
    let out = tmp.path().join("ds");
    ok(&[
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--seed",
        "5",
    ]);
    let dir = out.join("scene01");
    let m = SceneManifest::load(&dir).unwrap();
    assert_eq!((m.version, m.burst_size, m.scale), (1, 14, 4));
    assert_eq!(m.frames.len(), 14);
    assert_eq!(m.frames[0], "frame_00.btf");
    assert_eq!(m.frames[13], "frame_13.btf");
    assert!(m.gt_warps().unwrap()[0].is_identity());
    assert_eq!(
        read_tensor(dir.join("gt.btf")).unwrap().dims(),
        (384, 384, 3)
    );
    for f in &m.frames {
        assert_eq!(read_tensor(dir.join(f)).unwrap().dims(), (48, 48, 4));
    }
}

#[test]
fn single_frame_scenes() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Smooth, 64, &[2]);
    let out = tmp.path().join("ds");
    ok(&[
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--burst",
        "1",
        "--scale",
        "2",
    ]);
    let m = SceneManifest::load(&out.join("scene02")).unwrap();
    assert_eq!(m.burst_size, 1);
    assert_eq!(m.frames, vec!["frame_00.btf".to_string()]);
    assert_eq!(m.warps.len(), 1);
}

#[test]
fn same_seed_gives_identical_trees() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Textured, 64, &[3, 4, 5]);
    let run = |name: &str, seed: &str, jobs: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "synthesize",
            "--input",
            s(&input),
            "--out",
            s(&out),
            "--seed",
            seed,
            "--burst",
            "4",
            "--jobs",
            jobs,
        ]);
        files_under(&out)
    };
    let a = run("a", "9", "1");
    assert_eq!(a.len(), 3 * 6);
    assert_eq!(a, run("b", "9", "3"));
    assert_ne!(a, run("c", "10", "1"));
}

#[test]
fn bad_dimensions_are_skipped() {
    let tmp = TempDir::new().unwrap();
    let input = tmp.path().join("in");
    std::fs::create_dir_all(&input).unwrap();
    write_png_code_values(
        &generate(SceneKind::Smooth, 60, 60, 0),
        input.join("bad.png"),
    )
    .unwrap();
    let out = tmp.path().join("ds");
    let args = ["synthesize", "--input", s(&input), "--out", s(&out)];
    assert_eq!(run_args(args).unwrap(), 1);
    write_png_code_values(
        &generate(SceneKind::Smooth, 64, 64, 0),
        input.join("good.png"),
    )
    .unwrap();
    assert_eq!(run_args(args).unwrap(), 0);
    assert!(out.join("good").join("meta.json").is_file());
    assert!(!out.join("bad").exists());
}

#[test]
fn flags_are_validated() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Smooth, 64, &[0]);
    let out = tmp.path().join("ds");
    assert!(run_args([
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--noise-shot",
        "x"
    ])
    .is_err());
    assert!(run_args([
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--noise-shot",
        "1e-2,1e-3"
    ])
    .is_err());
    assert!(run_args([
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--burst",
        "0"
    ])
    .is_err());
    assert!(run_args(["reconstruct", "--scene", s(&out), "--out", "x.btf"]).is_err());
    assert!(run_args(["align", "--scene", s(&out), "--model", "projective"]).is_err());
}

fn structured_scene(tmp: &Path, seed: u64, extra: &[&str]) -> PathBuf {
    let input = write_pngs(tmp, SceneKind::Structured, 384, &[seed]);
    let out = tmp.join("ds");
    let mut args = vec![
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--seed",
        "1",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out.join(format!("scene{seed:02}"))
}

#[test]
fn zero_motion_aligns_to_identity() {
    let tmp = TempDir::new().unwrap();
    let dir = structured_scene(
        tmp.path(),
        6,
        &[
            "--burst",
            "6",
            "--max-trans",
            "0",
            "--max-rot",
            "0",
            "--noise-shot",
            "1e-4",
            "--noise-read",
            "1e-6",
        ],
    );
    ok(&["align", "--scene", s(&dir)]);
    let w = WarpsFile::load(&dir).unwrap();
    assert_eq!(w.version, 1);
    assert_eq!(w.frames.len(), 6);
    for f in &w.frames {
        assert!(f.converged);
        let e = endpoint_error(
            &AffineWarp::new(f.matrix).unwrap(),
            &AffineWarp::identity(),
            (384, 384),
            8,
        );
        // 4 HR px per LR px
        assert!(e / 4.0 < 0.02, "{:?}", f.matrix);
    }
}

#[test]
fn alignment_matches_manifest_and_flags_failures() {
    let tmp = TempDir::new().unwrap();
    let dir = structured_scene(
        tmp.path(),
        7,
        &[
            "--burst",
            "6",
            "--noise-shot",
            "1e-3",
            "--noise-read",
            "1e-5",
        ],
    );
    ok(&["align", "--scene", s(&dir)]);
    let m = SceneManifest::load(&dir).unwrap();
    let est = WarpsFile::load(&dir).unwrap().warps().unwrap();
    let err = burstsr::align::mean_endpoint_error(&est, &m.gt_warps().unwrap(), 0, (384, 384), 8);
    assert!(err < 0.1, "endpoint error {err}");

    // replace one frame with uniform noise
    let noise = Tensor3::from_fn(48, 48, 4, |y, x, c| {
        ((y * 7919 + x * 104729 + c * 1299709) % 1000) as f64 / 1000.0
    });
    write_tensor(&noise, dir.join(&m.frames[3])).unwrap();
    ok(&["align", "--scene", s(&dir)]);
    let w = WarpsFile::load(&dir).unwrap();
    assert!(!w.frames[3].converged);
    assert!(AffineWarp::new(w.frames[3].matrix).unwrap().is_identity());
    assert!(w
        .frames
        .iter()
        .enumerate()
        .all(|(i, f)| i == 3 || f.converged));
}

#[test]
fn missing_frames_are_errors() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Smooth, 64, &[8]);
    let out = tmp.path().join("ds");
    ok(&[
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--burst",
        "3",
    ]);
    let dir = out.join("scene08");
    std::fs::remove_file(dir.join("frame_02.btf")).unwrap();
    assert!(run_args(["align", "--scene", s(&dir)]).is_err());
    assert!(run_args([
        "reconstruct",
        "--scene",
        s(&dir),
        "--use-gt-warps",
        "--out",
        s(&tmp.path().join("x.btf"))
    ])
    .is_err());
}

#[test]
fn reconstruct_outputs_and_reports() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Textured, 64, &[9]);
    let out = tmp.path().join("ds");
    ok(&[
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--noise-shot",
        "0",
        "--noise-read",
        "0",
    ]);
    let dir = out.join("scene09");
    let cfg = tmp.path().join("solver.json");
    std::fs::write(&cfg, r#"{"K": 10, "lambda": 0.0, "sigma": 0.01, "prior": {"name": "identity"}, "alpha": "spectral"}"#).unwrap();
    let sr = tmp.path().join("res").join("sr.btf");
    let png = tmp.path().join("sr.png");
    ok(&[
        "reconstruct",
        "--scene",
        s(&dir),
        "--config",
        s(&cfg),
        "--use-gt-warps",
        "--out",
        s(&sr),
        "--png",
        s(&png),
    ]);
    assert_eq!(read_tensor(&sr).unwrap().dims(), (64, 64, 3));
    assert!(png.is_file());
    let csv = std::fs::read_to_string(sr.with_extension("csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 1 + 10);
    assert_eq!(rows[0], "k,data_fidelity,objective,residual_norm,step_norm");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sr.with_extension("json")).unwrap()).unwrap();
    let r0 = summary["initial"]["residual_norm"].as_f64().unwrap();
    let rk = summary["last"]["residual_norm"].as_f64().unwrap();
    assert!(rk < 0.1 * r0, "{rk} vs {r0}");
    assert_eq!(summary["warps"], "gt");

    // K from the config is honored
    std::fs::write(&cfg, r#"{"K": 3}"#).unwrap();
    ok(&[
        "reconstruct",
        "--scene",
        s(&dir),
        "--config",
        s(&cfg),
        "--use-gt-warps",
        "--out",
        s(&sr),
    ]);
    assert_eq!(
        std::fs::read_to_string(sr.with_extension("csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 3
    );

    // estimated warps need `align` first
    let args = [
        "reconstruct",
        "--scene",
        s(&dir),
        "--use-estimated-warps",
        "--out",
        s(&sr),
    ];
    assert!(run_args(args).is_err());
    ok(&["align", "--scene", s(&dir)]);
    ok(&args);

    std::fs::write(&cfg, r#"{"K": 7, "bogus": 1}"#).unwrap();
    assert!(run_args([
        "reconstruct",
        "--scene",
        s(&dir),
        "--config",
        s(&cfg),
        "--use-gt-warps",
        "--out",
        s(&sr)
    ])
    .is_err());
}

#[test]
fn evaluate_metrics_and_aggregate() {
    let tmp = TempDir::new().unwrap();
    let input = write_pngs(tmp.path(), SceneKind::Smooth, 32, &[10, 11]);
    let out = tmp.path().join("ds");
    ok(&[
        "synthesize",
        "--input",
        s(&input),
        "--out",
        s(&out),
        "--burst",
        "2",
    ]);
    let (a, b) = (out.join("scene10"), out.join("scene11"));

    // identical → "inf" sentinel
    ok(&["evaluate", "--scene", s(&a), "--sr", s(&a.join("gt.btf"))]);
    let text = std::fs::read_to_string(a.join("metrics.json")).unwrap();
    assert!(text.contains("\"psnr\": \"inf\""));
    let doc: MetricsFile = serde_json::from_str(&text).unwrap();
    assert_eq!(doc.version, 1);
    assert_eq!(doc.scenes[0].psnr, Psnr(f64::INFINITY));
    assert!((doc.scenes[0].ssim - 1.0).abs() < 1e-9);

    // uniform 0.1 error → 20 dB
    let gt = Tensor3::filled(32, 32, 3, 0.5);
    write_tensor_as(&gt, b.join("gt.btf"), Dtype::F64).unwrap();
    let sr = b.join("sr.btf");
    write_tensor_as(&gt.map(|v| v + 0.1), &sr, Dtype::F64).unwrap();
    let agg = tmp.path().join("metrics.json");
    ok(&[
        "evaluate",
        "--scene",
        s(&a),
        "--sr",
        s(&a.join("gt.btf")),
        "--scene",
        s(&b),
        "--sr",
        s(&sr),
        "--out",
        s(&agg),
    ]);
    let doc: MetricsFile = serde_json::from_str(&std::fs::read_to_string(&agg).unwrap()).unwrap();
    assert_eq!(doc.scenes.len(), 2);
    assert!((doc.scenes[1].psnr.0 - 20.0).abs() < 1e-9);
    assert_eq!(doc.mean.psnr, Psnr(f64::INFINITY));
    assert!((doc.mean.ssim - (doc.scenes[0].ssim + doc.scenes[1].ssim) / 2.0).abs() < 1e-15);

    // finite aggregate is the arithmetic mean
    let sr2 = a.join("sr.btf");
    let gt_a = read_tensor(a.join("gt.btf")).unwrap();
    write_tensor(&gt_a.map(|v| v * 0.9), &sr2).unwrap();
    ok(&[
        "evaluate",
        "--scene",
        s(&a),
        "--sr",
        s(&sr2),
        "--scene",
        s(&b),
        "--sr",
        s(&sr),
        "--out",
        s(&agg),
    ]);
    let doc: MetricsFile = serde_json::from_str(&std::fs::read_to_string(&agg).unwrap()).unwrap();
    let expect = 10.0 * (1.0 / mse(&read_tensor(&sr2).unwrap(), &gt_a).unwrap()).log10();
    assert!((doc.scenes[0].psnr.0 - expect).abs() < 1e-9);
    assert!((doc.mean.psnr.0 - (doc.scenes[0].psnr.0 + doc.scenes[1].psnr.0) / 2.0).abs() < 1e-12);

    // mismatches
    let small = tmp.path().join("small.btf");
    write_tensor(&Tensor3::zeros(16, 16, 3), &small).unwrap();
    assert!(run_args([
        "evaluate",
        "--scene",
        s(&a),
        "--sr",
        s(&small),
        "--out",
        s(&agg)
    ])
    .is_err());
    assert!(run_args([
        "evaluate",
        "--scene",
        s(&a),
        "--scene",
        s(&b),
        "--sr",
        s(&sr)
    ])
    .is_err());
}

#[test]
fn selftest_passes_and_detects_a_broken_adjoint() {
    assert_eq!(run_args(["selftest"]).unwrap(), 0);
    assert_eq!(
        run_args(["selftest", "--trials", "20", "--break-warp-adjoint"]).unwrap(),
        1
    );
}

#[test]
fn binary_reports_errors_with_exit_status() {
    let bin = env!("CARGO_BIN_EXE_burstsr");
    let st = std::process::Command::new(bin)
        .args(["align", "--scene", "/nonexistent/scene"])
        .output()
        .unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("error"));
    let st = std::process::Command::new(bin)
        .args(["selftest", "--trials", "5"])
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("all checks passed"));
}
