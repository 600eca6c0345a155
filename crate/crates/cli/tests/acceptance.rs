//! Acceptance criteria, one line each. Run with `cargo test --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use burstsr::align::{align_burst, mean_endpoint_error, AlignConfig};
use burstsr::forward::operator_norm_estimate;
use burstsr::io::{read_tensor, write_png_code_values};
use burstsr::metrics::{evaluate, mse, psnr, ssim, SsimParams};
use burstsr::prior::TotalVariation;
use burstsr::scene::{generate, SceneKind};
use burstsr::selftest::{adjoint_checks, max_objective_increase, random_warp, SelftestOptions};
use burstsr::solver::{reconstruct, Alpha, SolverConfig};
use burstsr::synth::{stream_rng, synthesize, CameraParams, NoiseParams, SynthConfig, SynthOutput};
use burstsr::{AffineWarp, Burst, DegradationConfig, PackedRaw, Tensor3};
use burstsr_cli::manifest::SceneManifest;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Measured = Result<(bool, String), String>;

struct Outcome {
    id: u32,
    passed: bool,
}

fn criterion(id: u32, name: &str, limit_s: Option<f64>, f: impl FnOnce() -> Measured) -> Outcome {
    let t0 = Instant::now();
    let result = f();
    let secs = t0.elapsed().as_secs_f64();
    let in_time = limit_s.is_none_or(|l| secs < l);
    let time = match limit_s {
        Some(l) => format!("{secs:.1} s, limit {l:.0} s"),
        None => format!("{secs:.1} s"),
    };
    let (passed, detail) = match result {
        Ok((ok, detail)) => (ok && in_time, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("{tag} [{id}] {name}: {detail} ({time})");
    Outcome { id, passed }
}

fn quiet() -> NoiseParams {
    NoiseParams {
        shot: 1e-3,
        read: 1e-5,
    }
}

fn synth(kind: SceneKind, n: usize, cfg: &SynthConfig) -> SynthOutput {
    synthesize(
        &generate(kind, n, n, cfg.seed),
        cfg,
        &CameraParams::default(),
    )
    .expect("synthesis")
}

fn prefix(d: &SynthOutput, b: usize) -> (Burst, Vec<AffineWarp>) {
    (
        Burst::new(d.burst.frames()[..b].to_vec()).unwrap(),
        d.warps[..b].to_vec(),
    )
}

fn adjoint_suite() -> Measured {
    let opts = SelftestOptions {
        size: 32,
        trials: 100,
        seed: 0,
        break_warp_adjoint: false,
    };
    let checks = adjoint_checks(&opts).map_err(|e| e.to_string())?;
    let worst = checks.iter().map(|c| c.value).fold(0.0, f64::max);
    let names: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.value))
        .collect();
    Ok((
        worst <= 1e-5,
        format!(
            "worst relative gap {worst:.2e} <= 1e-5 [{}]",
            names.join(", ")
        ),
    ))
}

fn spectral_bound() -> Measured {
    let deg = DegradationConfig::new(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut parts = Vec::new();
    let mut ok = true;
    for b in [1usize, 4, 14] {
        let mut warps = vec![AffineWarp::identity()];
        warps.extend((1..b).map(|_| random_warp(&mut rng, 64, 64)));
        let est = operator_norm_estimate(&warps, &deg, (64, 64), 100).map_err(|e| e.to_string())?;
        ok &= est <= b as f64 * (1.0 + 1e-3);
        parts.push(format!("B={b}: {est:.4}"));
    }
    Ok((ok, format!("||A^T A|| <= B(1+1e-3) [{}]", parts.join(", "))))
}

fn mm_descent() -> Measured {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..5 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        }
        .with_noise(quiet());
        let d = synth(SceneKind::Textured, 128, &cfg);
        for t in [None, Some(0.01)] {
            let sc = SolverConfig {
                prox_strength: t,
                monotone_guard: Some(false),
                ..SolverConfig::default()
            };
            let rep = reconstruct(
                &d.burst,
                &d.warps,
                &TotalVariation::default(),
                &sc,
                &cfg.degradation(),
            )
            .map_err(|e| e.to_string())?;
            if rep.params.alpha != d.burst.len() as f64 || rep.iterations.len() != 10 {
                return Err("unexpected solver parameters".into());
            }
            worst = worst.max(max_objective_increase(&rep));
        }
    }
    Ok((
        worst <= 1e-8,
        format!(
            "max J(k+1) - J(k) = {worst:.3e} <= 1e-8 over 5 scenes x 2 prox strengths, alpha = B"
        ),
    ))
}

fn consistency() -> Measured {
    let cfg = SynthConfig {
        seed: 4,
        ..SynthConfig::default()
    }
    .with_noise(NoiseParams::NONE);
    let d = synth(SceneKind::Textured, 64, &cfg);
    let ratio = |alpha: Option<Alpha>| -> Result<(f64, f64), String> {
        let sc = SolverConfig {
            alpha,
            lambda: 0.0,
            sigma: Some(0.01),
            ..SolverConfig::default()
        };
        let rep = reconstruct(
            &d.burst,
            &d.warps,
            &TotalVariation::default(),
            &sc,
            &cfg.degradation(),
        )
        .map_err(|e| e.to_string())?;
        Ok((
            rep.final_record().residual_norm / rep.initial.residual_norm,
            rep.params.alpha,
        ))
    };
    let (spectral, a_s) = ratio(Some(Alpha::Spectral))?;
    let (burst, _) = ratio(None)?;
    Ok((
        spectral <= 0.1,
        format!("final/initial residual {spectral:.4} <= 0.1 with spectral alpha = {a_s:.3} (alpha = B = 14 gives {burst:.4})"),
    ))
}

fn uniform_noise_frame(seed: u64, h: usize, w: usize) -> PackedRaw {
    let mut g = stream_rng(seed, 7);
    PackedRaw::new(Tensor3::from_fn(h, w, 4, |_, _, _| {
        g.random_range(0.0..1.0)
    }))
    .unwrap()
}

fn ecc_recovery() -> Measured {
    let acfg = AlignConfig::default();
    let mut errs = Vec::new();
    let mut fallback_ok = true;
    let mut genuine_failures = 0;
    for seed in 0..20 {
        let cfg = SynthConfig {
            seed,
            max_translation: 2.0,
            max_rotation: 1.0,
            ..SynthConfig::default()
        }
        .with_noise(quiet());
        let d = synth(SceneKind::Structured, 384, &cfg);
        let res = align_burst(&d.burst, &acfg, &cfg.degradation());
        for (w, &c) in res.warps.iter().zip(&res.converged) {
            if !c {
                genuine_failures += 1;
                fallback_ok &= w.is_identity();
            }
        }
        errs.push(mean_endpoint_error(&res.warps, &d.warps, 0, (384, 384), 8));
        if seed < 3 {
            let mut frames = d.burst.frames().to_vec();
            frames[5] = uniform_noise_frame(seed, 48, 48);
            let spoiled = align_burst(&Burst::new(frames).unwrap(), &acfg, &cfg.degradation());
            fallback_ok &= !spoiled.converged[5] && spoiled.warps[5].is_identity();
            fallback_ok &= (0..14)
                .filter(|&i| i != 5)
                .all(|i| spoiled.warps[i] == res.warps[i]);
        }
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Ok((
        mean < 0.1 && fallback_ok,
        format!(
            "mean endpoint error {mean:.4} HR px < 0.1 (worst burst {worst:.4}), {genuine_failures} genuine frames rejected, pure-noise fallback {}",
            if fallback_ok { "ok" } else { "BROKEN" }
        ),
    ))
}

fn burst_trend() -> Measured {
    let sizes = [2usize, 4, 8, 14];
    let mut mses = [0.0; 4];
    let mut psnrs = [0.0; 4];
    let sc = SolverConfig::default();
    for seed in 0..5 {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        }
        .with_noise(quiet());
        let d = synth(SceneKind::Textured, 128, &cfg);
        for (j, &b) in sizes.iter().enumerate() {
            let (burst, warps) = prefix(&d, b);
            let rep = reconstruct(
                &burst,
                &warps,
                &TotalVariation::default(),
                &sc,
                &cfg.degradation(),
            )
            .map_err(|e| e.to_string())?;
            let x = rep.x_final.clamp(0.0, 1.0);
            mses[j] += mse(&x, &d.gt).map_err(|e| e.to_string())? / 5.0;
            psnrs[j] += evaluate(&x, &d.gt).map_err(|e| e.to_string())?.psnr / 5.0;
        }
    }
    let monotone = mses.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let gain = psnrs[3] - psnrs[0];
    let table: Vec<String> = sizes
        .iter()
        .zip(mses.iter().zip(&psnrs))
        .map(|(b, (m, p))| format!("B={b}: {m:.3e} / {p:.2} dB"))
        .collect();
    Ok((
        monotone && gain >= 0.5,
        format!("MSE non-increasing (5% slack) {monotone}, PSNR gain B=14 vs 2 {gain:.2} dB >= 0.5 [{}]", table.join(", ")),
    ))
}

fn write_pngs(dir: &Path, seeds: &[u64], size: usize) -> PathBuf {
    let input = dir.join("in");
    std::fs::create_dir_all(&input).unwrap();
    for &s in seeds {
        let img = generate(SceneKind::Textured, size, size, s);
        write_png_code_values(&img, input.join(format!("img{s}.png"))).unwrap();
    }
    input
}

fn geometry() -> Measured {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let input = write_pngs(tmp.path(), &[1], 384);
    let out = tmp.path().join("ds");
    let code = burstsr_cli::run_args([
        "synthesize",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .map_err(|e| e.to_string())?;
    let dir = out.join("img1");
    let m = SceneManifest::load(&dir).map_err(|e| e.to_string())?;
    let gt = read_tensor(dir.join(&m.gt))
        .map_err(|e| e.to_string())?
        .dims();
    let frames: Vec<_> = m
        .frames
        .iter()
        .map(|f| read_tensor(dir.join(f)).map(|t| t.dims()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let ok = code == 0
        && m.burst_size == 14
        && m.scale == 4
        && frames.len() == 14
        && frames.iter().all(|&d| d == (48, 48, 4))
        && gt == (384, 384, 3);
    Ok((
        ok,
        format!(
            "{} frames of {:?} from GT {:?} at x{}",
            frames.len(),
            frames[0],
            gt,
            m.scale
        ),
    ))
}

fn metrics_oracle() -> Measured {
    // 0.2 - 0.1 == 0.1 exactly in f64
    let gt = Tensor3::filled(64, 64, 3, 0.1);
    let p = psnr(&Tensor3::filled(64, 64, 3, 0.2), &gt, 1.0).map_err(|e| e.to_string())?;
    let mut g = stream_rng(8, 0);
    let img = Tensor3::from_fn(64, 64, 3, |_, _, _| g.random_range(0.0..1.0));
    let s = ssim(&img, &img, &SsimParams::default()).map_err(|e| e.to_string())?;
    Ok((
        p == 20.0 && (s - 1.0).abs() <= 1e-9,
        format!("PSNR of uniform 0.1 error = {p} dB, SSIM of identical images = {s}"),
    ))
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
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

fn determinism() -> Measured {
    let bin = env!("CARGO_BIN_EXE_burstsr");
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let input = write_pngs(tmp.path(), &[3, 4], 128);
    let run_once = |name: &str| -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
        let root = tmp.path().join(name);
        let ds = root.join("ds");
        let exec = |args: &[&str]| -> Result<(), String> {
            let st = Command::new(bin)
                .args(args)
                .output()
                .map_err(|e| e.to_string())?;
            if st.status.success() {
                Ok(())
            } else {
                Err(String::from_utf8_lossy(&st.stderr).into_owned())
            }
        };
        exec(&[
            "synthesize",
            "--input",
            input.to_str().unwrap(),
            "--out",
            ds.to_str().unwrap(),
            "--seed",
            "42",
            "--burst",
            "8",
        ])?;
        for scene in ["img3", "img4"] {
            let sd = ds.join(scene);
            let out = root.join("sr").join(format!("{scene}.btf"));
            let png = root.join("sr").join(format!("{scene}.png"));
            exec(&[
                "reconstruct",
                "--scene",
                sd.to_str().unwrap(),
                "--use-gt-warps",
                "--out",
                out.to_str().unwrap(),
                "--png",
                png.to_str().unwrap(),
            ])?;
        }
        Ok(tree(&root))
    };
    let a = run_once("a")?;
    let b = run_once("b")?;
    let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
    Ok((
        !a.is_empty() && a == b,
        format!(
            "{} files, {bytes} bytes, identical across two runs: {}",
            a.len(),
            a == b
        ),
    ))
}

fn main() -> ExitCode {
    let outcomes = vec![
        criterion(
            1,
            "adjoint identities, 100 trials at 32x32",
            Some(10.0),
            adjoint_suite,
        ),
        criterion(
            2,
            "spectral bound, B in {1,4,14}, 64x64, x4",
            Some(30.0),
            spectral_bound,
        ),
        criterion(
            3,
            "MM monotone descent, TV, shot 1e-3",
            Some(120.0),
            mm_descent,
        ),
        criterion(
            4,
            "noise-free consistency, B=14, x4, 64x64, K=10",
            Some(60.0),
            consistency,
        ),
        criterion(
            5,
            "ECC recovery on 20 bursts, <= 2 px, <= 1 deg",
            None,
            ecc_recovery,
        ),
        criterion(
            6,
            "burst-size trend over B in {2,4,8,14}",
            Some(300.0),
            burst_trend,
        ),
        criterion(7, "default synthesis geometry", None, geometry),
        criterion(8, "metrics oracle", None, metrics_oracle),
        criterion(9, "CLI determinism", None, determinism),
    ];
    let failed: Vec<u32> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| o.id)
        .collect();
    println!(
        "{}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
