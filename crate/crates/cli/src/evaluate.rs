use std::path::PathBuf;

use anyhow::{bail, Result};
use burstsr::io::read_tensor;
use burstsr::metrics::evaluate;

use crate::manifest::{
    MeanMetrics, MetricsFile, Psnr, SceneManifest, SceneMetrics, METRICS_FILE, VERSION,
};
use crate::{scene_name, write_json, EvaluateArgs};

/// Arithmetic mean; any infinite PSNR makes the mean infinite.
pub fn mean(scenes: &[SceneMetrics]) -> MeanMetrics {
    let n = scenes.len().max(1) as f64;
    MeanMetrics {
        psnr: Psnr(scenes.iter().map(|s| s.psnr.0).sum::<f64>() / n),
        ssim: scenes.iter().map(|s| s.ssim).sum::<f64>() / n,
    }
}

pub fn run(args: &EvaluateArgs) -> Result<i32> {
    if args.scene.len() != args.sr.len() {
        bail!(
            "{} --scene but {} --sr; pass one reconstruction per scene",
            args.scene.len(),
            args.sr.len()
        );
    }
    let out: PathBuf = match (&args.out, args.scene.as_slice()) {
        (Some(p), _) => p.clone(),
        (None, [one]) => one.join(METRICS_FILE),
        (None, _) => bail!("--out is required with several scenes"),
    };
    let mut scenes = Vec::with_capacity(args.scene.len());
    for (dir, sr) in args.scene.iter().zip(&args.sr) {
        let tag = scene_name(dir);
        let gt = SceneManifest::load(dir)?.read_gt(dir)?;
        let est = read_tensor(sr)?;
        let m = evaluate(&est, &gt)?;
        eprintln!("[{tag}] psnr {:.3} dB, ssim {:.4}", m.psnr, m.ssim);
        scenes.push(SceneMetrics {
            scene: tag,
            sr: sr.clone(),
            psnr: Psnr(m.psnr),
            ssim: m.ssim,
        });
    }
    let doc = MetricsFile {
        version: VERSION,
        mean: mean(&scenes),
        scenes,
    };
    write_json(&doc, &out)?;
    Ok(0)
}
