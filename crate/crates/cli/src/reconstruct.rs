use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use burstsr::io::{write_png_code_values, write_tensor};
use burstsr::solver::{reconstruct, IterationRecord, ResolvedParams, SolverConfig};
use burstsr::synth::linear_raw_to_srgb;
use serde::Serialize;

use crate::manifest::{SceneManifest, WarpsFile, VERSION};
use crate::{read_json, scene_name, write_json, ReconstructArgs};

/// `<out>.csv`: one row per iteration.
pub fn csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

/// `<out>.json`: run summary.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    version: u32,
    scene: String,
    warps: &'static str,
    dims: [usize; 3],
    params: ResolvedParams,
    config: &'a SolverConfig,
    initial: IterationRecord,
    last: IterationRecord,
}

pub fn run(args: &ReconstructArgs) -> Result<i32> {
    let tag = scene_name(&args.scene);
    let cfg: SolverConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SolverConfig::default(),
    };
    let manifest = SceneManifest::load(&args.scene)?;
    let burst = manifest.read_burst(&args.scene)?;
    let deg = manifest.degradation()?;
    let (warps, source) = if args.use_gt_warps {
        (manifest.gt_warps()?, "gt")
    } else {
        (WarpsFile::load(&args.scene)?.warps()?, "estimated")
    };
    if warps.len() != burst.len() {
        bail!("{} warps for {} frames", warps.len(), burst.len());
    }
    let prior = cfg.prior.build();
    let report = reconstruct(&burst, &warps, prior.as_ref(), &cfg, &deg)?;

    let x = &report.x_final;
    let (h, w) = burst.frame_dims();
    let f = deg.packed_factor();
    if x.dims() != (h * f, w * f, 3) {
        bail!("output dims {:?} do not match the scene", x.dims());
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_tensor(x, &args.out)?;
    let csv = csv_path(&args.out);
    std::fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    let summary = Summary {
        version: VERSION,
        scene: tag.clone(),
        warps: source,
        dims: [x.height(), x.width(), x.channels()],
        params: report.params,
        config: &cfg,
        initial: report.initial,
        last: *report.final_record(),
    };
    write_json(&summary, &summary_path(&args.out))?;
    if let Some(png) = &args.png {
        write_png_code_values(&linear_raw_to_srgb(x, &manifest.camera)?, png)?;
    }
    eprintln!(
        "[{tag}] {} iterations with {source} warps, residual {:.4e} -> {:.4e}",
        report.iterations.len(),
        report.initial.residual_norm,
        report.final_record().residual_norm
    );
    Ok(0)
}
