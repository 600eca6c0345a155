use anyhow::Result;
use burstsr::align::{align_burst, mean_endpoint_error, AlignConfig, MotionModel};

use crate::manifest::{FrameWarp, SceneManifest, WarpsFile, VERSION, WARPS_FILE};
use crate::{scene_name, write_json, AlignArgs};

/// Grid spacing (HR pixels) for the endpoint error logged against `meta.json`.
const ENDPOINT_GRID: usize = 8;

pub fn run(args: &AlignArgs) -> Result<i32> {
    let tag = scene_name(&args.scene);
    let model: MotionModel = args.model.parse()?;
    let manifest = SceneManifest::load(&args.scene)?;
    let burst = manifest.read_burst(&args.scene)?;
    let deg = manifest.degradation()?;
    let cfg = AlignConfig {
        model,
        ..AlignConfig::default()
    };
    let res = align_burst(&burst, &cfg, &deg);
    let doc = WarpsFile {
        version: VERSION,
        model: args.model.clone(),
        frames: res
            .warps
            .iter()
            .zip(&res.converged)
            .zip(&res.final_rho)
            .map(|((w, &converged), &rho)| FrameWarp {
                matrix: *w.matrix(),
                rho,
                converged,
            })
            .collect(),
    };
    write_json(&doc, &args.scene.join(WARPS_FILE))?;
    let failed = res.converged.iter().filter(|c| !**c).count();
    let (h, w) = burst.frame_dims();
    let f = deg.packed_factor();
    let epe = mean_endpoint_error(
        &res.warps,
        &manifest.gt_warps()?,
        burst.reference_index(),
        (h * f, w * f),
        ENDPOINT_GRID,
    );
    eprintln!(
        "[{tag}] aligned {} frames, {failed} fell back to identity, endpoint error vs meta.json {epe:.4} HR px",
        burst.len()
    );
    Ok(0)
}
