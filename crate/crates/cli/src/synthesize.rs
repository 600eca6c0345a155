use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use burstsr::io::{read_srgb_png, write_tensor};
use burstsr::synth::{stream_rng, synthesize, CameraParams, SynthConfig};
use rand::RngCore;
use rayon::prelude::*;

use crate::manifest::{frame_file_name, SceneManifest, MANIFEST_FILE, VERSION};
use crate::{write_json, SynthesizeArgs};

/// Stream id block for per-scene seeds, disjoint from the synthesis streams.
const SCENE_SEED_STREAM: u64 = 1 << 40;

/// Seed of the `index`-th input (in sorted order) for a dataset seed.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    stream_rng(seed, SCENE_SEED_STREAM + index as u64).next_u64()
}

fn list_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("listing {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG files in {}", input.display());
    }
    Ok(files)
}

fn synthesize_one(path: &Path, out_root: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let srgb = read_srgb_png(path)?;
    let out = synthesize(&srgb, cfg, &CameraParams::default())?;
    let dir = out_root.join(&name);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_tensor(&out.gt, dir.join("gt.btf"))?;
    let frames: Vec<String> = (0..cfg.burst_size)
        .map(|i| frame_file_name(i, cfg.burst_size))
        .collect();
    for (f, name) in out.burst.frames().iter().zip(&frames) {
        write_tensor(f.tensor(), dir.join(name))?;
    }
    let manifest = SceneManifest {
        version: VERSION,
        seed: cfg.seed,
        burst_size: cfg.burst_size,
        scale: cfg.scale,
        warps: out.warps.iter().map(|w| *w.matrix()).collect(),
        noise: out.noise,
        camera: out.camera,
        source: path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        gt: "gt.btf".into(),
        frames,
    };
    write_json(&manifest, &dir.join(MANIFEST_FILE))?;
    Ok(dir)
}

pub fn run(args: &SynthesizeArgs) -> Result<i32> {
    let inputs = list_inputs(&args.input)?;
    let base = SynthConfig {
        burst_size: args.burst,
        scale: args.scale,
        max_translation: args.max_trans,
        max_rotation: args.max_rot,
        shot_range: args.noise_shot,
        read_range: args.noise_read,
        seed: args.seed,
        random_gains: false,
    };
    base.validate()?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()?;
    let results: Vec<Result<PathBuf>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let cfg = SynthConfig {
                    seed: scene_seed(args.seed, i),
                    ..base.clone()
                };
                synthesize_one(path, &args.out, &cfg)
            })
            .collect()
    });
    let mut ok = 0;
    for (path, r) in inputs.iter().zip(results) {
        let tag = path.display();
        match r {
            Ok(dir) => {
                ok += 1;
                eprintln!("[{tag}] wrote {}", dir.display());
            }
            Err(e) => eprintln!("[{tag}] warning: skipped: {e:#}"),
        }
    }
    eprintln!("synthesized {ok}/{} scenes", inputs.len());
    Ok(if ok == 0 { 1 } else { 0 })
}
