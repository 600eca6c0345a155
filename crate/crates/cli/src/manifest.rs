//! On-disk JSON documents shared between commands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use burstsr::io::read_tensor;
use burstsr::synth::{CameraParams, NoiseParams};
use burstsr::{AffineWarp, Burst, DegradationConfig, PackedRaw, Tensor3};
use serde::{Deserialize, Serialize};

use crate::{check_version, read_json};

pub const VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "meta.json";
pub const WARPS_FILE: &str = "warps.json";
pub const METRICS_FILE: &str = "metrics.json";

/// `meta.json`: how a synthetic scene was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    /// Seed this scene was synthesized with.
    pub seed: u64,
    pub burst_size: usize,
    pub scale: usize,
    /// Ground-truth warps, row-major 2×3 affine matrices in HR pixels.
    pub warps: Vec<[f64; 6]>,
    pub noise: NoiseParams,
    pub camera: CameraParams,
    pub source: String,
    pub gt: String,
    pub frames: Vec<String>,
}

impl SceneManifest {
    /// Loads `dir/meta.json` and checks that every referenced file exists.
    pub fn load(dir: &Path) -> Result<Self> {
        let m: SceneManifest = read_json(&dir.join(MANIFEST_FILE))?;
        check_version(m.version, MANIFEST_FILE)?;
        if m.warps.len() != m.burst_size || m.frames.len() != m.burst_size {
            bail!(
                "{}: burst_size {} but {} warps and {} frames",
                dir.display(),
                m.burst_size,
                m.warps.len(),
                m.frames.len()
            );
        }
        for f in m.frames.iter().chain(std::iter::once(&m.gt)) {
            if !dir.join(f).is_file() {
                bail!("{}: missing {f}", dir.display());
            }
        }
        Ok(m)
    }

    pub fn degradation(&self) -> Result<DegradationConfig> {
        Ok(DegradationConfig::new(self.scale)?)
    }

    pub fn gt_warps(&self) -> Result<Vec<AffineWarp>> {
        self.warps
            .iter()
            .map(|m| AffineWarp::new(*m).map_err(Into::into))
            .collect()
    }

    pub fn read_burst(&self, dir: &Path) -> Result<Burst> {
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let t = read_tensor(dir.join(f))?;
                Ok(PackedRaw::new(t)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Burst::new(frames)?)
    }

    pub fn read_gt(&self, dir: &Path) -> Result<Tensor3> {
        read_tensor(dir.join(&self.gt)).with_context(|| format!("reading {}", self.gt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameWarp {
    pub matrix: [f64; 6],
    pub rho: f64,
    pub converged: bool,
}

/// `warps.json`: alignment output, one entry per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpsFile {
    pub version: u32,
    pub model: String,
    pub frames: Vec<FrameWarp>,
}

impl WarpsFile {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(WARPS_FILE);
        if !path.is_file() {
            bail!("{} not found; run `burstsr align` first", path.display());
        }
        let w: WarpsFile = read_json(&path)?;
        check_version(w.version, WARPS_FILE)?;
        Ok(w)
    }

    pub fn warps(&self) -> Result<Vec<AffineWarp>> {
        self.frames
            .iter()
            .map(|f| AffineWarp::new(f.matrix).map_err(Into::into))
            .collect()
    }
}

/// PSNR as written to JSON: a number, or the string `"inf"` for identical
/// images (JSON has no infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr(pub f64);

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Psnr(v)),
            Repr::Text(t) if t == "inf" => Ok(Psnr(f64::INFINITY)),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: String,
    pub sr: PathBuf,
    pub psnr: Psnr,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: Psnr,
    pub ssim: f64,
}

/// `metrics.json`: per-scene metrics and their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub version: u32,
    pub scenes: Vec<SceneMetrics>,
    pub mean: MeanMetrics,
}

/// Zero-padded frame file name; at least two digits.
pub fn frame_file_name(i: usize, burst_size: usize) -> String {
    let width = burst_size.saturating_sub(1).to_string().len().max(2);
    format!("frame_{i:0width$}.btf")
}
