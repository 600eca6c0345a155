//! Synthetic raw bursts from sRGB images.
//!
//! The sRGB input is unprocessed into linear raw space (inverse tone curve,
//! sRGB decode, inverse color correction, inverse white balance). That image
//! is the ground truth. Each frame is then warped, downsampled, mosaicked and
//! corrupted with heteroskedastic Gaussian noise.
//!
//! Randomness is split into independent ChaCha streams derived from the
//! configured seed: camera, warps, noise parameters, and one stream per frame
//! for the pixel noise. Results therefore do not depend on thread scheduling.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, AffineWarp, DegradationConfig};
use crate::io::{srgb_decode, srgb_encode};
use crate::tensor::{Burst, PackedRaw, Tensor3};

const STREAM_CAMERA: u64 = 1;
const STREAM_WARPS: u64 = 2;
const STREAM_NOISE_PARAMS: u64 = 3;
const STREAM_FRAME_BASE: u64 = 1 << 16;

/// Seeded generator for one named stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub rgb_gains: [f64; 3],
    /// Color correction, linear raw → linear sRGB.
    pub ccm: [[f64; 3]; 3],
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            rgb_gains: [1.0; 3],
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if self.rgb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Parameter(format!(
                "white-balance gains must be positive, got {:?}",
                self.rgb_gains
            )));
        }
        for (i, row) in self.ccm.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Parameter(format!(
                    "ccm row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Red and blue gains drawn uniformly from `[1.6, 2.4]`; green stays 1.
    pub fn with_random_gains(&self, rng: &mut impl Rng) -> Self {
        let mut out = self.clone();
        out.rgb_gains = [
            rng.random_range(1.6..=2.4),
            1.0,
            rng.random_range(1.6..=2.4),
        ];
        out
    }

    fn ccm_matrix(&self) -> Matrix3<f64> {
        let m = &self.ccm;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    fn ccm_inverse(&self) -> Result<Matrix3<f64>> {
        let m = self.ccm_matrix();
        if m.determinant().abs() < 1e-12 {
            return Err(Error::Parameter(
                "color correction matrix is singular".into(),
            ));
        }
        m.try_inverse()
            .ok_or_else(|| Error::Parameter("color correction matrix is singular".into()))
    }
}

/// Inverse of the smoothstep tone curve `3x² − 2x³`.
pub fn inverse_smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    0.5 - ((1.0 - 2.0 * x).asin() / 3.0).sin()
}

pub fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// sRGB image → linear raw camera space.
pub fn srgb_to_linear_raw(srgb: &Tensor3, cam: &CameraParams) -> Result<Tensor3> {
    if srgb.channels() != 3 {
        return Err(Error::Dimension(format!(
            "expected RGB input, got {} channels",
            srgb.channels()
        )));
    }
    cam.validate()?;
    let inv = cam.ccm_inverse()?;
    let mut out = srgb.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let lin = nalgebra::Vector3::new(
            srgb_decode(inverse_smoothstep(px[0])),
            srgb_decode(inverse_smoothstep(px[1])),
            srgb_decode(inverse_smoothstep(px[2])),
        );
        let raw = inv * lin;
        for c in 0..3 {
            px[c] = (raw[c] / cam.rgb_gains[c]).max(0.0);
        }
    }
    Ok(out)
}

/// Linear raw → display sRGB (white balance, color correction, sRGB encode,
/// tone curve). Used for previews.
pub fn linear_raw_to_srgb(raw: &Tensor3, cam: &CameraParams) -> Result<Tensor3> {
    cam.validate()?;
    let m = cam.ccm_matrix();
    let mut out = raw.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let wb = nalgebra::Vector3::new(
            px[0] * cam.rgb_gains[0],
            px[1] * cam.rgb_gains[1],
            px[2] * cam.rgb_gains[2],
        );
        let lin = m * wb;
        for c in 0..3 {
            px[c] = smoothstep(srgb_encode(lin[c].clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

/// Heteroskedastic noise: variance `read + shot * signal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub shot: f64,
    pub read: f64,
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        shot: 0.0,
        read: 0.0,
    };

    pub fn new(shot: f64, read: f64) -> Result<Self> {
        if !(shot >= 0.0 && read >= 0.0) {
            return Err(Error::Parameter(format!(
                "noise parameters must be >= 0, got shot={shot} read={read}"
            )));
        }
        Ok(Self { shot, read })
    }

    pub fn is_zero(&self) -> bool {
        self.shot == 0.0 && self.read == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub burst_size: usize,
    pub scale: usize,
    /// HR pixels.
    pub max_translation: f64,
    /// Degrees.
    pub max_rotation: f64,
    pub shot_range: (f64, f64),
    pub read_range: (f64, f64),
    pub seed: u64,
    /// Draw red/blue white-balance gains instead of using the given camera.
    pub random_gains: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            burst_size: 14,
            scale: 4,
            max_translation: 4.0,
            max_rotation: 1.0,
            shot_range: (1e-4, 1e-2),
            read_range: (1e-6, 1e-4),
            seed: 0,
            random_gains: false,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    let ok = lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo && (lo > 0.0 || lo == hi);
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "invalid {name} range [{lo}, {hi}]"
        )))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burst_size == 0 {
            return Err(Error::Parameter("burst size must be >= 1".into()));
        }
        if self.scale == 0 {
            return Err(Error::Parameter("scale must be >= 1".into()));
        }
        if !(self.max_translation >= 0.0 && self.max_rotation >= 0.0) {
            return Err(Error::Parameter("motion ranges must be >= 0".into()));
        }
        check_range("shot", self.shot_range)?;
        check_range("read", self.read_range)
    }

    pub fn with_noise(mut self, noise: NoiseParams) -> Self {
        self.shot_range = (noise.shot, noise.shot);
        self.read_range = (noise.read, noise.read);
        self
    }

    pub fn degradation(&self) -> DegradationConfig {
        DegradationConfig { scale: self.scale }
    }
}

/// Reference frame gets the identity; the others a rotation about the image
/// center composed with a translation, both uniform in the configured ranges.
pub fn sample_warps(
    cfg: &SynthConfig,
    hr_dims: (usize, usize),
    rng: &mut impl Rng,
) -> Vec<AffineWarp> {
    let (cy, cx) = (hr_dims.0 as f64 / 2.0, hr_dims.1 as f64 / 2.0);
    let mut warps = vec![AffineWarp::identity()];
    for _ in 1..cfg.burst_size {
        let theta = sym_uniform(rng, cfg.max_rotation).to_radians();
        let tx = sym_uniform(rng, cfg.max_translation);
        let ty = sym_uniform(rng, cfg.max_translation);
        warps.push(if theta == 0.0 && tx == 0.0 && ty == 0.0 {
            AffineWarp::identity()
        } else {
            AffineWarp::euclidean(theta, tx, ty, cx, cy)
        });
    }
    warps
}

fn sym_uniform(rng: &mut impl Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    10f64.powf(rng.random_range(lo.log10()..=hi.log10()))
}

pub fn sample_noise_params(cfg: &SynthConfig, rng: &mut impl Rng) -> NoiseParams {
    let shot = log_uniform(rng, cfg.shot_range);
    let read = log_uniform(rng, cfg.read_range);
    NoiseParams { shot, read }
}

/// `clamp(frame + ε, 0, 1)` with `ε ~ N(0, read + shot·frame)` per sample.
pub fn add_noise(frame: &PackedRaw, np: &NoiseParams, rng: &mut impl Rng) -> PackedRaw {
    if np.is_zero() {
        return frame.clone();
    }
    let mut out = frame.clone();
    for v in out.tensor_mut().data_mut() {
        let var = (np.read + np.shot * *v).max(0.0);
        let eps = if var > 0.0 {
            Normal::new(0.0, var.sqrt())
                .expect("finite std")
                .sample(rng)
        } else {
            0.0
        };
        *v = (*v + eps).clamp(0.0, 1.0);
    }
    out
}

/// Everything needed to evaluate a reconstruction of one synthetic scene.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub burst: Burst,
    pub gt: Tensor3,
    pub warps: Vec<AffineWarp>,
    pub noise: NoiseParams,
    pub camera: CameraParams,
}

pub fn synthesize(hr_srgb: &Tensor3, cfg: &SynthConfig, cam: &CameraParams) -> Result<SynthOutput> {
    cfg.validate()?;
    let deg = cfg.degradation();
    let f = deg.packed_factor();
    if !hr_srgb.height().is_multiple_of(f) || !hr_srgb.width().is_multiple_of(f) {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by 2*scale = {f}",
            hr_srgb.height(),
            hr_srgb.width()
        )));
    }
    let camera = if cfg.random_gains {
        cam.with_random_gains(&mut stream_rng(cfg.seed, STREAM_CAMERA))
    } else {
        cam.clone()
    };
    let gt = srgb_to_linear_raw(hr_srgb, &camera)?;
    let warps = sample_warps(
        cfg,
        (gt.height(), gt.width()),
        &mut stream_rng(cfg.seed, STREAM_WARPS),
    );
    let noise = sample_noise_params(cfg, &mut stream_rng(cfg.seed, STREAM_NOISE_PARAMS));

    let clean = forward::apply_a(&gt, &warps, &deg)?;
    let frames: Vec<PackedRaw> = clean
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = stream_rng(cfg.seed, STREAM_FRAME_BASE + i as u64);
            add_noise(f, &noise, &mut rng)
        })
        .collect();
    Ok(SynthOutput {
        burst: Burst::new(frames)?,
        gt,
        warps,
        noise,
        camera,
    })
}
