//! Degradation operators and their exact adjoints.
//!
//! A raw frame is produced from the HR linear RGB image `x` as
//! `y_i = M H S_i x`: warp `S_i`, bilinear downsample `H` by the scale
//! factor, then RGGB mosaicking `M` into packed form. Every operator here is
//! linear with a zero (black) boundary; each `*_adjoint` is the literal
//! transpose of the interpolation matrix of its forward operator, realized as
//! a scatter-add over the same bilinear taps.
//!
//! Continuous coordinates put the top-left corner of the image at `(0, 0)` and
//! the center of pixel `(row, col)` at `(col + 0.5, row + 0.5)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Burst, PackedRaw, Tensor3};

/// Affine map from output to input continuous coordinates, stored row-major
/// as `[a, b, tx, c, d, ty]`:
///
/// ```text
/// x_in = a * x_out + b * y_out + tx
/// y_in = c * x_out + d * y_out + ty
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AffineWarp(pub [f64; 6]);

impl Default for AffineWarp {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineWarp {
    pub const fn identity() -> Self {
        AffineWarp([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn new(m: [f64; 6]) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite warp {m:?}")));
        }
        Ok(AffineWarp(m))
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        AffineWarp([1.0, 0.0, tx, 0.0, 1.0, ty])
    }

    /// Rotation by `theta` radians about `(cx, cy)` followed by a translation
    /// of `(tx, ty)`: `p ↦ R(p − c) + c + t`.
    pub fn euclidean(theta: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        let (s, co) = theta.sin_cos();
        AffineWarp([
            co,
            -s,
            cx - co * cx + s * cy + tx,
            s,
            co,
            cy - s * cx - co * cy + ty,
        ])
    }

    pub fn matrix(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0
            .iter()
            .zip(Self::identity().0.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-12)
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, tx, c, d, ty] = self.0;
        (a * x + b * y + tx, c * x + d * y + ty)
    }

    pub fn inverse(&self) -> Option<AffineWarp> {
        let [a, b, tx, c, d, ty] = self.0;
        let det = a * d - b * c;
        if det.abs() < 1e-15 || !det.is_finite() {
            return None;
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(AffineWarp([
            ia,
            ib,
            -(ia * tx + ib * ty),
            ic,
            id,
            -(ic * tx + id * ty),
        ]))
    }

    /// The same motion expressed on a grid whose coordinates are `factor`
    /// times larger (the linear part is unchanged, translations scale).
    pub fn rescaled(&self, factor: f64) -> AffineWarp {
        let mut m = self.0;
        m[2] *= factor;
        m[5] *= factor;
        AffineWarp(m)
    }

    /// Rotation angle in radians, read from the linear part.
    pub fn angle(&self) -> f64 {
        self.0[3].atan2(self.0[0])
    }
}

/// Fixed degradation settings: RGGB Bayer pattern, zero boundary, and the
/// integer downsampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub scale: usize,
}

impl DegradationConfig {
    pub fn new(scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Parameter("scale must be >= 1".into()));
        }
        Ok(Self { scale })
    }

    /// Ratio between HR and packed-raw pixel pitch.
    pub fn packed_factor(&self) -> usize {
        2 * self.scale
    }
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self { scale: 4 }
    }
}

/// Up to four `(pixel index, weight)` bilinear taps at index coordinates
/// `(sx, sy)`. Taps outside the image and zero-weight taps are dropped.
#[derive(Clone, Copy)]
struct Taps {
    idx: [usize; 4],
    wt: [f64; 4],
    n: usize,
}

impl Taps {
    #[inline]
    fn at(sx: f64, sy: f64, width: usize, height: usize) -> Taps {
        let mut t = Taps {
            idx: [0; 4],
            wt: [0.0; 4],
            n: 0,
        };
        if !(sx.is_finite() && sy.is_finite()) {
            return t;
        }
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let cand = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x0 + 1, y0, fx * (1.0 - fy)),
            (x0, y0 + 1, (1.0 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        for (x, y, w) in cand {
            if w != 0.0 && x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                t.idx[t.n] = y as usize * width + x as usize;
                t.wt[t.n] = w;
                t.n += 1;
            }
        }
        t
    }

    #[inline]
    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.n]
            .iter()
            .copied()
            .zip(self.wt[..self.n].iter().copied())
    }
}

/// Gathers `out[p] = Σ w · src[q]` for every output pixel, where `sample`
/// yields the index-space sampling position of output pixel `(row, col)`.
fn gather(
    src: &Tensor3,
    out_h: usize,
    out_w: usize,
    sample: impl Fn(usize, usize) -> (f64, f64) + Sync,
) -> Tensor3 {
    let ch = src.channels();
    let mut out = Tensor3::zeros(out_h, out_w, ch);
    let (w, h) = (src.width(), src.height());
    let s = src.data();
    out.data_mut()
        .par_chunks_mut(out_w * ch)
        .enumerate()
        .for_each(|(row, line)| {
            for col in 0..out_w {
                let (sx, sy) = sample(row, col);
                let taps = Taps::at(sx, sy, w, h);
                let px = &mut line[col * ch..(col + 1) * ch];
                for (q, wt) in taps.iter() {
                    for (c, v) in px.iter_mut().enumerate() {
                        *v += wt * s[q * ch + c];
                    }
                }
            }
        });
    out
}

/// Transpose of [`gather`]: scatters each input pixel along the same taps
/// into an `out_h × out_w` image.
fn scatter(
    src: &Tensor3,
    out_h: usize,
    out_w: usize,
    sample: impl Fn(usize, usize) -> (f64, f64),
) -> Tensor3 {
    let ch = src.channels();
    let mut out = Tensor3::zeros(out_h, out_w, ch);
    let s = src.data();
    let o = out.data_mut();
    for row in 0..src.height() {
        for col in 0..src.width() {
            let (sx, sy) = sample(row, col);
            let taps = Taps::at(sx, sy, out_w, out_h);
            let p = (row * src.width() + col) * ch;
            for (q, wt) in taps.iter() {
                for c in 0..ch {
                    o[q * ch + c] += wt * s[p + c];
                }
            }
        }
    }
    out
}

#[inline]
fn warp_sample(w: &AffineWarp, row: usize, col: usize) -> (f64, f64) {
    let (qx, qy) = w.apply(col as f64 + 0.5, row as f64 + 0.5);
    (qx - 0.5, qy - 0.5)
}

/// `out(p) = img(W p)` with bilinear interpolation and zero boundary.
pub fn warp(img: &Tensor3, w: &AffineWarp) -> Tensor3 {
    if w.is_identity() {
        return img.clone();
    }
    gather(img, img.height(), img.width(), |r, c| warp_sample(w, r, c))
}

/// Exact transpose of [`warp`] (scatter-add, not the inverse warp).
pub fn warp_adjoint(img: &Tensor3, w: &AffineWarp) -> Tensor3 {
    if w.is_identity() {
        return img.clone();
    }
    scatter(img, img.height(), img.width(), |r, c| warp_sample(w, r, c))
}

#[inline]
fn downsample_sample(r: usize, row: usize, col: usize) -> (f64, f64) {
    let r = r as f64;
    ((col as f64 + 0.5) * r - 0.5, (row as f64 + 0.5) * r - 0.5)
}

/// Point-sampled bilinear decimation by `r`.
pub fn downsample(img: &Tensor3, r: usize) -> Result<Tensor3> {
    if r == 0 || !img.height().is_multiple_of(r) || !img.width().is_multiple_of(r) {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by scale {r}",
            img.height(),
            img.width()
        )));
    }
    if r == 1 {
        return Ok(img.clone());
    }
    Ok(gather(
        img,
        img.height() / r,
        img.width() / r,
        |row, col| downsample_sample(r, row, col),
    ))
}

/// Transpose of [`downsample`]; output is `r` times larger per axis.
pub fn downsample_adjoint(img: &Tensor3, r: usize) -> Result<Tensor3> {
    if r == 0 {
        return Err(Error::Parameter("scale must be >= 1".into()));
    }
    if r == 1 {
        return Ok(img.clone());
    }
    Ok(scatter(
        img,
        img.height() * r,
        img.width() * r,
        |row, col| downsample_sample(r, row, col),
    ))
}

/// RGGB site offsets `(dy, dx, rgb channel)` in packed-channel order.
pub const RGGB_SITES: [(usize, usize, usize); 4] = [(0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 2)];

/// Samples an `H×W×3` image on the RGGB lattice into packed `H/2×W/2×4`.
pub fn mosaick(rgb: &Tensor3) -> Result<PackedRaw> {
    let (h, w, c) = rgb.dims();
    if c != 3 {
        return Err(Error::Dimension(format!(
            "mosaick needs RGB, got {c} channels"
        )));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "mosaick needs even dims, got {h}x{w}"
        )));
    }
    let t = Tensor3::from_fn(h / 2, w / 2, 4, |i, j, k| {
        let (dy, dx, ch) = RGGB_SITES[k];
        rgb.get(2 * i + dy, 2 * j + dx, ch)
    });
    PackedRaw::new(t)
}

/// Places each packed sample back on its Bayer site; other samples are zero.
pub fn mosaick_adjoint(raw: &PackedRaw) -> Tensor3 {
    let t = raw.tensor();
    let mut out = Tensor3::zeros(2 * t.height(), 2 * t.width(), 3);
    for i in 0..t.height() {
        for j in 0..t.width() {
            for (k, &(dy, dx, ch)) in RGGB_SITES.iter().enumerate() {
                out.set(2 * i + dy, 2 * j + dx, ch, t.get(i, j, k));
            }
        }
    }
    out
}

fn check_hr(x: &Tensor3, cfg: &DegradationConfig) -> Result<()> {
    let f = cfg.packed_factor();
    if x.channels() != 3 {
        return Err(Error::Dimension(format!(
            "HR image needs 3 channels, got {}",
            x.channels()
        )));
    }
    if !x.height().is_multiple_of(f) || !x.width().is_multiple_of(f) {
        return Err(Error::Dimension(format!(
            "HR dims {}x{} not divisible by 2*scale = {f}",
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

/// One frame of the forward model: `M H S x`.
pub fn degrade(x: &Tensor3, w: &AffineWarp, cfg: &DegradationConfig) -> Result<PackedRaw> {
    check_hr(x, cfg)?;
    mosaick(&downsample(&warp(x, w), cfg.scale)?)
}

/// One frame of the adjoint: `Sᵀ Hᵀ Mᵀ y`.
pub fn degrade_adjoint(y: &PackedRaw, w: &AffineWarp, cfg: &DegradationConfig) -> Result<Tensor3> {
    let up = downsample_adjoint(&mosaick_adjoint(y), cfg.scale)?;
    Ok(warp_adjoint(&up, w))
}

/// Applies the composite operator to produce one noise-free frame per warp.
pub fn apply_a(x: &Tensor3, warps: &[AffineWarp], cfg: &DegradationConfig) -> Result<Burst> {
    if warps.is_empty() {
        return Err(Error::Argument("need at least one warp".into()));
    }
    check_hr(x, cfg)?;
    let frames = warps
        .par_iter()
        .map(|w| degrade(x, w, cfg))
        .collect::<Result<Vec<_>>>()?;
    Burst::new(frames)
}

/// `Σ_i S_iᵀ Hᵀ Mᵀ y_i`, unnormalized. Per-frame terms are computed in
/// parallel and summed in frame order.
pub fn apply_at(b: &Burst, warps: &[AffineWarp], cfg: &DegradationConfig) -> Result<Tensor3> {
    if warps.len() != b.len() {
        return Err(Error::Argument(format!(
            "{} warps for {} frames",
            warps.len(),
            b.len()
        )));
    }
    let terms = b
        .frames()
        .par_iter()
        .zip(warps.par_iter())
        .map(|(f, w)| degrade_adjoint(f, w, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = terms.into_iter();
    let mut acc = iter.next().expect("burst is non-empty");
    for t in iter {
        acc.axpy(1.0, &t);
    }
    Ok(acc)
}

/// Seed for the power-iteration start vector.
pub const POWER_ITERATION_SEED: u64 = 0x0005_eed0_fa7a;

/// Rayleigh quotients `⟨v_k, AᵀA v_k⟩` of power iteration on `AᵀA`,
/// one per iteration, starting from a seeded uniform random vector.
pub fn power_iteration_trace(
    warps: &[AffineWarp],
    cfg: &DegradationConfig,
    hr_dims: (usize, usize),
    iters: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Tensor3::from_fn(hr_dims.0, hr_dims.1, 3, |_, _, _| rng.random::<f64>() - 0.5);
    check_hr(&v, cfg)?;
    let n = v.norm();
    v = v.scale(1.0 / n);
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let u = apply_at(&apply_a(&v, warps, cfg)?, warps, cfg)?;
        trace.push(v.dot(&u));
        let un = u.norm();
        if un == 0.0 {
            break;
        }
        v = u.scale(1.0 / un);
    }
    Ok(trace)
}

/// Power-iteration estimate of `‖AᵀA‖₂`.
pub fn operator_norm_estimate(
    warps: &[AffineWarp],
    cfg: &DegradationConfig,
    hr_dims: (usize, usize),
    iters: usize,
) -> Result<f64> {
    if iters < 20 {
        return Err(Error::Argument(format!(
            "need at least 20 iterations, got {iters}"
        )));
    }
    let trace = power_iteration_trace(warps, cfg, hr_dims, iters, POWER_ITERATION_SEED)?;
    Ok(trace.last().copied().unwrap_or(0.0))
}
