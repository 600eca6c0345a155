//! Burst registration with the Enhanced Correlation Coefficient (ECC).
//!
//! Frames are aligned on packed-raw luma (mean of the four Bayer sites) with
//! a Gauss-Newton ascent of the correlation coefficient, coarse to fine over a
//! small box-filtered pyramid. Warps are parameterized as a rotation about the
//! image center plus a translation, and reported in the forward-model
//! convention: `target ≈ warp(reference, W)`. Frames that fail to converge,
//! or converge to a weak correlation, fall back to the identity.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, AffineWarp, DegradationConfig};
use crate::prior::{gaussian_kernel, separable_blur};
use crate::tensor::{Burst, PackedRaw, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MotionModel {
    Translation,
    #[default]
    Euclidean,
}

impl MotionModel {
    fn n_params(self) -> usize {
        match self {
            MotionModel::Translation => 2,
            MotionModel::Euclidean => 3,
        }
    }
}

impl std::str::FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translation" => Ok(MotionModel::Translation),
            "euclidean" => Ok(MotionModel::Euclidean),
            other => Err(Error::Argument(format!("unknown motion model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub model: MotionModel,
    pub max_iters: usize,
    /// Stop once the parameter increment norm drops below this.
    pub eps: f64,
    pub pyramid_levels: usize,
    /// Gaussian pre-blur of the luma, in packed pixels (0 disables). Damps
    /// sensor noise and Bayer aliasing in the ECC gradients.
    pub smoothing: f64,
    /// Frames whose final correlation falls below this are treated as
    /// failed. Spurious optima on unrelated content sit near zero.
    pub min_rho: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            model: MotionModel::Euclidean,
            max_iters: 50,
            eps: 1e-4,
            pyramid_levels: 2,
            smoothing: 1.0,
            min_rho: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EccResult {
    pub warp: AffineWarp,
    pub rho: f64,
    pub converged: bool,
    /// ρ at the start of the finest level and after every accepted step.
    pub rho_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// HR-coordinate warps, one per frame.
    pub warps: Vec<AffineWarp>,
    pub converged: Vec<bool>,
    pub final_rho: Vec<f64>,
}

/// Mean of the four packed channels.
pub fn raw_to_luma(frame: &PackedRaw) -> Tensor3 {
    let t = frame.tensor();
    let data = t
        .data()
        .chunks_exact(4)
        .map(|px| 0.25 * (px[0] + px[1] + px[2] + px[3]))
        .collect();
    Tensor3::from_vec(t.height(), t.width(), 1, data).expect("dims match")
}

/// 2×2 box decimation of a single-channel image.
fn decimate(img: &Tensor3) -> Tensor3 {
    let (h, w) = (img.height() / 2, img.width() / 2);
    Tensor3::from_fn(h, w, 1, |y, x, _| {
        0.25 * (img.get(2 * y, 2 * x, 0)
            + img.get(2 * y, 2 * x + 1, 0)
            + img.get(2 * y + 1, 2 * x, 0)
            + img.get(2 * y + 1, 2 * x + 1, 0))
    })
}

/// Central differences, one-sided at the border.
fn gradients(img: &Tensor3) -> (Tensor3, Tensor3) {
    let (h, w) = (img.height(), img.width());
    let gx = Tensor3::from_fn(h, w, 1, |y, x, _| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        (img.get(y, r, 0) - img.get(y, l, 0)) / (r - l).max(1) as f64
    });
    let gy = Tensor3::from_fn(h, w, 1, |y, x, _| {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(h - 1));
        (img.get(d, x, 0) - img.get(u, x, 0)) / (d - u).max(1) as f64
    });
    (gx, gy)
}

/// Motion parameters: `[θ, tx, ty]` (θ fixed at 0 for translation-only).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    theta: f64,
    tx: f64,
    ty: f64,
}

impl Params {
    const ZERO: Params = Params {
        theta: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    fn to_warp(self, cx: f64, cy: f64) -> AffineWarp {
        AffineWarp::euclidean(self.theta, self.tx, self.ty, cx, cy)
    }

    fn step(self, model: MotionModel, delta: &DVector<f64>, s: f64) -> Params {
        match model {
            MotionModel::Translation => Params {
                theta: 0.0,
                tx: self.tx + s * delta[0],
                ty: self.ty + s * delta[1],
            },
            MotionModel::Euclidean => Params {
                theta: self.theta + s * delta[0],
                tx: self.tx + s * delta[1],
                ty: self.ty + s * delta[2],
            },
        }
    }
}

/// Per-level state for the ECC ascent. The image is warped onto the
/// template grid and correlated against it.
struct EccProblem<'a> {
    template: &'a Tensor3,
    image: &'a Tensor3,
    gx: Tensor3,
    gy: Tensor3,
    model: MotionModel,
    cx: f64,
    cy: f64,
}

struct Evaluation {
    rho: f64,
    valid: Vec<bool>,
    t_zm: Vec<f64>,
    i_zm: Vec<f64>,
    i_norm: f64,
}

impl<'a> EccProblem<'a> {
    fn new(template: &'a Tensor3, image: &'a Tensor3, model: MotionModel) -> Self {
        let (gx, gy) = gradients(image);
        Self {
            template,
            image,
            gx,
            gy,
            model,
            cx: image.width() as f64 / 2.0,
            cy: image.height() as f64 / 2.0,
        }
    }

    /// Pixels whose one-pixel neighborhood samples strictly inside the image.
    fn valid_mask(&self, w: &AffineWarp) -> Vec<bool> {
        let (h, wd) = (self.template.height(), self.template.width());
        let mut mask = vec![false; h * wd];
        for y in 1..h.saturating_sub(1) {
            for x in 1..wd.saturating_sub(1) {
                let (qx, qy) = w.apply(x as f64 + 0.5, y as f64 + 0.5);
                let (sx, sy) = (qx - 0.5, qy - 0.5);
                mask[y * wd + x] =
                    sx >= 1.0 && sy >= 1.0 && sx <= (wd - 2) as f64 && sy <= (h - 2) as f64;
            }
        }
        mask
    }

    fn evaluate(&self, p: Params) -> Option<Evaluation> {
        let w = p.to_warp(self.cx, self.cy);
        let valid = self.valid_mask(&w);
        let n = valid.iter().filter(|&&v| v).count();
        if n < 16 || n * 4 < valid.len() {
            return None;
        }
        let warped = forward::warp(self.image, &w);
        let t = self.template.data();
        let iw = warped.data();
        let (mut tm, mut im) = (0.0, 0.0);
        for k in (0..valid.len()).filter(|&k| valid[k]) {
            tm += t[k];
            im += iw[k];
        }
        tm /= n as f64;
        im /= n as f64;
        let t_zm: Vec<f64> = (0..valid.len())
            .map(|k| if valid[k] { t[k] - tm } else { 0.0 })
            .collect();
        let i_zm: Vec<f64> = (0..valid.len())
            .map(|k| if valid[k] { iw[k] - im } else { 0.0 })
            .collect();
        let t_norm = t_zm.iter().map(|v| v * v).sum::<f64>().sqrt();
        let i_norm = i_zm.iter().map(|v| v * v).sum::<f64>().sqrt();
        if t_norm <= 1e-12 || i_norm <= 1e-12 {
            return None;
        }
        let corr: f64 = t_zm.iter().zip(&i_zm).map(|(a, b)| a * b).sum();
        Some(Evaluation {
            rho: corr / (t_norm * i_norm),
            valid,
            t_zm,
            i_zm,
            i_norm,
        })
    }

    /// Zero-mean Jacobian of the warped image w.r.t. the motion parameters,
    /// one row per valid pixel.
    fn jacobian(&self, p: Params, ev: &Evaluation) -> (DMatrix<f64>, Vec<usize>) {
        let w = p.to_warp(self.cx, self.cy);
        let gxw = forward::warp(&self.gx, &w);
        let gyw = forward::warp(&self.gy, &w);
        let width = self.template.width();
        let rows: Vec<usize> = (0..ev.valid.len()).filter(|&k| ev.valid[k]).collect();
        let np = self.model.n_params();
        let (s, c) = p.theta.sin_cos();
        let mut jac = DMatrix::<f64>::zeros(rows.len(), np);
        for (r, &k) in rows.iter().enumerate() {
            let (gx, gy) = (gxw.data()[k], gyw.data()[k]);
            match self.model {
                MotionModel::Translation => {
                    jac[(r, 0)] = gx;
                    jac[(r, 1)] = gy;
                }
                MotionModel::Euclidean => {
                    let dx = (k % width) as f64 + 0.5 - self.cx;
                    let dy = (k / width) as f64 + 0.5 - self.cy;
                    jac[(r, 0)] = gx * (-s * dx - c * dy) + gy * (c * dx - s * dy);
                    jac[(r, 1)] = gx;
                    jac[(r, 2)] = gy;
                }
            }
        }
        let n = rows.len() as f64;
        for j in 0..np {
            let mean = jac.column(j).sum() / n;
            jac.column_mut(j).add_scalar_mut(-mean);
        }
        (jac, rows)
    }

    /// Gauss-Newton increment maximizing the linearized correlation.
    fn increment(&self, p: Params, ev: &Evaluation) -> Option<DVector<f64>> {
        let (jac, rows) = self.jacobian(p, ev);
        let t = DVector::from_iterator(rows.len(), rows.iter().map(|&k| ev.t_zm[k]));
        let i = DVector::from_iterator(rows.len(), rows.iter().map(|&k| ev.i_zm[k]));
        let hess = jac.transpose() * &jac;
        let hinv = hess.try_inverse()?;
        let i_proj = jac.transpose() * &i;
        let t_proj = jac.transpose() * &t;
        let i_proj_h = &hinv * &i_proj;
        let corr = t.dot(&i);
        let lambda_n = ev.i_norm * ev.i_norm - i_proj.dot(&i_proj_h);
        let lambda_d = corr - t_proj.dot(&i_proj_h);
        if lambda_d.is_nan() || lambda_d <= 0.0 || !lambda_n.is_finite() {
            return None;
        }
        let lambda = lambda_n / lambda_d;
        let err = t * lambda - i;
        let delta = hinv * (jac.transpose() * err);
        delta.iter().all(|v| v.is_finite()).then_some(delta)
    }
}

struct LevelOutcome {
    params: Params,
    rho: f64,
    rho_start: f64,
    eps_reached: bool,
    trace: Vec<f64>,
}

fn ecc_level(
    template: &Tensor3,
    image: &Tensor3,
    model: MotionModel,
    start: Params,
    max_iters: usize,
    eps: f64,
) -> Option<LevelOutcome> {
    let prob = EccProblem::new(template, image, model);
    let mut params = start;
    let mut ev = prob.evaluate(params)?;
    let rho_start = ev.rho;
    let mut trace = vec![ev.rho];
    let mut eps_reached = false;
    for _ in 0..max_iters {
        let Some(delta) = prob.increment(params, &ev) else {
            break;
        };
        let full = delta.norm();
        if full < eps {
            params = params.step(model, &delta, 1.0);
            if let Some(next) = prob.evaluate(params).filter(|e| e.rho >= ev.rho) {
                ev = next;
                trace.push(ev.rho);
            } else {
                params = params.step(model, &delta, -1.0);
            }
            eps_reached = true;
            break;
        }
        // backtrack so that rho never decreases
        let mut s = 1.0;
        let mut accepted = false;
        while s * full >= 0.5 * eps {
            let cand = params.step(model, &delta, s);
            if let Some(next) = prob.evaluate(cand) {
                if next.rho >= ev.rho {
                    params = cand;
                    ev = next;
                    trace.push(ev.rho);
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // no ascent along the Gauss-Newton direction down to eps
            eps_reached = true;
            break;
        }
        if s * full < eps {
            eps_reached = true;
            break;
        }
    }
    Some(LevelOutcome {
        params,
        rho: ev.rho,
        rho_start,
        eps_reached,
        trace,
    })
}

fn check_inputs(reference: &Tensor3, target: &Tensor3) -> Result<()> {
    if reference.channels() != 1 || target.channels() != 1 {
        return Err(Error::Alignment("ECC needs single-channel images".into()));
    }
    if !reference.same_dims(target) {
        return Err(Error::Alignment(format!(
            "image dims differ: {:?} vs {:?}",
            reference.dims(),
            target.dims()
        )));
    }
    if reference.height() < 4 || reference.width() < 4 {
        return Err(Error::Alignment("images too small for ECC".into()));
    }
    let mean = reference.sum() / reference.data().len() as f64;
    if reference.data().iter().all(|&v| (v - mean).abs() <= 1e-12) {
        return Err(Error::Alignment("reference image has zero variance".into()));
    }
    Ok(())
}

/// Single-level ECC. Returns `W` with `target ≈ warp(reference, W)`.
pub fn ecc_align(
    reference: &Tensor3,
    target: &Tensor3,
    model: MotionModel,
    max_iters: usize,
    eps: f64,
) -> Result<EccResult> {
    ecc_pyramid(reference, target, model, max_iters, eps, 1)
}

/// Coarse-to-fine ECC over `levels` pyramid levels (1 = full resolution only).
pub fn ecc_pyramid(
    reference: &Tensor3,
    target: &Tensor3,
    model: MotionModel,
    max_iters: usize,
    eps: f64,
    levels: usize,
) -> Result<EccResult> {
    check_inputs(reference, target)?;
    let mut refs = vec![reference.clone()];
    let mut tgts = vec![target.clone()];
    for _ in 1..levels.max(1) {
        let (r, t) = (refs.last().unwrap(), tgts.last().unwrap());
        if r.height() < 16 || r.width() < 16 {
            break;
        }
        let (r, t) = (decimate(r), decimate(t));
        refs.push(r);
        tgts.push(t);
    }
    let (cx, cy) = (
        reference.width() as f64 / 2.0,
        reference.height() as f64 / 2.0,
    );
    let identity = EccResult {
        warp: AffineWarp::identity(),
        rho: 0.0,
        converged: false,
        rho_trace: Vec::new(),
    };

    let mut params = Params::ZERO;
    let mut outcome = None;
    for lvl in (0..refs.len()).rev() {
        let start = params;
        // the template is the target; the reference is warped onto it
        match ecc_level(&tgts[lvl], &refs[lvl], model, start, max_iters, eps) {
            Some(o) => {
                params = o.params;
                outcome = Some(o);
            }
            None if lvl > 0 => params = start,
            None => return Ok(identity),
        }
        if lvl > 0 {
            params.tx *= 2.0;
            params.ty *= 2.0;
        }
    }
    let o = outcome.expect("finest level ran");
    let converged = o.eps_reached && o.rho >= o.rho_start && o.rho.is_finite();
    Ok(EccResult {
        warp: params.to_warp(cx, cy),
        rho: o.rho,
        converged,
        rho_trace: o.trace,
    })
}

/// Aligns every frame to the reference frame and returns HR-coordinate
/// warps ready for the solver. Packed-raw pixels are `2·scale` HR pixels
/// wide, so translations are multiplied by that factor.
pub fn align_burst(b: &Burst, cfg: &AlignConfig, deg: &DegradationConfig) -> AlignmentResult {
    let kernel = gaussian_kernel(cfg.smoothing);
    let lumas: Vec<Tensor3> = b
        .frames()
        .par_iter()
        .map(|f| separable_blur(&raw_to_luma(f), &kernel))
        .collect();
    let reference = &lumas[b.reference_index()];
    let factor = deg.packed_factor() as f64;
    let per_frame: Vec<(AffineWarp, bool, f64)> = lumas
        .par_iter()
        .enumerate()
        .map(|(i, luma)| {
            if i == b.reference_index() {
                return (AffineWarp::identity(), true, 1.0);
            }
            match ecc_pyramid(
                reference,
                luma,
                cfg.model,
                cfg.max_iters,
                cfg.eps,
                cfg.pyramid_levels,
            ) {
                Ok(r)
                    if r.converged
                        && r.rho >= cfg.min_rho
                        && r.warp.0.iter().all(|v| v.is_finite()) =>
                {
                    (r.warp.rescaled(factor), true, r.rho)
                }
                Ok(r) => (AffineWarp::identity(), false, r.rho),
                Err(_) => (AffineWarp::identity(), false, 0.0),
            }
        })
        .collect();
    let mut out = AlignmentResult {
        warps: Vec::with_capacity(b.len()),
        converged: Vec::with_capacity(b.len()),
        final_rho: Vec::with_capacity(b.len()),
    };
    for (w, c, rho) in per_frame {
        out.warps.push(w);
        out.converged.push(c);
        out.final_rho.push(rho);
    }
    out
}

/// Mean displacement between two warps over pixel centers on a `step`-pixel
/// grid of an image of `dims = (height, width)`.
pub fn endpoint_error(a: &AffineWarp, b: &AffineWarp, dims: (usize, usize), step: usize) -> f64 {
    let step = step.max(1);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in (0..dims.0).step_by(step) {
        for x in (0..dims.1).step_by(step) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (ax, ay) = a.apply(px, py);
            let (bx, by) = b.apply(px, py);
            sum += (ax - bx).hypot(ay - by);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// [`endpoint_error`] averaged over every frame except the reference.
pub fn mean_endpoint_error(
    estimated: &[AffineWarp],
    truth: &[AffineWarp],
    reference_index: usize,
    dims: (usize, usize),
    step: usize,
) -> f64 {
    let errs: Vec<f64> = estimated
        .iter()
        .zip(truth)
        .enumerate()
        .filter(|(i, _)| *i != reference_index)
        .map(|(_, (e, t))| endpoint_error(e, t, dims, step))
        .collect();
    if errs.is_empty() {
        0.0
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}
