//! Fidelity metrics in linear sensor space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// dB; `+∞` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

fn check_dims(a: &Tensor3, b: &Tensor3) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Argument(format!(
            "image dims differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

pub fn mse(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    check_dims(a, b)?;
    let sq = |(x, y): (&f64, &f64)| (x - y) * (x - y);
    let mut it = a.data().iter().zip(b.data()).map(sq);
    // mean of deviations from the first term: exact for a uniform error
    let Some(first) = it.next() else {
        return Ok(0.0);
    };
    let n = a.data().len() as f64;
    Ok(first + compensated_sum(it.map(|v| v - first)) / n)
}

/// `10·log10(peak² / MSE)`.
pub fn psnr(a: &Tensor3, b: &Tensor3, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn window_weights(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "valid" filtering of a single plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all full windows and channels, Gaussian-weighted.
pub fn ssim(a: &Tensor3, b: &Tensor3, params: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    let (h, w, ch) = a.dims();
    if h < params.window || w < params.window {
        return Err(Error::Argument(format!(
            "{h}x{w} image is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let k = window_weights(params.window, params.sigma);
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..ch {
        let pa = a.channel(c).into_vec();
        let pb = b.channel(c).into_vec();
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
        let (mu_a, ..) = filter_valid(&pa, h, w, &k);
        let (mu_b, ..) = filter_valid(&pb, h, w, &k);
        let (e_aa, ..) = filter_valid(&aa, h, w, &k);
        let (e_bb, ..) = filter_valid(&bb, h, w, &k);
        let (e_ab, ..) = filter_valid(&ab, h, w, &k);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PSNR and SSIM of `estimate` against `reference`, both clamped to `[0, 1]`.
pub fn evaluate(estimate: &Tensor3, reference: &Tensor3) -> Result<MetricReport> {
    let a = estimate.clamp(0.0, 1.0);
    let b = reference.clamp(0.0, 1.0);
    Ok(MetricReport {
        psnr: psnr(&a, &b, 1.0)?,
        ssim: ssim(&a, &b, &SsimParams::default())?,
    })
}
