//! Regularizers, exposed through their proximal operators.
//!
//! `prox(v, t) = argmin_x ½‖x − v‖² + t·R(x)`. Channels are treated
//! independently throughout.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor3;

/// Plug-in point for the solver's regularization step.
///
/// Implementations are stateless: `prox` is a pure function of its inputs.
pub trait Regularizer: Send + Sync {
    fn name(&self) -> &'static str;

    fn prox(&self, v: &Tensor3, t: f64) -> Tensor3;

    /// `R(x)`, when the prox is exact for a known functional.
    fn value(&self, _x: &Tensor3) -> Option<f64> {
        None
    }

    fn has_value(&self) -> bool {
        false
    }
}

/// `R ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrior;

impl Regularizer for IdentityPrior {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn prox(&self, v: &Tensor3, _t: f64) -> Tensor3 {
        v.clone()
    }

    fn value(&self, _x: &Tensor3) -> Option<f64> {
        Some(0.0)
    }

    fn has_value(&self) -> bool {
        true
    }
}

/// Isotropic total variation with forward differences and a zero gradient
/// across the last row and column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalVariation {
    pub inner_iters: usize,
    /// Relative change of the primal iterate at which the inner loop stops.
    pub tol: f64,
}

impl Default for TotalVariation {
    fn default() -> Self {
        Self {
            inner_iters: 50,
            tol: 1e-5,
        }
    }
}

/// Forward-difference gradient of one plane; returns `(dx, dy)`.
fn grad(u: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; h * w];
    let mut dy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            if x + 1 < w {
                dx[k] = u[k + 1] - u[k];
            }
            if y + 1 < h {
                dy[k] = u[k + w] - u[k];
            }
        }
    }
    (dx, dy)
}

/// Adjoint of [`grad`]: `gradᵀ(px, py)`.
fn grad_t(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let k = y * w + x;
            let mut v = 0.0;
            if x + 1 < w {
                v -= px[k];
            }
            if x > 0 {
                v += px[k - 1];
            }
            if y + 1 < h {
                v -= py[k];
            }
            if y > 0 {
                v += py[k - w];
            }
            out[k] = v;
        }
    }
    out
}

fn tv_plane(u: &[f64], h: usize, w: usize) -> f64 {
    let (dx, dy) = grad(u, h, w);
    dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).sum()
}

impl TotalVariation {
    /// `Σ_c Σ_p ‖∇x_c(p)‖₂`.
    pub fn tv(x: &Tensor3) -> f64 {
        (0..x.channels())
            .map(|c| tv_plane(x.channel(c).data(), x.height(), x.width()))
            .sum()
    }

    /// `½‖x − v‖² + t·TV(x)`.
    pub fn prox_objective(x: &Tensor3, v: &Tensor3, t: f64) -> f64 {
        0.5 * x.sub(v).norm_sq() + t * Self::tv(x)
    }

    /// Fast gradient projection on the dual of the TV denoising problem for
    /// one plane.
    fn prox_plane(&self, v: &[f64], h: usize, w: usize, t: f64) -> Vec<f64> {
        let n = h * w;
        let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
        let (mut rx, mut ry) = (vec![0.0; n], vec![0.0; n]);
        let mut tk = 1.0f64;
        let mut x_prev = v.to_vec();
        let step = 1.0 / (8.0 * t);
        for _ in 0..self.inner_iters {
            let gt = grad_t(&rx, &ry, h, w);
            let x: Vec<f64> = v.iter().zip(&gt).map(|(a, b)| a - t * b).collect();
            let (gx, gy) = grad(&x, h, w);
            let (px_old, py_old) = (px.clone(), py.clone());
            for k in 0..n {
                let (qx, qy) = (rx[k] + step * gx[k], ry[k] + step * gy[k]);
                let m = qx.hypot(qy).max(1.0);
                px[k] = qx / m;
                py[k] = qy / m;
            }
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
            let beta = (tk - 1.0) / tn;
            for k in 0..n {
                rx[k] = px[k] + beta * (px[k] - px_old[k]);
                ry[k] = py[k] + beta * (py[k] - py_old[k]);
            }
            tk = tn;

            let gt = grad_t(&px, &py, h, w);
            let x: Vec<f64> = v.iter().zip(&gt).map(|(a, b)| a - t * b).collect();
            let num: f64 = x.iter().zip(&x_prev).map(|(a, b)| (a - b).powi(2)).sum();
            let den: f64 = x.iter().map(|a| a * a).sum();
            x_prev = x;
            if num.sqrt() <= self.tol * den.sqrt().max(1e-300) {
                break;
            }
        }
        x_prev
    }
}

impl Regularizer for TotalVariation {
    fn name(&self) -> &'static str {
        "tv"
    }

    fn prox(&self, v: &Tensor3, t: f64) -> Tensor3 {
        if t <= 0.0 {
            return v.clone();
        }
        let (h, w) = (v.height(), v.width());
        let mut out = v.clone();
        for c in 0..v.channels() {
            let plane = v.channel(c);
            let x = self.prox_plane(plane.data(), h, w, t);
            // the dual iteration is not monotone in the primal objective;
            // never return something worse than the input itself
            let f_x = 0.5
                * x.iter()
                    .zip(plane.data())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                + t * tv_plane(&x, h, w);
            let f_v = t * tv_plane(plane.data(), h, w);
            if f_x <= f_v {
                out.set_channel(c, &Tensor3::from_vec(h, w, 1, x).expect("plane dims"));
            }
        }
        out
    }

    fn value(&self, x: &Tensor3) -> Option<f64> {
        Some(Self::tv(x))
    }

    fn has_value(&self) -> bool {
        true
    }
}

/// Gaussian smoothing with `σ = t` as a plug-and-play denoiser. Not the prox
/// of any known functional, so it carries no `value`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianSmoother;

/// Normalized Gaussian taps for `σ = sigma`, radius `⌈3σ⌉`; a single unit
/// tap for `σ ≤ 0`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with edge replication.
pub fn separable_blur(v: &Tensor3, kernel: &[f64]) -> Tensor3 {
    let (h, w, ch) = v.dims();
    let r = (kernel.len() / 2) as i64;
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let tmp = Tensor3::from_fn(h, w, ch, |y, x, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * v.get(y, clamp(x as i64 + k as i64 - r, w), c))
            .sum()
    });
    Tensor3::from_fn(h, w, ch, |y, x, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * tmp.get(clamp(y as i64 + k as i64 - r, h), x, c))
            .sum()
    })
}

impl Regularizer for GaussianSmoother {
    fn name(&self) -> &'static str {
        "smoother"
    }

    fn prox(&self, v: &Tensor3, t: f64) -> Tensor3 {
        if t <= 0.0 {
            return v.clone();
        }
        separable_blur(v, &gaussian_kernel(t))
    }
}

/// Serializable prior selection, as found in solver config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum PriorSpec {
    Identity,
    Tv {
        #[serde(default = "default_inner_iters")]
        inner_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        /// Explicit prox strength; overrides the solver's derived value.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strength: Option<f64>,
    },
    Smoother {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strength: Option<f64>,
    },
}

fn default_inner_iters() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-5
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Tv {
            inner_iters: default_inner_iters(),
            tol: default_tol(),
            strength: None,
        }
    }
}

impl PriorSpec {
    pub fn build(&self) -> Box<dyn Regularizer> {
        match *self {
            PriorSpec::Identity => Box::new(IdentityPrior),
            PriorSpec::Tv {
                inner_iters, tol, ..
            } => Box::new(TotalVariation { inner_iters, tol }),
            PriorSpec::Smoother { .. } => Box::new(GaussianSmoother),
        }
    }

    pub fn strength(&self) -> Option<f64> {
        match *self {
            PriorSpec::Identity => None,
            PriorSpec::Tv { strength, .. } | PriorSpec::Smoother { strength } => strength,
        }
    }
}
