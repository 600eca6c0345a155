#![allow(dead_code)]

use burstsr::forward::AffineWarp;
use burstsr::tensor::{Burst, PackedRaw, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_burst(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Burst {
    Burst::new(
        (0..n)
            .map(|_| PackedRaw::new(random_tensor(rng, h, w, 4)).unwrap())
            .collect(),
    )
    .unwrap()
}

/// Rotation within ±2° about the center plus translation within ±3 px.
pub fn small_warp(rng: &mut ChaCha8Rng, h: usize, w: usize) -> AffineWarp {
    AffineWarp::euclidean(
        rng.random_range(-2.0f64..2.0).to_radians(),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        w as f64 / 2.0,
        h as f64 / 2.0,
    )
}

pub fn rel_gap(lhs: f64, rhs: f64, nx: f64, ny: f64) -> f64 {
    (lhs - rhs).abs() / (nx * ny)
}

/// Plain bilinear sample with zero outside, written out tap by tap.
pub fn bilinear(img: &Tensor3, sx: f64, sy: f64, c: usize) -> f64 {
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (xi, yi) = (x0 + dx, y0 + dy);
            if xi >= 0.0 && yi >= 0.0 && (xi as usize) < img.width() && (yi as usize) < img.height()
            {
                v += wx * wy * img.get(yi as usize, xi as usize, c);
            }
        }
    }
    v
}

/// Isotropic TV by direct summation.
pub fn tv_direct(x: &Tensor3) -> f64 {
    let (h, w, c) = x.dims();
    let mut s = 0.0;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let gx = if xx + 1 < w {
                    x.get(y, xx + 1, ch) - x.get(y, xx, ch)
                } else {
                    0.0
                };
                let gy = if y + 1 < h {
                    x.get(y + 1, xx, ch) - x.get(y, xx, ch)
                } else {
                    0.0
                };
                s += (gx * gx + gy * gy).sqrt();
            }
        }
    }
    s
}
