//! Deterministic procedural test scenes in sRGB code values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::synth::stream_rng;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneKind {
    /// Low-frequency blobs and long-wavelength gratings; well inside the
    /// packed-raw Nyquist limit, suited to registration.
    Smooth,
    /// Dense mid-frequency gratings and soft-edged discs, resolved by the
    /// packed-raw luma; suited to registration under noise.
    Structured,
    /// Adds fine gratings and soft-edged discs with detail near the HR
    /// Nyquist limit, suited to measuring super-resolution gains.
    Textured,
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    color: [f64; 3],
}

struct Grating {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Disc {
    cx: f64,
    cy: f64,
    radius: f64,
    edge: f64,
    color: [f64; 3],
}

/// `h × w × 3` image with values in `[0.05, 0.95]`.
pub fn generate(kind: SceneKind, height: usize, width: usize, seed: u64) -> Tensor3 {
    let mut rng = stream_rng(seed, 0x5ce7e);
    let (hf, wf) = (height as f64, width as f64);
    let scale = hf.min(wf);

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let grad: [f64; 2] = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];

    let blobs: Vec<Blob> = (0..8)
        .map(|_| Blob {
            cx: rng.random_range(0.0..wf),
            cy: rng.random_range(0.0..hf),
            sigma: rng.random_range(0.08..0.25) * scale,
            color: std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
        })
        .collect();

    let (n_grat, wl_range) = match kind {
        SceneKind::Smooth => (3, (0.25 * scale, 0.6 * scale)),
        SceneKind::Structured => (12, (scale / 16.0, scale / 4.0)),
        SceneKind::Textured => (5, (3.0, 12.0)),
    };
    let amp_range = match kind {
        SceneKind::Structured => (0.04, 0.12),
        _ => (0.03, 0.08),
    };
    let gratings: Vec<Grating> = (0..n_grat)
        .map(|_| {
            let wl: f64 = rng.random_range(wl_range.0..wl_range.1);
            let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / wl;
            Grating {
                kx: k * th.cos(),
                ky: k * th.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: std::array::from_fn(|_| rng.random_range(amp_range.0..amp_range.1)),
            }
        })
        .collect();

    let (n_disc, edge_range) = match kind {
        SceneKind::Smooth => (0, (1.0, 1.0)),
        SceneKind::Structured => (8, (scale / 128.0, scale / 64.0)),
        SceneKind::Textured => (6, (0.6, 1.5)),
    };
    let discs: Vec<Disc> = (0..n_disc)
        .map(|_| Disc {
            cx: rng.random_range(0.0..wf),
            cy: rng.random_range(0.0..hf),
            radius: rng.random_range(0.05..0.2) * scale,
            edge: rng.random_range(edge_range.0..=edge_range.1),
            color: std::array::from_fn(|_| rng.random_range(-0.25..0.25)),
        })
        .collect();

    let raw = Tensor3::from_fn(height, width, 3, |y, x, c| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = base[c] + grad[0] * (px / wf - 0.5) + grad[1] * (py / hf - 0.5);
        for b in &blobs {
            let d2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
            v += b.color[c] * (-d2 / (2.0 * b.sigma * b.sigma)).exp();
        }
        for g in &gratings {
            v += g.amp[c] * (g.kx * px + g.ky * py + g.phase).sin();
        }
        for d in &discs {
            let r = ((px - d.cx).powi(2) + (py - d.cy).powi(2)).sqrt();
            let inside = 0.5 * (1.0 - ((r - d.radius) / d.edge).tanh());
            v += d.color[c] * inside;
        }
        v
    });
    raw.map(|v| v.clamp(0.05, 0.95))
}
