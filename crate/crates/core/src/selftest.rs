//! Operator consistency checks: adjoint identities, the spectral bound that
//! justifies `α = B`, and monotone descent of the solver on a small scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward::{self, AffineWarp, DegradationConfig};
use crate::prior::{PriorSpec, TotalVariation};
use crate::scene::{self, SceneKind};
use crate::solver::{self, SolverConfig};
use crate::synth::{self, CameraParams, NoiseParams, SynthConfig};
use crate::tensor::{Burst, PackedRaw, Tensor3};

pub const ADJOINT_TOL: f64 = 1e-5;
pub const SPECTRAL_SLACK: f64 = 1e-3;
pub const DESCENT_SLACK: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SelftestOptions {
    /// HR side length of the random test images.
    pub size: usize,
    pub trials: usize,
    pub seed: u64,
    /// Negative control: substitute the inverse warp for the warp adjoint.
    pub break_warp_adjoint: bool,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            size: 32,
            trials: 100,
            seed: 0,
            break_warp_adjoint: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<22} {:>14} {:>12}  status\n",
            "property", "worst", "limit"
        );
        for c in &self.checks {
            s.push_str(&format!(
                "{:<22} {:>14.6e} {:>12.3e}  {}\n",
                c.name,
                c.value,
                c.threshold,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3 {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Rotation up to ±2° about the center and translation up to ±3 px.
pub fn random_warp(rng: &mut ChaCha8Rng, h: usize, w: usize) -> AffineWarp {
    AffineWarp::euclidean(
        rng.random_range(-2.0f64..2.0).to_radians(),
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        w as f64 / 2.0,
        h as f64 / 2.0,
    )
}

fn rel_gap(lhs: f64, rhs: f64, nx: f64, ny: f64) -> f64 {
    (lhs - rhs).abs() / (nx * ny)
}

fn le_check(name: &'static str, value: f64, threshold: f64) -> Check {
    Check {
        name,
        value,
        threshold,
        passed: value <= threshold,
    }
}

/// Runs the adjoint suite for warp, downsample, mosaick and the composite
/// operator; returns the worst relative gap per pair.
pub fn adjoint_checks(opts: &SelftestOptions) -> Result<Vec<Check>> {
    let n = opts.size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let warp_t = |y: &Tensor3, w: &AffineWarp| {
        if opts.break_warp_adjoint {
            forward::warp(y, &w.inverse().unwrap_or(*w))
        } else {
            forward::warp_adjoint(y, w)
        }
    };

    let (mut g_warp, mut g_down, mut g_mos, mut g_comp) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let deg = DegradationConfig::new(2)?;
    for _ in 0..opts.trials {
        let x = random_tensor(&mut rng, n, n, 3);
        let y = random_tensor(&mut rng, n, n, 3);
        let w = random_warp(&mut rng, n, n);
        g_warp = g_warp.max(rel_gap(
            forward::warp(&x, &w).dot(&y),
            x.dot(&warp_t(&y, &w)),
            x.norm(),
            y.norm(),
        ));

        let r = if n.is_multiple_of(4) { 4 } else { 2 };
        let yd = random_tensor(&mut rng, n / r, n / r, 3);
        g_down = g_down.max(rel_gap(
            forward::downsample(&x, r)?.dot(&yd),
            x.dot(&forward::downsample_adjoint(&yd, r)?),
            x.norm(),
            yd.norm(),
        ));

        let ym = PackedRaw::new(random_tensor(&mut rng, n / 2, n / 2, 4))?;
        g_mos = g_mos.max(rel_gap(
            forward::mosaick(&x)?.tensor().dot(ym.tensor()),
            x.dot(&forward::mosaick_adjoint(&ym)),
            x.norm(),
            ym.tensor().norm(),
        ));

        let b = rng.random_range(1..=4usize);
        let warps: Vec<AffineWarp> = (0..b).map(|_| random_warp(&mut rng, n, n)).collect();
        let f = deg.packed_factor();
        let yb = Burst::new(
            (0..b)
                .map(|_| PackedRaw::new(random_tensor(&mut rng, n / f, n / f, 4)))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let ax = forward::apply_a(&x, &warps, &deg)?;
        let aty = if opts.break_warp_adjoint {
            let mut acc = Tensor3::zeros(n, n, 3);
            for (fr, w) in yb.frames().iter().zip(&warps) {
                let up = forward::downsample_adjoint(&forward::mosaick_adjoint(fr), deg.scale)?;
                acc.axpy(1.0, &warp_t(&up, w));
            }
            acc
        } else {
            forward::apply_at(&yb, &warps, &deg)?
        };
        g_comp = g_comp.max(rel_gap(
            ax.dot(&yb),
            x.dot(&aty),
            x.norm(),
            yb.norm_sq().sqrt(),
        ));
    }
    Ok(vec![
        le_check("adjoint_warp", g_warp, ADJOINT_TOL),
        le_check("adjoint_downsample", g_down, ADJOINT_TOL),
        le_check("adjoint_mosaick", g_mos, ADJOINT_TOL),
        le_check("adjoint_composite", g_comp, ADJOINT_TOL),
    ])
}

/// `‖AᵀA‖₂ / B` for random warps at each burst size; must stay within
/// `1 + SPECTRAL_SLACK`.
pub fn spectral_check(
    opts: &SelftestOptions,
    burst_sizes: &[usize],
    scale: usize,
) -> Result<Check> {
    let n = opts.size;
    let deg = DegradationConfig::new(scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5bec);
    let mut worst = 0.0f64;
    for &b in burst_sizes {
        let mut warps = vec![AffineWarp::identity()];
        warps.extend((1..b).map(|_| random_warp(&mut rng, n, n)));
        let est = forward::operator_norm_estimate(&warps, &deg, (n, n), 30)?;
        worst = worst.max(est / b as f64);
    }
    Ok(le_check("spectral_bound", worst, 1.0 + SPECTRAL_SLACK))
}

/// Largest objective increase over `K = 10` stages with `α = B`, TV prior
/// and no extrapolation, on a small synthetic scene.
pub fn descent_check(opts: &SelftestOptions) -> Result<Check> {
    let n = opts.size.max(16) / 16 * 16;
    let srgb = scene::generate(SceneKind::Textured, n, n, opts.seed);
    let cfg = SynthConfig {
        burst_size: 4,
        scale: 2,
        seed: opts.seed,
        max_translation: 2.0,
        ..SynthConfig::default()
    }
    .with_noise(NoiseParams {
        shot: 1e-3,
        read: 1e-5,
    });
    let data = synth::synthesize(&srgb, &cfg, &CameraParams::default())?;
    let solver_cfg = SolverConfig {
        iterations: 10,
        alpha: None,
        sigma: None,
        prior: PriorSpec::default(),
        prox_strength: Some(0.01),
        monotone_guard: Some(false),
        ..SolverConfig::default()
    };
    let prior = TotalVariation::default();
    let rep = solver::reconstruct(
        &data.burst,
        &data.warps,
        &prior,
        &solver_cfg,
        &cfg.degradation(),
    )?;
    Ok(le_check(
        "mm_descent",
        max_objective_increase(&rep),
        DESCENT_SLACK,
    ))
}

/// `max_k J(x^{k+1}) − J(x^k)` including the step from `x^0`.
pub fn max_objective_increase(rep: &solver::SolveReport) -> f64 {
    let js: Vec<f64> = std::iter::once(&rep.initial)
        .chain(&rep.iterations)
        .filter_map(|r| r.objective)
        .collect();
    js.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn run(opts: &SelftestOptions) -> Result<SelftestReport> {
    let mut checks = adjoint_checks(opts)?;
    checks.push(spectral_check(opts, &[1, 4], 1)?);
    checks.push(descent_check(opts)?);
    Ok(SelftestReport { checks })
}
