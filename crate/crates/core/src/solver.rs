//! Majorization-minimization reconstruction.
//!
//! For the objective
//!
//! ```text
//! J(x) = 1/(2σ²B) Σ_i ‖y_i − A_i x‖² + λ R(x),   A_i = M H S_i
//! ```
//!
//! each stage takes a gradient step on the data term with step `1/α`,
//!
//! ```text
//! z = x + (1/α) Σ_i A_iᵀ (y_i − A_i x)
//! ```
//!
//! and then applies `prox_{tR}(z)` with `t = λσ²B/α`. With `α ≥ ‖AᵀA‖₂` the
//! quadratic surrogate majorizes `J`, so exact prox steps never increase it.
//! `α` defaults to `B`, which bounds `‖AᵀA‖₂` because every `A_i` has
//! operator norm at most one. The bound is loose once `r > 1` (each packed
//! sample sees one of `(2r)²` HR sites), so `α` can instead be set from a
//! power-iteration estimate of `‖AᵀA‖₂`.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forward::{self, AffineWarp, DegradationConfig};
use crate::prior::{gaussian_kernel, separable_blur, PriorSpec, Regularizer};
use crate::tensor::{Burst, PackedRaw, Tensor3};

/// Lower bound applied to an estimated noise level.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Momentum schedule `w^(k)` applied after each prox step.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Extrapolation {
    #[default]
    None,
    /// `w_k = (t_{k−1} − 1)/t_k`, `t_k = (1 + √(1 + 4t_{k−1}²))/2`, `t_0 = 1`.
    Fista,
    /// `w^(1..K)`; missing entries are zero.
    Explicit(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExtrapolationRepr {
    Name(String),
    Weights(Vec<f64>),
}

impl Serialize for Extrapolation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Extrapolation::None => ExtrapolationRepr::Name("none".into()),
            Extrapolation::Fista => ExtrapolationRepr::Name("fista".into()),
            Extrapolation::Explicit(w) => ExtrapolationRepr::Weights(w.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Extrapolation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ExtrapolationRepr::deserialize(d)? {
            ExtrapolationRepr::Name(n) => match n.as_str() {
                "none" => Ok(Extrapolation::None),
                "fista" => Ok(Extrapolation::Fista),
                other => Err(serde::de::Error::custom(format!(
                    "unknown extrapolation '{other}', expected none, fista or a list of weights"
                ))),
            },
            ExtrapolationRepr::Weights(w) => Ok(Extrapolation::Explicit(w)),
        }
    }
}

/// Safety factor applied to the power-iteration estimate of `‖AᵀA‖₂`.
pub const SPECTRAL_MARGIN: f64 = 1.01;
const SPECTRAL_ITERS: usize = 30;

/// How `α` is chosen. JSON: `null` or `"burst"` for `B`, `"spectral"`, or a
/// number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Alpha {
    #[default]
    BurstSize,
    /// `SPECTRAL_MARGIN · ‖AᵀA‖₂` from power iteration on the actual warps.
    Spectral,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Value(f64),
    Rule(String),
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Alpha::BurstSize => AlphaRepr::Rule("burst".into()),
            Alpha::Spectral => AlphaRepr::Rule("spectral".into()),
            Alpha::Value(v) => AlphaRepr::Value(*v),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match AlphaRepr::deserialize(d)? {
            AlphaRepr::Value(v) => Ok(Alpha::Value(v)),
            AlphaRepr::Rule(r) => match r.as_str() {
                "burst" => Ok(Alpha::BurstSize),
                "spectral" => Ok(Alpha::Spectral),
                other => Err(serde::de::Error::custom(format!(
                    "unknown alpha rule '{other}', expected burst, spectral or a number"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(rename = "K", default = "default_k")]
    pub iterations: usize,
    /// Majorizer constant; `None` means `B`.
    #[serde(default)]
    pub alpha: Option<Alpha>,
    /// Noise level; `None` means [`estimate_sigma`].
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Explicit prox strength `t`, overriding `λσ²B/α`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prox_strength: Option<f64>,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub extrapolation: Extrapolation,
    /// `None` means on for priors with a value, off otherwise.
    #[serde(default)]
    pub monotone_guard: Option<bool>,
}

fn default_k() -> usize {
    10
}

fn default_lambda() -> f64 {
    0.002
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: default_k(),
            alpha: None,
            sigma: None,
            lambda: default_lambda(),
            prox_strength: None,
            prior: PriorSpec::default(),
            extrapolation: Extrapolation::None,
            monotone_guard: None,
        }
    }
}

/// Every scalar of the iteration after defaults are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedParams {
    pub burst_size: usize,
    pub alpha: f64,
    pub sigma: f64,
    /// Weight of `R` in the reported objective, consistent with `prox_strength`.
    pub lambda: f64,
    pub prox_strength: f64,
    pub monotone_guard: bool,
}

impl SolverConfig {
    pub fn resolve(
        &self,
        problem: &Problem<'_>,
        prior: &dyn Regularizer,
    ) -> Result<ResolvedParams> {
        let b = problem.burst;
        if self.iterations == 0 {
            return Err(Error::Parameter("K must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        let n = b.len();
        let bf = n as f64;
        let rule = self.alpha.unwrap_or_default();
        let alpha = match rule {
            Alpha::BurstSize => bf,
            Alpha::Spectral => {
                SPECTRAL_MARGIN
                    * forward::operator_norm_estimate(
                        problem.warps,
                        problem.deg,
                        problem.hr_dims(),
                        SPECTRAL_ITERS,
                    )?
            }
            Alpha::Value(v) => v,
        };
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
        }
        let sigma = match self.sigma {
            Some(s) if s > 0.0 && s.is_finite() => s,
            Some(s) => return Err(Error::Parameter(format!("sigma must be > 0, got {s}"))),
            None => estimate_sigma(b).max(SIGMA_FLOOR),
        };
        let guard = self.monotone_guard.unwrap_or_else(|| prior.has_value());
        if guard
            && self.monotone_guard == Some(true)
            && matches!(rule, Alpha::Value(_))
            && alpha < bf
        {
            return Err(Error::Parameter(format!(
                "monotone guard needs alpha >= B = {n} or alpha = \"spectral\", got {alpha}"
            )));
        }
        let override_t = self.prox_strength.or(self.prior.strength());
        let (prox_strength, lambda) = match override_t {
            Some(t) if t >= 0.0 => (t, t * alpha / (sigma * sigma * bf)),
            Some(t) => {
                return Err(Error::Parameter(format!(
                    "prox strength must be >= 0, got {t}"
                )))
            }
            None => (self.lambda * sigma * sigma * bf / alpha, self.lambda),
        };
        Ok(ResolvedParams {
            burst_size: n,
            alpha,
            sigma,
            lambda,
            prox_strength,
            monotone_guard: guard,
        })
    }
}

/// Diagnostics for one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub data_fidelity: f64,
    pub objective: Option<f64>,
    pub residual_norm: f64,
    pub step_norm: f64,
    /// The monotone guard rejected the extrapolated point after this step.
    pub guard_triggered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Last iterate clamped to `[0, 1]`.
    pub x_final: Tensor3,
    /// Diagnostics of `x^0` (`step_norm` is zero).
    pub initial: IterationRecord,
    /// Exactly `K` entries, for `x^1 … x^K`.
    pub iterations: Vec<IterationRecord>,
    pub params: ResolvedParams,
}

impl SolveReport {
    /// One row per stage `k = 1..K`; the initial state is in [`Self::initial`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,data_fidelity,objective,residual_norm,step_norm\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.12e}")).unwrap_or_default();
        for (k, r) in self.iterations.iter().enumerate() {
            s.push_str(&format!(
                "{},{:.12e},{},{:.12e},{:.12e}\n",
                k + 1,
                r.data_fidelity,
                fmt(r.objective),
                r.residual_norm,
                r.step_norm
            ));
        }
        s
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.iterations.last().unwrap_or(&self.initial)
    }
}

/// The measurement side of the inverse problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub burst: &'a Burst,
    pub warps: &'a [AffineWarp],
    pub deg: &'a DegradationConfig,
}

impl<'a> Problem<'a> {
    pub fn new(
        burst: &'a Burst,
        warps: &'a [AffineWarp],
        deg: &'a DegradationConfig,
    ) -> Result<Self> {
        if warps.len() != burst.len() {
            return Err(Error::Argument(format!(
                "{} warps for {} frames",
                warps.len(),
                burst.len()
            )));
        }
        Ok(Self { burst, warps, deg })
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        let (h, w) = self.burst.frame_dims();
        let f = self.deg.packed_factor();
        (h * f, w * f)
    }

    fn check_x(&self, x: &Tensor3) -> Result<()> {
        let (h, w) = self.hr_dims();
        if x.dims() != (h, w, 3) {
            return Err(Error::Argument(format!(
                "estimate has dims {:?}, burst implies ({h}, {w}, 3)",
                x.dims()
            )));
        }
        Ok(())
    }

    /// `y_i − A_i x` for every frame.
    pub fn residual(&self, x: &Tensor3) -> Result<Burst> {
        self.check_x(x)?;
        let pred = forward::apply_a(x, self.warps, self.deg)?;
        let frames = self
            .burst
            .frames()
            .par_iter()
            .zip(pred.frames().par_iter())
            .map(|(y, p)| PackedRaw::new(y.tensor().sub(p.tensor())))
            .collect::<Result<Vec<_>>>()?;
        Burst::new(frames)
    }

    /// `Σ_i ‖y_i − A_i x‖²`
    pub fn residual_sq(&self, x: &Tensor3) -> Result<f64> {
        Ok(self.residual(x)?.norm_sq())
    }

    /// `1/(2σ²B) Σ_i ‖y_i − A_i x‖²`
    pub fn data_fidelity(&self, x: &Tensor3, sigma: f64) -> Result<f64> {
        let b = self.burst.len() as f64;
        Ok(self.residual_sq(x)? / (2.0 * sigma * sigma * b))
    }

    /// `x + (1/α) Σ_i A_iᵀ (y_i − A_i x)`
    pub fn gradient_step(&self, x: &Tensor3, alpha: f64) -> Result<Tensor3> {
        let back = forward::apply_at(&self.residual(x)?, self.warps, self.deg)?;
        let mut z = x.clone();
        z.axpy(1.0 / alpha, &back);
        Ok(z)
    }

    /// Back-projection normalized by the blurred per-plane coverage
    /// `Aᵀ1`, so flat regions come out unbiased and unsampled HR sites are
    /// filled from their neighbors.
    pub fn initialize(&self) -> Result<Tensor3> {
        let bsz = self.burst.len() as f64;
        let num = forward::apply_at(self.burst, self.warps, self.deg)?.scale(1.0 / bsz);
        let (h, w) = self.burst.frame_dims();
        let ones = Burst::new(vec![
            PackedRaw::new(Tensor3::filled(h, w, 4, 1.0))?;
            self.burst.len()
        ])?;
        let den = forward::apply_at(&ones, self.warps, self.deg)?.scale(1.0 / bsz);
        let kernel = gaussian_kernel(self.deg.scale as f64);
        let num = separable_blur(&num, &kernel);
        let den = separable_blur(&den, &kernel);
        let peak = den.data().iter().copied().fold(0.0, f64::max);
        let data = num
            .data()
            .iter()
            .zip(den.data())
            .map(|(&n, &d)| {
                if d > 1e-6 * peak {
                    (n / d).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Tensor3::from_vec(num.height(), num.width(), 3, data)
    }
}

pub fn initialize(b: &Burst, warps: &[AffineWarp], deg: &DegradationConfig) -> Result<Tensor3> {
    Problem::new(b, warps, deg)?.initialize()
}

/// One data step with `α = B`.
pub fn gradient_step(
    x: &Tensor3,
    b: &Burst,
    warps: &[AffineWarp],
    deg: &DegradationConfig,
) -> Result<Tensor3> {
    Problem::new(b, warps, deg)?.gradient_step(x, b.len() as f64)
}

pub fn data_fidelity(
    x: &Tensor3,
    b: &Burst,
    warps: &[AffineWarp],
    deg: &DegradationConfig,
    sigma: f64,
) -> Result<f64> {
    Problem::new(b, warps, deg)?.data_fidelity(x, sigma)
}

/// `data_fidelity + λ R(x)`; errors for priors without a value.
pub fn objective(
    x: &Tensor3,
    b: &Burst,
    warps: &[AffineWarp],
    prior: &dyn Regularizer,
    deg: &DegradationConfig,
    sigma: f64,
    lambda: f64,
) -> Result<f64> {
    let r = prior.value(x).ok_or(Error::Capability(prior.name()))?;
    Ok(data_fidelity(x, b, warps, deg, sigma)? + lambda * r)
}

/// Noise level from the median absolute 2×2 Haar diagonal detail of the
/// reference frame, `median(|HH|) / 0.6745`, pooled over channels.
pub fn estimate_sigma(b: &Burst) -> f64 {
    let f = b.reference().tensor();
    let (h, w, ch) = f.dims();
    let mut details = Vec::with_capacity((h / 2) * (w / 2) * ch);
    for y in (0..h.saturating_sub(1)).step_by(2) {
        for x in (0..w.saturating_sub(1)).step_by(2) {
            for c in 0..ch {
                let d = f.get(y, x, c) - f.get(y, x + 1, c) - f.get(y + 1, x, c)
                    + f.get(y + 1, x + 1, c);
                details.push((0.5 * d).abs());
            }
        }
    }
    if details.is_empty() {
        return 0.0;
    }
    details.sort_by(f64::total_cmp);
    let n = details.len();
    let median = if n % 2 == 1 {
        details[n / 2]
    } else {
        0.5 * (details[n / 2 - 1] + details[n / 2])
    };
    median / 0.6745
}

/// Runs `K` stages from the coverage-normalized initialization.
pub fn reconstruct(
    b: &Burst,
    warps: &[AffineWarp],
    prior: &dyn Regularizer,
    cfg: &SolverConfig,
    deg: &DegradationConfig,
) -> Result<SolveReport> {
    let problem = Problem::new(b, warps, deg)?;
    let x0 = problem.initialize()?;
    reconstruct_from(&problem, prior, cfg, x0)
}

pub fn reconstruct_from(
    problem: &Problem<'_>,
    prior: &dyn Regularizer,
    cfg: &SolverConfig,
    x0: Tensor3,
) -> Result<SolveReport> {
    problem.check_x(&x0)?;
    let params = cfg.resolve(problem, prior)?;
    let has_value = prior.has_value();

    let diagnostics = |x: &Tensor3, step_norm: f64, guard: bool| -> Result<IterationRecord> {
        let rsq = problem.residual_sq(x)?;
        let bsz = params.burst_size as f64;
        let data = rsq / (2.0 * params.sigma * params.sigma * bsz);
        let objective = prior.value(x).map(|r| data + params.lambda * r);
        Ok(IterationRecord {
            data_fidelity: data,
            objective,
            residual_norm: rsq.sqrt(),
            step_norm,
            guard_triggered: guard,
        })
    };

    let initial = diagnostics(&x0, 0.0, false)?;
    let mut prev_objective = initial.objective;
    let mut x_prev = x0.clone();
    let mut x_hat = x0;
    let mut t_fista = 1.0f64;
    let mut records = Vec::with_capacity(cfg.iterations);

    for k in 0..cfg.iterations {
        let z = problem.gradient_step(&x_hat, params.alpha)?;
        let x_new = prior.prox(&z, params.prox_strength);
        if !x_new.is_finite() {
            return Err(Error::Numeric { iteration: k + 1 });
        }

        let mut weight = match &cfg.extrapolation {
            Extrapolation::None => 0.0,
            Extrapolation::Fista => {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_fista * t_fista).sqrt());
                let w = (t_fista - 1.0) / t_next;
                t_fista = t_next;
                w
            }
            Extrapolation::Explicit(ws) => ws.get(k).copied().unwrap_or(0.0),
        };

        let step_norm = x_new.sub(&x_prev).norm();
        let mut rec = diagnostics(&x_new, step_norm, false)?;
        if !(rec.data_fidelity.is_finite() && rec.objective.is_none_or(f64::is_finite)) {
            return Err(Error::Numeric { iteration: k + 1 });
        }
        if params.monotone_guard && has_value {
            if let (Some(prev), Some(cur)) = (prev_objective, rec.objective) {
                if cur > prev && weight != 0.0 {
                    // drop the momentum and restart the schedule
                    weight = 0.0;
                    t_fista = 1.0;
                    rec.guard_triggered = true;
                }
            }
        }

        x_hat = if weight != 0.0 {
            let mut e = x_new.clone();
            e.axpy(weight, &x_new.sub(&x_prev));
            e
        } else {
            x_new.clone()
        };
        prev_objective = rec.objective;
        records.push(rec);
        x_prev = x_new;
    }

    Ok(SolveReport {
        x_final: x_prev.clamp(0.0, 1.0),
        initial,
        iterations: records,
        params,
    })
}
