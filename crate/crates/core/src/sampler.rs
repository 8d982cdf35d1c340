//! DDIM sampling with drag guidance.
//!
//! A guided step moves `x_t` along `ε̂ + η_t ∇φ(x̂₀ᵗ)` by the schedule
//! decrement. The same update can be written as a damped projected-gradient
//! step: take the denoised estimate `x̂₀ᵗ`, move it by `−γ_t ∇φ`, and blend
//! it with `x_t` using `α_t = 1 − σ_{t−1}/σ_t`. [`guided_step`] and
//! [`pgd_step`] implement the two forms independently so they can be
//! checked against each other.

use serde::{Deserialize, Serialize};

use crate::denoiser::{denoised_estimate, guided_epsilon, Denoiser, NoisePrediction};
use crate::error::{ensure_finite, Error, Result};
use crate::rng;
use crate::schedule::{alpha, eta, gamma_t, GuidanceWeights, NoiseSchedule};
use crate::surrogate::DragObjective;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Guided DDIM update in noise-prediction form.
    #[default]
    Ddim,
    /// The same update evaluated in projected-gradient form.
    DdimPgdForm,
    /// DDIM on `γ ε̂_t + (1 − γ) ε̂_{t+1}`.
    GradientEstimation,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(SamplerKind::Ddim),
            "ddim_pgd_form" | "pgd" => Ok(SamplerKind::DdimPgdForm),
            "gradient_estimation" | "ge" => Ok(SamplerKind::GradientEstimation),
            other => Err(Error::invalid(format!("unknown sampler kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub weights: GuidanceWeights,
    pub kind: SamplerKind,
    pub seed: u64,
    /// Keep every `x_t` and `x̂₀ᵗ`, not just the final state.
    pub record_trajectory: bool,
    /// Conditioning tag; when set, predictions use classifier-free guidance
    /// with weight `weights.cfg_w`.
    #[serde(default)]
    pub condition: Option<String>,
}

impl SamplerConfig {
    pub fn new(schedule: NoiseSchedule, weights: GuidanceWeights, kind: SamplerKind, seed: u64) -> Self {
        Self {
            schedule,
            weights,
            kind,
            seed,
            record_trajectory: false,
            condition: None,
        }
    }
}

/// States and diagnostics of one sampling run, indexed by descending `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(t, σ_t)` for `t = T..=0`.
    pub sigmas: Vec<(usize, f64)>,
    /// `(t, x_t)` for `t = T..=0`; empty unless recording was requested.
    pub states: Vec<(usize, ImageTensor)>,
    /// `(t, x̂₀ᵗ)` for `t = T..=1`; empty unless recording was requested.
    pub denoised: Vec<(usize, ImageTensor)>,
    /// `(t, φ(x̂₀ᵗ))` for `t = T..=1` whenever a target is attached.
    pub drag_track: Vec<(usize, f64)>,
    pub final_state: ImageTensor,
}

impl Trajectory {
    /// Rows `(t, σ_t, φ)` for the per-step CSV; `φ` is `None` without a target.
    pub fn csv_rows(&self) -> Vec<(usize, f64, Option<f64>)> {
        let sigma_of = |t: usize| {
            self.sigmas
                .iter()
                .find(|(s, _)| *s == t)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        };
        if self.drag_track.is_empty() {
            self.sigmas
                .iter()
                .filter(|(t, _)| *t > 0)
                .map(|&(t, s)| (t, s, None))
                .collect()
        } else {
            self.drag_track
                .iter()
                .map(|&(t, phi)| (t, sigma_of(t), Some(phi)))
                .collect()
        }
    }
}

/// `x_{t−1} = x_t − (σ_t − σ_{t−1}) ε̂`
pub fn ddim_step(
    x_t: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps_hat: &NoisePrediction,
) -> Result<ImageTensor> {
    let step = schedule.decrement(t)?;
    x_t.axpy(-step, eps_hat)
}

/// `x_{t−1} = x_t − (σ_t − σ_{t−1})(ε̂ + η_t ∇φ(x̂₀ᵗ))`
pub fn guided_step(
    x_t: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps_hat: &NoisePrediction,
    drag_grad: &ImageTensor,
    weights: &GuidanceWeights,
) -> Result<ImageTensor> {
    let step = schedule.decrement(t)?;
    let eta_t = eta(weights, schedule.sigma(t))?;
    x_t.ensure_same_shape(eps_hat)?;
    x_t.ensure_same_shape(drag_grad)?;
    let data = x_t
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .zip(drag_grad.as_slice())
        .map(|((&x, &e), &g)| x - step * (e + eta_t * g))
        .collect();
    ImageTensor::from_vec(x_t.channels(), x_t.height(), x_t.width(), data)
}

/// Projected-gradient form of [`guided_step`]:
/// `x̂_drag = x̂₀ᵗ − γ_t ∇φ`, then `x_{t−1} = (1 − α_t) x_t + α_t x̂_drag`.
pub fn pgd_step(
    x_t: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps_hat: &NoisePrediction,
    drag_grad: &ImageTensor,
    weights: &GuidanceWeights,
) -> Result<ImageTensor> {
    let a = alpha(schedule, t)?;
    let sigma_t = schedule.sigma(t);
    let gamma = gamma_t(weights, sigma_t)?;
    let x0_hat = denoised_estimate(x_t, sigma_t, eps_hat)?;
    let x_drag = x0_hat.axpy(-gamma, drag_grad)?;
    x_t.zip_with(&x_drag, |x, d| (1.0 - a) * x + a * d)
}

/// Gradient-estimation mix `γ ε̂_t + (1 − γ) ε̂_{t+1}`.
pub fn ge_combine(eps_curr: &NoisePrediction, eps_prev: &NoisePrediction, gamma: f64) -> Result<NoisePrediction> {
    ensure_finite(gamma, "ge gamma")?;
    NoisePrediction::new(eps_curr.zip_with(eps_prev, |c, p| gamma * c + (1.0 - gamma) * p)?)
}

/// `x_T = x₀ + σ_T ε` with `ε` drawn from the seed's init-noise stream.
pub fn img2img_init(x0: &ImageTensor, sigma_t: f64, seed: u64) -> Result<ImageTensor> {
    ensure_finite(sigma_t, "sigma_T")?;
    if sigma_t < 0.0 {
        return Err(Error::invalid("sigma_T must be nonnegative"));
    }
    if sigma_t == 0.0 {
        return Ok(x0.clone());
    }
    let mut r = rng::stream(seed, rng::streams::INIT_NOISE);
    let eps = rng::normal_tensor(&mut r, x0.channels(), x0.height(), x0.width());
    x0.axpy(sigma_t, &eps)
}

/// Pure-noise start `x_T = σ_T ε` for unconditional generation.
pub fn noise_init(shape: (usize, usize, usize), sigma_t: f64, seed: u64) -> Result<ImageTensor> {
    img2img_init(&ImageTensor::zeros(shape.0, shape.1, shape.2), sigma_t, seed)
}

/// Runs the configured sampler from `init` down to `t = 0`.
///
/// With a target attached, `φ(x̂₀ᵗ)` is recorded at every step and, when
/// `η₀ > 0`, its gradient steers the update. The gradient-estimation
/// sampler has no previous prediction at `t = T` and takes a plain step
/// there.
pub fn run_sampler(
    denoiser: &dyn Denoiser,
    target: Option<&dyn DragObjective>,
    config: &SamplerConfig,
    init: &ImageTensor,
) -> Result<Trajectory> {
    config.weights.validate()?;
    if init.shape() != denoiser.shape() {
        return Err(Error::ShapeMismatch {
            expected: denoiser.shape(),
            got: init.shape(),
        });
    }
    let schedule = &config.schedule;
    let steps = schedule.steps();
    let guide = config.weights.eta0 > 0.0;
    let condition = config.condition.as_deref();

    let mut traj = Trajectory {
        sigmas: (0..=steps).rev().map(|t| (t, schedule.sigma(t))).collect(),
        states: Vec::new(),
        denoised: Vec::new(),
        drag_track: Vec::with_capacity(if target.is_some() { steps } else { 0 }),
        final_state: init.clone(),
    };
    let mut x = init.clone();
    if config.record_trajectory {
        traj.states.push((steps, x.clone()));
    }
    let mut prev_eps: Option<NoisePrediction> = None;

    for t in (1..=steps).rev() {
        let sigma = schedule.sigma(t);
        let eps_raw = guided_epsilon(denoiser, &x, sigma, condition, config.weights.cfg_w)?;
        let eps = match (config.kind, &prev_eps) {
            (SamplerKind::GradientEstimation, Some(prev)) => ge_combine(&eps_raw, prev, config.weights.ge_gamma)?,
            _ => eps_raw.clone(),
        };
        if config.kind == SamplerKind::GradientEstimation {
            prev_eps = Some(eps_raw);
        }

        let x0_hat = denoised_estimate(&x, sigma, &eps)?;
        let grad = match target {
            Some(obj) => {
                traj.drag_track.push((t, obj.value(&x0_hat)?));
                if guide {
                    let g = obj.gradient(&x0_hat)?;
                    if !g.is_finite() {
                        return Err(Error::NonFinite(format!("guidance gradient at t = {t}")));
                    }
                    Some(g)
                } else {
                    None
                }
            }
            None => None,
        };
        if config.record_trajectory {
            traj.denoised.push((t, x0_hat));
        }

        x = match (config.kind, &grad) {
            (SamplerKind::DdimPgdForm, Some(g)) => pgd_step(&x, t, schedule, &eps, g, &config.weights)?,
            (SamplerKind::DdimPgdForm, None) => {
                let zero = ImageTensor::zeros(x.channels(), x.height(), x.width());
                pgd_step(&x, t, schedule, &eps, &zero, &config.weights)?
            }
            (_, Some(g)) => guided_step(&x, t, schedule, &eps, g, &config.weights)?,
            (_, None) => ddim_step(&x, t, schedule, &eps)?,
        };
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("sampler state at t = {}", t - 1)));
        }
        if config.record_trajectory {
            traj.states.push((t - 1, x.clone()));
        }
    }
    traj.final_state = x;
    Ok(traj)
}

/// Frames and objective values of plain pixel-space gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    /// `x_0 .. x_steps`
    pub frames: Vec<ImageTensor>,
    /// `φ(x_k)` for each frame.
    pub values: Vec<f64>,
}

/// `x ← x − step_size·∇φ(x)` for `steps` iterations, without any
/// projection back onto the data.
pub fn naive_pixel_descent(
    model: &dyn DragObjective,
    x0: &ImageTensor,
    steps: usize,
    step_size: f64,
) -> Result<DescentTrace> {
    if steps == 0 {
        return Err(Error::invalid("naive descent needs at least one step"));
    }
    ensure_finite(step_size, "step size")?;
    if step_size < 0.0 {
        return Err(Error::invalid("step size must be nonnegative"));
    }
    let mut x = x0.clone();
    let mut trace = DescentTrace {
        frames: vec![x.clone()],
        values: vec![model.value(&x)?],
    };
    for k in 0..steps {
        let g = model.gradient(&x)?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient at descent step {k}")));
        }
        x = x.axpy(-step_size, &g)?;
        trace.values.push(model.value(&x)?);
        trace.frames.push(x.clone());
    }
    Ok(trace)
}
