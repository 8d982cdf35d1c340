use rand::Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::output::{Cell, RunDir};
use super::sampling::empirical_denoiser;
use crate::data::{load_dataset, DatasetRecord};
use crate::denoiser::{denoised_estimate, guided_epsilon, Denoiser, MixtureComponent, MixtureDenoiser};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, streams};
use crate::sampler::{guided_step, noise_init, pgd_step, run_sampler, SamplerConfig, SamplerKind};
use crate::schedule::{alpha, gamma_t, make_schedule, GuidanceWeights, ScheduleKind};
use crate::surrogate::{resize, DragObjective, QuadraticObjective, SurrogateModel};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub sigma: f64,
    pub mse: f64,
}

/// Predicted-drag MSE of one-shot denoised estimates `x̂₀ = x_σ − σ ε̂`
/// at each noise level. Record `i` uses the same noise draw at every level;
/// `σ = 0` evaluates the clean images.
pub fn robustness_curve(
    model: &SurrogateModel,
    denoiser: &dyn Denoiser,
    records: &[DatasetRecord],
    levels: &[f64],
    seed: u64,
) -> Result<(Vec<RobustnessRow>, Vec<Vec<f64>>)> {
    if records.is_empty() {
        return Err(Error::invalid("robustness needs a nonempty dataset"));
    }
    let (c, h, w) = denoiser.shape();
    let images = records
        .iter()
        .map(|r| resize(&r.image, h, w))
        .collect::<Result<Vec<_>>>()?;
    let noises: Vec<ImageTensor> = (0..records.len())
        .map(|i| {
            rng::normal_tensor(
                &mut rng::stream(derive_seed(seed, i as u64), streams::ROBUSTNESS),
                c,
                h,
                w,
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(levels.len());
    let mut per_image = Vec::with_capacity(levels.len());
    for &sigma in levels {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("invalid noise level {sigma}")));
        }
        let mut preds = Vec::with_capacity(records.len());
        for (x, eps) in images.iter().zip(&noises) {
            let x0_hat = if sigma == 0.0 {
                x.clone()
            } else {
                let x_t = x.axpy(sigma, eps)?;
                let eps_hat = denoiser.predict_epsilon(&x_t, sigma, None)?;
                denoised_estimate(&x_t, sigma, &eps_hat)?
            };
            preds.push(model.predict_drag(&x0_hat)?);
        }
        let mse = preds
            .iter()
            .zip(records)
            .map(|(p, r)| (p - r.drag_label).powi(2))
            .sum::<f64>()
            / records.len() as f64;
        rows.push(RobustnessRow { sigma, mse });
        per_image.push(preds);
    }
    Ok((rows, per_image))
}

pub fn cmd_robustness(cfg: &RunConfig) -> Result<Vec<RobustnessRow>> {
    let model = SurrogateModel::load(cfg.require(&cfg.model, "model")?)?;
    let records = load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let denoiser = match &cfg.mixture {
        Some(p) => MixtureDenoiser::load(p)?,
        None => empirical_denoiser(&records, cfg.sampling_side)?,
    };
    let (rows, per_image) = robustness_curve(&model, &denoiser, &records, &cfg.noise_levels, cfg.seed)?;
    let mut dir = RunDir::create(&cfg.out)?;
    dir.csv(
        "robustness.csv",
        &["sigma", "mse", "n"],
        rows.iter()
            .map(|r| vec![r.sigma.into(), r.mse.into(), records.len().into()])
            .collect(),
    )?;
    let mut detail = Vec::new();
    for (row, preds) in rows.iter().zip(&per_image) {
        for (r, &p) in records.iter().zip(preds) {
            detail.push(vec![
                row.sigma.into(),
                r.id.clone().into(),
                r.drag_label.into(),
                p.into(),
            ]);
        }
    }
    dir.csv("per_image.csv", &["sigma", "id", "label", "prediction"], detail)?;
    dir.finish(&cfg.command, &rows)?;
    Ok(rows)
}

/// `max|a − b| / max(1, max|a|, max|b|)`: absolute below unit scale,
/// relative above it.
pub fn scaled_deviation(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let mut diff = 0.0_f64;
    let mut scale = 1.0_f64;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        diff = diff.max((x - y).abs());
        scale = scale.max(x.abs()).max(y.abs());
    }
    diff / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceTrial {
    pub trial: usize,
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub sigma_max: f64,
    pub eta0: f64,
    pub max_step_deviation: f64,
    pub trajectory_deviation: f64,
    /// `(t, σ_t, α_t, γ_t, deviation)` per step.
    #[serde(skip)]
    pub per_step: Vec<(usize, f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub trials: Vec<EquivalenceTrial>,
    pub max_step_deviation: f64,
    pub max_trajectory_deviation: f64,
    pub passed: bool,
}

fn random_problem(
    r: &mut rand_chacha::ChaCha8Rng,
    steps: usize,
    zero_eta: bool,
) -> Result<(MixtureDenoiser, QuadraticObjective, SamplerConfig, ScheduleKind)> {
    let shape = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
    let d = shape.0 * shape.1 * shape.2;
    let comps = (0..r.random_range(1..=4))
        .map(|_| MixtureComponent {
            mean: (0..d).map(|_| 2.0 * rng::standard_normal(r)).collect(),
            iso_std: r.random_range(0.0..0.5),
            weight: r.random_range(0.1..1.0),
            label: None,
        })
        .collect();
    let den = MixtureDenoiser::new(shape, comps)?;
    let kind = if r.random_bool(0.5) {
        ScheduleKind::LogLinear
    } else {
        ScheduleKind::Linear
    };
    let sigma_max = r.random_range(1.0..50.0);
    let sigma_min = if r.random_bool(0.5) {
        0.0
    } else {
        r.random_range(0.001..0.5)
    };
    let schedule = make_schedule(kind, steps, sigma_min, sigma_max)?;
    let eta0 = if zero_eta { 0.0 } else { r.random_range(0.0..400.0) };
    // keeps γ_t·‖∇²φ‖ below one so trajectories stay bounded
    let scale = r.random_range(0.0..1.0) / (2.0 * (eta0 * sigma_max + 1.0));
    let center = rng::normal_tensor(r, shape.0, shape.1, shape.2);
    let weights = GuidanceWeights::new(eta0, 1.0, 1.0)?;
    let cfg = SamplerConfig::new(schedule, weights, SamplerKind::Ddim, r.random());
    Ok((den, QuadraticObjective { center, scale }, cfg, kind))
}

/// Runs `trials` randomized problems. Each is checked step by step (both
/// update forms applied to the same `x_t`) and over a full trajectory
/// (each form iterated on its own output). Trial 0 uses `η₀ = 0`.
pub fn equivalence_check(trials: usize, steps: usize, seed: u64) -> Result<Vec<EquivalenceTrial>> {
    (0..trials)
        .map(|k| {
            let mut r = rng::stream(derive_seed(seed, k as u64), streams::EQUIVALENCE);
            let (den, obj, cfg, kind) = random_problem(&mut r, steps, k == 0)?;
            let schedule = &cfg.schedule;
            let init = noise_init(den.shape(), schedule.sigma_max(), cfg.seed)?;

            let mut x = init.clone();
            let mut per_step = Vec::with_capacity(steps);
            for t in (1..=steps).rev() {
                let sigma = schedule.sigma(t);
                let eps = guided_epsilon(&den, &x, sigma, None, cfg.weights.cfg_w)?;
                let grad = obj.gradient(&denoised_estimate(&x, sigma, &eps)?)?;
                let a = guided_step(&x, t, schedule, &eps, &grad, &cfg.weights)?;
                let b = pgd_step(&x, t, schedule, &eps, &grad, &cfg.weights)?;
                per_step.push((
                    t,
                    sigma,
                    alpha(schedule, t)?,
                    gamma_t(&cfg.weights, sigma)?,
                    scaled_deviation(&a, &b),
                ));
                x = a;
            }

            let mut pgd_cfg = cfg.clone();
            pgd_cfg.kind = SamplerKind::DdimPgdForm;
            let ta = run_sampler(&den, Some(&obj), &cfg, &init)?;
            let tb = run_sampler(&den, Some(&obj), &pgd_cfg, &init)?;
            Ok(EquivalenceTrial {
                trial: k,
                schedule: kind,
                steps,
                sigma_max: schedule.sigma_max(),
                eta0: cfg.weights.eta0,
                max_step_deviation: per_step.iter().map(|s| s.4).fold(0.0, f64::max),
                trajectory_deviation: scaled_deviation(&ta.final_state, &tb.final_state),
                per_step,
            })
        })
        .collect()
}

fn schedule_name(kind: ScheduleKind) -> &'static str {
    match kind {
        ScheduleKind::LogLinear => "log_linear",
        ScheduleKind::Linear => "linear",
    }
}

pub fn cmd_check_equivalence(cfg: &RunConfig) -> Result<EquivalenceReport> {
    let trials = equivalence_check(cfg.trials, cfg.steps, cfg.seed)?;
    let max_step = trials.iter().map(|t| t.max_step_deviation).fold(0.0, f64::max);
    let max_traj = trials.iter().map(|t| t.trajectory_deviation).fold(0.0, f64::max);
    let passed = max_step <= cfg.step_tolerance && max_traj <= cfg.trajectory_tolerance;

    let mut dir = RunDir::create(&cfg.out)?;
    let mut steps = Vec::new();
    for tr in &trials {
        for &(t, s, a, g, d) in &tr.per_step {
            steps.push(vec![tr.trial.into(), t.into(), s.into(), a.into(), g.into(), d.into()]);
        }
    }
    dir.csv(
        "steps.csv",
        &["trial", "t", "sigma_t", "alpha_t", "gamma_t", "deviation"],
        steps,
    )?;
    let rows: Vec<Vec<Cell>> = trials
        .iter()
        .map(|t| {
            vec![
                t.trial.into(),
                schedule_name(t.schedule).into(),
                t.sigma_max.into(),
                t.eta0.into(),
                t.max_step_deviation.into(),
                t.trajectory_deviation.into(),
            ]
        })
        .collect();
    dir.csv(
        "trials.csv",
        &[
            "trial",
            "schedule",
            "sigma_max",
            "eta0",
            "max_step_deviation",
            "trajectory_deviation",
        ],
        rows,
    )?;
    let report = EquivalenceReport {
        trials,
        max_step_deviation: max_step,
        max_trajectory_deviation: max_traj,
        passed,
    };
    #[derive(Serialize)]
    struct Summary {
        trials: usize,
        max_step_deviation: f64,
        max_trajectory_deviation: f64,
        step_tolerance: f64,
        trajectory_tolerance: f64,
        passed: bool,
    }
    dir.finish(
        &cfg.command,
        Summary {
            trials: report.trials.len(),
            max_step_deviation: max_step,
            max_trajectory_deviation: max_traj,
            step_tolerance: cfg.step_tolerance,
            trajectory_tolerance: cfg.trajectory_tolerance,
            passed,
        },
    )?;
    if passed {
        println!("equivalence check passed: max step deviation {max_step:e}, max trajectory deviation {max_traj:e}");
    } else {
        eprintln!(
            "equivalence check FAILED: max step deviation {max_step:e} (tolerance {:e}), max trajectory deviation {max_traj:e} (tolerance {:e})",
            cfg.step_tolerance, cfg.trajectory_tolerance
        );
    }
    Ok(report)
}
