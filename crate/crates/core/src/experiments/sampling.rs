use serde::Serialize;

use super::config::RunConfig;
use super::output::{Cell, RunDir};
use crate::data::io::read_png;
use crate::data::{load_dataset, DatasetRecord};
use crate::denoiser::{Denoiser, MixtureComponent, MixtureDenoiser};
use crate::error::{Error, Result};
use crate::sampler::{img2img_init, naive_pixel_descent, noise_init, run_sampler, SamplerConfig, Trajectory};
use crate::schedule::{make_schedule, GuidanceWeights, NoiseSchedule, ScheduleKind};
use crate::surrogate::{resize, SurrogateModel};
use crate::tensor::ImageTensor;

/// Exact denoiser of the records' images at `side×side`: one zero-width
/// component per record, tagged with the record's condition.
pub fn empirical_denoiser(records: &[DatasetRecord], side: usize) -> Result<MixtureDenoiser> {
    if records.is_empty() {
        return Err(Error::invalid("the empirical denoiser needs at least one record"));
    }
    let components = records
        .iter()
        .map(|r| {
            Ok(MixtureComponent {
                mean: resize(&r.image, side, side)?.into_vec(),
                iso_std: 0.0,
                weight: 1.0,
                label: r.condition.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureDenoiser::new((3, side, side), components)
}

fn load_denoiser(cfg: &RunConfig, records: Option<&[DatasetRecord]>) -> Result<MixtureDenoiser> {
    match (&cfg.mixture, records) {
        (Some(path), _) => MixtureDenoiser::load(path),
        (None, Some(recs)) => empirical_denoiser(recs, cfg.sampling_side),
        (None, None) => Err(Error::invalid(format!("{} needs --dataset or --mixture", cfg.command))),
    }
}

fn load_model(cfg: &RunConfig) -> Result<SurrogateModel> {
    let model = SurrogateModel::load(cfg.require(&cfg.model, "model")?)?;
    if !model.is_guidable() {
        return Err(Error::NotGuidable(
            "this model was fitted on precomputed embeddings and has no gradient with respect to pixels; \
             train one with random convolutional features to sample with guidance"
                .into(),
        ));
    }
    Ok(model)
}

fn sampler_config(cfg: &RunConfig, schedule: NoiseSchedule, weights: GuidanceWeights, seed: u64) -> SamplerConfig {
    let mut sc = SamplerConfig::new(schedule, weights, cfg.sampler, seed);
    sc.condition = cfg.condition.clone();
    sc
}

fn track_rows(tr: &Trajectory) -> Vec<Vec<Cell>> {
    tr.csv_rows()
        .into_iter()
        .map(|(t, s, phi)| vec![t.into(), s.into(), phi.unwrap_or(f64::NAN).into()])
        .collect()
}

const TRACK_HEADER: [&str; 3] = ["t", "sigma", "predicted_drag"];

/// One baseline/guided pair started from the same noise draw.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub seed: u64,
    pub baseline: Trajectory,
    pub guided: Trajectory,
    pub baseline_drag: f64,
    pub guided_drag: f64,
}

/// For each seed, samples once with `η₀ = 0` and once with `weights.eta0`
/// from the identical initial noise, recording the predicted drag of every
/// denoised estimate.
pub fn paired_sampling(
    model: &SurrogateModel,
    denoiser: &MixtureDenoiser,
    config: &SamplerConfig,
    seeds: &[u64],
) -> Result<Vec<SamplePair>> {
    seeds
        .iter()
        .map(|&seed| {
            let init = noise_init(denoiser.shape(), config.schedule.sigma_max(), seed)?;
            let mut base_cfg = config.clone();
            base_cfg.seed = seed;
            base_cfg.weights = config.weights.with_eta0(0.0);
            let mut guided_cfg = config.clone();
            guided_cfg.seed = seed;
            let baseline = run_sampler(denoiser, Some(model), &base_cfg, &init)?;
            let guided = run_sampler(denoiser, Some(model), &guided_cfg, &init)?;
            Ok(SamplePair {
                seed,
                baseline_drag: model.predict_drag(&baseline.final_state)?,
                guided_drag: model.predict_drag(&guided.final_state)?,
                baseline,
                guided,
            })
        })
        .collect()
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<Vec<SamplePair>> {
    let model = load_model(cfg)?;
    let records = match &cfg.dataset {
        Some(d) => Some(load_dataset(d)?),
        None => None,
    };
    let denoiser = load_denoiser(cfg, records.as_deref())?;
    let sc = sampler_config(cfg, cfg.noise_schedule()?, cfg.guidance()?, cfg.seed);
    let pairs = paired_sampling(&model, &denoiser, &sc, &cfg.seed_list())?;

    let mut dir = RunDir::create(&cfg.out)?;
    let mut summary = Vec::new();
    for p in &pairs {
        for (name, tr) in [("baseline", &p.baseline), ("guided", &p.guided)] {
            let run = format!("runs/seed{:04}_{name}", p.seed);
            dir.csv(&format!("{run}/drag_track.csv"), &TRACK_HEADER, track_rows(tr))?;
            dir.png(&format!("{run}/final.png"), &tr.final_state)?;
        }
        summary.push(vec![
            p.seed.into(),
            p.baseline_drag.into(),
            p.guided_drag.into(),
            (p.baseline_drag - p.guided_drag).into(),
        ]);
    }
    dir.csv(
        "summary.csv",
        &["seed", "baseline_drag", "guided_drag", "reduction"],
        summary,
    )?;
    #[derive(Serialize)]
    struct Summary {
        pairs: usize,
        guided_lower: usize,
        mean_reduction: f64,
    }
    let n = pairs.len().max(1) as f64;
    dir.finish(
        &cfg.command,
        Summary {
            pairs: pairs.len(),
            guided_lower: pairs.iter().filter(|p| p.guided_drag < p.baseline_drag).count(),
            mean_reduction: pairs.iter().map(|p| p.baseline_drag - p.guided_drag).sum::<f64>() / n,
        },
    )?;
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize)]
pub struct RedesignRun {
    pub sigma_t: f64,
    pub seed: u64,
    pub initial_drag: f64,
    pub final_drag: f64,
    /// Mean absolute pixel difference to the reference.
    pub distance: f64,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
    #[serde(skip)]
    pub output: ImageTensor,
}

fn mean_abs_diff(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64)
}

/// Image-to-image redesigns: for each start level `σ_T` and seed, noise the
/// reference to `σ_T` and run guided sampling down a `T`-step schedule
/// ending at `sigma_min`. `σ_T = 0` takes no steps and returns the
/// reference.
#[allow(clippy::too_many_arguments)]
pub fn redesign_runs(
    model: &SurrogateModel,
    denoiser: &MixtureDenoiser,
    reference: &ImageTensor,
    levels: &[f64],
    seeds: &[u64],
    base: &SamplerConfig,
    kind: ScheduleKind,
    sigma_min: f64,
) -> Result<Vec<RedesignRun>> {
    let initial_drag = model.predict_drag(reference)?;
    let mut runs = Vec::new();
    for &sigma_t in levels {
        if !(sigma_t.is_finite() && sigma_t >= 0.0) {
            return Err(Error::invalid(format!("invalid start level {sigma_t}")));
        }
        for &seed in seeds {
            let (output, trajectory) = if sigma_t == 0.0 {
                (reference.clone(), None)
            } else {
                if sigma_t <= sigma_min {
                    return Err(Error::invalid(format!(
                        "start level {sigma_t} must exceed sigma_min {sigma_min}"
                    )));
                }
                let mut sc = base.clone();
                sc.schedule = make_schedule(kind, base.schedule.steps(), sigma_min, sigma_t)?;
                sc.seed = seed;
                let init = img2img_init(reference, sigma_t, seed)?;
                let tr = run_sampler(denoiser, Some(model), &sc, &init)?;
                (tr.final_state.clone(), Some(tr))
            };
            runs.push(RedesignRun {
                sigma_t,
                seed,
                initial_drag,
                final_drag: model.predict_drag(&output)?,
                distance: mean_abs_diff(&output, reference)?,
                trajectory,
                output,
            });
        }
    }
    Ok(runs)
}

fn load_reference(cfg: &RunConfig, records: Option<&[DatasetRecord]>) -> Result<ImageTensor> {
    let img = match (&cfg.reference, records) {
        (Some(p), _) => read_png(p)?,
        (None, Some(recs)) => recs
            .get(cfg.reference_index)
            .ok_or_else(|| Error::invalid(format!("reference index {} out of range", cfg.reference_index)))?
            .image
            .clone(),
        (None, None) => {
            return Err(Error::invalid(format!(
                "{} needs --reference or --dataset",
                cfg.command
            )))
        }
    };
    resize(&img, cfg.sampling_side, cfg.sampling_side)
}

pub fn cmd_redesign(cfg: &RunConfig) -> Result<Vec<RedesignRun>> {
    let model = load_model(cfg)?;
    let records = match &cfg.dataset {
        Some(d) => Some(load_dataset(d)?),
        None => None,
    };
    let denoiser = load_denoiser(cfg, records.as_deref())?;
    let reference = load_reference(cfg, records.as_deref())?;
    let sc = sampler_config(cfg, cfg.noise_schedule()?, cfg.guidance()?, cfg.seed);
    let runs = redesign_runs(
        &model,
        &denoiser,
        &reference,
        &cfg.redesign_levels(),
        &cfg.seed_list(),
        &sc,
        cfg.schedule,
        cfg.sigma_min,
    )?;

    let mut dir = RunDir::create(&cfg.out)?;
    dir.png("reference.png", &reference)?;
    let mut rows = Vec::new();
    for (k, r) in runs.iter().enumerate() {
        let run = format!("runs/{k:03}_seed{:04}", r.seed);
        let track = match &r.trajectory {
            Some(tr) => track_rows(tr),
            None => vec![vec![0usize.into(), 0.0.into(), r.initial_drag.into()]],
        };
        dir.csv(&format!("{run}/drag_track.csv"), &TRACK_HEADER, track)?;
        dir.png(&format!("{run}/final.png"), &r.output)?;
        rows.push(vec![
            r.sigma_t.into(),
            r.seed.into(),
            r.initial_drag.into(),
            r.final_drag.into(),
            r.distance.into(),
        ]);
    }
    dir.csv(
        "redesign.csv",
        &["sigma_t", "seed", "initial_drag", "final_drag", "distance_to_reference"],
        rows,
    )?;
    dir.finish(&cfg.command, &runs)?;
    Ok(runs)
}

/// Smallest Euclidean distance from `x` to any of `images`.
pub fn nearest_distance(x: &ImageTensor, images: &[ImageTensor]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for img in images {
        best = best.min(x.dist_sq(img)?);
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentReport {
    pub values: Vec<f64>,
    pub nearest: Vec<f64>,
}

pub fn cmd_naive_descent(cfg: &RunConfig) -> Result<DescentReport> {
    let model = load_model(cfg)?;
    let records = match &cfg.dataset {
        Some(d) => Some(load_dataset(d)?),
        None => None,
    };
    let start = load_reference(cfg, records.as_deref())?;
    let trace = naive_pixel_descent(&model, &start, cfg.descent_steps, cfg.lr)?;
    let train_images = match &records {
        Some(recs) => recs
            .iter()
            .map(|r| resize(&r.image, cfg.sampling_side, cfg.sampling_side))
            .collect::<Result<Vec<_>>>()?,
        None => vec![start.clone()],
    };
    let nearest = trace
        .frames
        .iter()
        .map(|f| nearest_distance(f, &train_images))
        .collect::<Result<Vec<_>>>()?;

    let mut dir = RunDir::create(&cfg.out)?;
    let every = cfg.frame_every.max(1);
    for (k, f) in trace.frames.iter().enumerate() {
        if k % every == 0 || k + 1 == trace.frames.len() {
            dir.png(&format!("frames/step{k:04}.png"), f)?;
        }
    }
    let rows = trace
        .values
        .iter()
        .zip(&nearest)
        .enumerate()
        .map(|(k, (&v, &d))| vec![k.into(), v.into(), d.into()])
        .collect();
    dir.csv(
        "descent.csv",
        &["step", "predicted_drag", "nearest_training_distance"],
        rows,
    )?;
    let report = DescentReport {
        values: trace.values,
        nearest,
    };
    dir.finish(&cfg.command, &report)?;
    Ok(report)
}
