//! Noise predictors.
//!
//! [`MixtureDenoiser`] is the exact minimizer of the denoising loss
//! `E‖ε_θ(x + σε, σ) − ε‖²` when `x` follows an isotropic Gaussian mixture.
//! With every component standard deviation at zero it is the optimal
//! denoiser for an empirical dataset. Because it is exact, every sampler
//! identity built on top of it can be checked against closed forms.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::io::read_png;
use crate::error::{ensure_finite, Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

/// Output of a denoiser: the predicted noise `ε̂`, shaped like the state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrediction(ImageTensor);

impl NoisePrediction {
    pub fn new(epsilon_hat: ImageTensor) -> Result<Self> {
        if !epsilon_hat.is_finite() {
            return Err(Error::NonFinite("noise prediction".into()));
        }
        Ok(Self(epsilon_hat))
    }

    pub fn into_tensor(self) -> ImageTensor {
        self.0
    }
}

impl Deref for NoisePrediction {
    type Target = ImageTensor;

    fn deref(&self) -> &ImageTensor {
        &self.0
    }
}

/// Anything mapping a noisy state and noise level to a noise prediction.
pub trait Denoiser: Send + Sync {
    /// Shape of the states this denoiser accepts.
    fn shape(&self) -> (usize, usize, usize);

    /// Predicts `ε̂(y, σ)`. `condition = None` is the unconditional model.
    fn predict_epsilon(&self, y: &ImageTensor, sigma: f64, condition: Option<&str>) -> Result<NoisePrediction>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub iso_std: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Isotropic Gaussian mixture `Σ π_i N(μ_i, s_i² I)` with its exact denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDenoiser {
    shape: (usize, usize, usize),
    components: Vec<MixtureComponent>,
}

impl MixtureDenoiser {
    /// Validates the components and normalizes their weights to sum to one.
    pub fn new(shape: (usize, usize, usize), mut components: Vec<MixtureComponent>) -> Result<Self> {
        let d = shape.0 * shape.1 * shape.2;
        if d == 0 {
            return Err(Error::invalid("mixture shape must be nonempty"));
        }
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != d {
                return Err(Error::invalid(format!(
                    "component {i} mean has length {}, expected {d}",
                    c.mean.len()
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("component {i} mean")));
            }
            if !(c.iso_std.is_finite() && c.iso_std >= 0.0) {
                return Err(Error::invalid(format!("component {i} iso_std must be finite and >= 0")));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::invalid(format!("component {i} weight must be positive")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { shape, components })
    }

    /// Equal-weight point masses at the given tensors.
    pub fn empirical(points: &[ImageTensor]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("empirical denoiser needs at least one point"))?;
        let shape = first.shape();
        let components = points
            .iter()
            .map(|p| {
                first.ensure_same_shape(p)?;
                Ok(MixtureComponent {
                    mean: p.as_slice().to_vec(),
                    iso_std: 0.0,
                    weight: 1.0,
                    label: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, components)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    fn matching<'a>(&'a self, condition: Option<&'a str>) -> impl Iterator<Item = &'a MixtureComponent> + 'a {
        self.components
            .iter()
            .filter(move |c| condition.is_none() || c.label.as_deref() == condition)
    }

    /// Draws one sample from the mixture.
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> ImageTensor {
        use rand::Rng;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let data = chosen
            .mean
            .iter()
            .map(|&m| m + chosen.iso_std * rng::standard_normal(rng))
            .collect();
        let (c, h, w) = self.shape;
        ImageTensor::from_vec(c, h, w, data).expect("mixture samples are finite")
    }

    /// Loads a mixture from its JSON description. Components may give the
    /// mean inline (`mean`) or as a PNG path (`mean_png`) resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: MixtureFile =
            serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid mixture file: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let shape = (spec.shape[0], spec.shape[1], spec.shape[2]);
        let components = spec
            .components
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let mean = match (c.mean, c.mean_png) {
                    (Some(m), None) => m,
                    (None, Some(png)) => {
                        let img = read_png(&base.join(&png))?;
                        if img.shape() != shape {
                            return Err(Error::data(
                                base.join(&png),
                                format!("image shape {:?} does not match mixture shape {:?}", img.shape(), shape),
                            ));
                        }
                        img.into_vec()
                    }
                    _ => {
                        return Err(Error::data(
                            path,
                            format!("component {i}: give exactly one of mean or mean_png"),
                        ))
                    }
                };
                Ok(MixtureComponent {
                    mean,
                    iso_std: c.iso_std,
                    weight: c.weight,
                    label: c.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, components)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let spec = MixtureFile {
            shape: [self.shape.0, self.shape.1, self.shape.2],
            components: self
                .components
                .iter()
                .map(|c| MixtureFileComponent {
                    mean: Some(c.mean.clone()),
                    mean_png: None,
                    iso_std: c.iso_std,
                    weight: c.weight,
                    label: c.label.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&spec).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    shape: [usize; 3],
    components: Vec<MixtureFileComponent>,
}

#[derive(Serialize, Deserialize)]
struct MixtureFileComponent {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean_png: Option<String>,
    #[serde(default)]
    iso_std: f64,
    #[serde(default = "unit_weight")]
    weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn unit_weight() -> f64 {
    1.0
}

impl Denoiser for MixtureDenoiser {
    fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn predict_epsilon(&self, y: &ImageTensor, sigma: f64, condition: Option<&str>) -> Result<NoisePrediction> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if y.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: y.shape(),
            });
        }
        let d = self.dim() as f64;
        let ys = y.as_slice();
        let sigma2 = sigma * sigma;

        // Log posterior responsibility of each matching component.
        let matching: Vec<&MixtureComponent> = self.matching(condition).collect();
        if matching.is_empty() {
            return Err(Error::NoMatchingComponent(condition.unwrap_or("").to_string()));
        }
        let logits: Vec<f64> = matching
            .iter()
            .map(|c| {
                let var = c.iso_std * c.iso_std + sigma2;
                let dist2: f64 = ys.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                c.weight.ln() - 0.5 * d * var.ln() - dist2 / (2.0 * var)
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();

        // ε̂ = Σ r_i σ (y − μ_i)/(s_i² + σ²), the residual form of (y − E[x|y])/σ.
        let mut eps = vec![0.0; ys.len()];
        for (c, u) in matching.iter().zip(&unnorm) {
            let r = u / z;
            if r == 0.0 {
                continue;
            }
            let k = r * sigma / (c.iso_std * c.iso_std + sigma2);
            for ((e, &yv), &m) in eps.iter_mut().zip(ys).zip(&c.mean) {
                *e += k * (yv - m);
            }
        }
        let (ch, h, w) = self.shape;
        NoisePrediction::new(ImageTensor::from_vec(ch, h, w, eps)?)
    }
}

/// Classifier-free guidance: `(1 − w)·ε_uncond + w·ε_cond`.
pub fn cfg_combine(eps_uncond: &NoisePrediction, eps_cond: &NoisePrediction, w: f64) -> Result<NoisePrediction> {
    ensure_finite(w, "cfg weight")?;
    NoisePrediction::new(eps_uncond.zip_with(eps_cond, |u, c| (1.0 - w) * u + w * c)?)
}

/// One-shot denoised estimate `x̂₀ = x_t − σ_t ε̂`.
pub fn denoised_estimate(x_t: &ImageTensor, sigma_t: f64, eps_hat: &NoisePrediction) -> Result<ImageTensor> {
    ensure_finite(sigma_t, "sigma_t")?;
    x_t.axpy(-sigma_t, eps_hat)
}

/// Noise prediction for one step, applying classifier-free guidance when a
/// condition is given.
pub fn guided_epsilon(
    denoiser: &dyn Denoiser,
    x: &ImageTensor,
    sigma: f64,
    condition: Option<&str>,
    cfg_w: f64,
) -> Result<NoisePrediction> {
    let uncond = denoiser.predict_epsilon(x, sigma, None)?;
    match condition {
        None => Ok(uncond),
        Some(tag) => {
            let cond = denoiser.predict_epsilon(x, sigma, Some(tag))?;
            cfg_combine(&uncond, &cond, cfg_w)
        }
    }
}

/// One Monte-Carlo draw `(x, σ, ε)` of the denoising objective.
#[derive(Debug, Clone)]
pub struct TrainingDraw {
    pub x: ImageTensor,
    pub sigma: f64,
    pub eps: ImageTensor,
}

impl TrainingDraw {
    pub fn noisy(&self) -> ImageTensor {
        self.x.axpy(self.sigma, &self.eps).expect("draw tensors share a shape")
    }
}

/// Draws `(x, σ, ε)` triples: `x` from the mixture, `σ` uniform over the
/// schedule's positive levels `σ_1..σ_T`, `ε` standard normal.
pub fn draw_training_samples(
    data: &MixtureDenoiser,
    schedule: &NoiseSchedule,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TrainingDraw>> {
    use rand::Rng;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let levels: Vec<f64> = schedule.sigmas()[1..].iter().copied().filter(|&s| s > 0.0).collect();
    if levels.is_empty() {
        return Err(Error::invalid("schedule has no positive noise levels"));
    }
    let mut rng = rng::stream(seed, rng::streams::TRAINING_LOSS);
    let (c, h, w) = data.shape;
    Ok((0..n_samples)
        .map(|_| {
            let x = data.sample(&mut rng);
            let sigma = levels[rng.random_range(0..levels.len())];
            let eps = rng::normal_tensor(&mut rng, c, h, w);
            TrainingDraw { x, sigma, eps }
        })
        .collect())
}

/// Mean of `‖predict(x + σε, σ) − ε‖²` over fixed draws.
pub fn training_loss_on<F>(draws: &[TrainingDraw], mut predict: F) -> Result<f64>
where
    F: FnMut(&ImageTensor, f64) -> Result<ImageTensor>,
{
    if draws.is_empty() {
        return Err(Error::invalid("no draws"));
    }
    let mut total = 0.0;
    for d in draws {
        let eps_hat = predict(&d.noisy(), d.sigma)?;
        total += eps_hat.dist_sq(&d.eps)?;
    }
    Ok(total / draws.len() as f64)
}

/// Monte-Carlo estimate of the denoising loss of `denoiser` on data drawn
/// from `data`.
pub fn mc_training_loss(
    data: &MixtureDenoiser,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let draws = draw_training_samples(data, schedule, n_samples, seed)?;
    training_loss_on(&draws, |y, s| Ok(denoiser.predict_epsilon(y, s, None)?.into_tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_schedule, ScheduleKind};
    use proptest::prelude::*;

    fn points(vals: &[f64]) -> MixtureDenoiser {
        let pts: Vec<_> = vals.iter().map(|&v| ImageTensor::scalar(v)).collect();
        MixtureDenoiser::empirical(&pts).unwrap()
    }

    fn comp(mean: Vec<f64>, iso_std: f64, weight: f64, label: Option<&str>) -> MixtureComponent {
        MixtureComponent {
            mean,
            iso_std,
            weight,
            label: label.map(str::to_string),
        }
    }

    /// Independent log-density of the noised mixture, for finite differences.
    fn log_p_sigma(m: &MixtureDenoiser, y: &[f64], sigma: f64) -> f64 {
        let d = y.len() as f64;
        let terms: Vec<f64> = m
            .components()
            .iter()
            .map(|c| {
                let var = c.iso_std.powi(2) + sigma.powi(2);
                let q: f64 = y.iter().zip(&c.mean).map(|(a, b)| (a - b).powi(2)).sum();
                c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - q / (2.0 * var)
            })
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
    }

    #[test]
    fn single_point_prediction() {
        let m = points(&[0.0]);
        let e = m.predict_epsilon(&ImageTensor::scalar(3.0), 2.0, None).unwrap();
        assert_eq!(e.as_slice(), &[1.5]);
    }

    #[test]
    fn symmetric_pair_at_origin_predicts_zero() {
        let m = points(&[-1.0, 1.0]);
        for sigma in [0.1, 1.0, 7.0] {
            let e = m.predict_epsilon(&ImageTensor::scalar(0.0), sigma, None).unwrap();
            assert_eq!(e.as_slice(), &[0.0]);
        }
    }

    #[test]
    fn symmetric_pair_posterior_is_tanh() {
        let m = points(&[-1.0, 1.0]);
        let e = m.predict_epsilon(&ImageTensor::scalar(1.0), 1.0, None).unwrap();
        // brute-force posterior over the two atoms
        let (wp, wm) = ((-(0.0f64).powi(2) / 2.0).exp(), (-(2.0f64).powi(2) / 2.0).exp());
        let post_mean = (wp - wm) / (wp + wm);
        assert!((post_mean - 0.761_594_155_955_764_9).abs() < 1e-12);
        assert!((e.as_slice()[0] - (1.0 - post_mean)).abs() < 1e-12);
        assert!((e.as_slice()[0] - 0.238_406).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = points(&[0.0, 1.0]);
        let y = ImageTensor::scalar(0.5);
        assert!(m.predict_epsilon(&y, 0.0, None).is_err());
        assert!(m.predict_epsilon(&y, -1.0, None).is_err());
        assert!(m.predict_epsilon(&ImageTensor::zeros(1, 1, 2), 1.0, None).is_err());
        assert!(matches!(
            m.predict_epsilon(&y, 1.0, Some("car")),
            Err(Error::NoMatchingComponent(_))
        ));
        assert!(MixtureDenoiser::new((1, 1, 1), vec![]).is_err());
        assert!(MixtureDenoiser::new((1, 1, 1), vec![comp(vec![0.0], -1.0, 1.0, None)]).is_err());
        assert!(MixtureDenoiser::new((1, 1, 1), vec![comp(vec![0.0, 1.0], 0.0, 1.0, None)]).is_err());
    }

    #[test]
    fn weights_are_normalized() {
        let m = MixtureDenoiser::new(
            (1, 1, 1),
            vec![comp(vec![0.0], 0.0, 3.0, None), comp(vec![1.0], 0.0, 1.0, None)],
        )
        .unwrap();
        let total: f64 = m.components().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(m.components()[0].weight, 0.75);
    }

    #[test]
    fn condition_restricts_components() {
        let m = MixtureDenoiser::new(
            (1, 1, 1),
            vec![
                comp(vec![-1.0], 0.0, 1.0, Some("a")),
                comp(vec![1.0], 0.0, 1.0, Some("b")),
            ],
        )
        .unwrap();
        let y = ImageTensor::scalar(0.0);
        let a = m.predict_epsilon(&y, 1.0, Some("a")).unwrap();
        let b = m.predict_epsilon(&y, 1.0, Some("b")).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        assert_eq!(b.as_slice(), &[-1.0]);
    }

    #[test]
    fn score_consistency_against_finite_differences() {
        let mut rng = rng::stream(11, 0);
        for trial in 0..20 {
            let d = 1 + trial % 4;
            let k = 1 + trial % 3;
            let comps = (0..k)
                .map(|i| {
                    comp(
                        (0..d).map(|_| 2.0 * rng::standard_normal(&mut rng)).collect(),
                        if i % 2 == 0 { 0.0 } else { 0.5 },
                        1.0 + i as f64,
                        None,
                    )
                })
                .collect();
            let m = MixtureDenoiser::new((1, 1, d), comps).unwrap();
            let y: Vec<f64> = (0..d).map(|_| 2.0 * rng::standard_normal(&mut rng)).collect();
            let sigma = 0.5 + trial as f64 * 0.1;
            let eps = m
                .predict_epsilon(&ImageTensor::from_flat(y.clone()).unwrap(), sigma, None)
                .unwrap();
            let h = 1e-5;
            for j in 0..d {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let grad = (log_p_sigma(&m, &yp, sigma) - log_p_sigma(&m, &ym, sigma)) / (2.0 * h);
                let fd_eps = -sigma * grad;
                let got = eps.as_slice()[j];
                let err = (got - fd_eps).abs() / fd_eps.abs().max(1e-3);
                assert!(err <= 1e-4, "trial {trial} coord {j}: {got} vs {fd_eps}");
            }
        }
    }

    #[test]
    fn cfg_combine_cases() {
        let u = NoisePrediction::new(ImageTensor::scalar(0.0)).unwrap();
        let c = NoisePrediction::new(ImageTensor::scalar(1.0)).unwrap();
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        assert_eq!(cfg_combine(&u, &c, 7.5).unwrap().as_slice(), &[7.5]);
        let bad = NoisePrediction::new(ImageTensor::zeros(1, 1, 2)).unwrap();
        assert!(cfg_combine(&u, &bad, 1.0).is_err());
    }

    #[test]
    fn denoised_estimate_cases() {
        let x = ImageTensor::scalar(4.0);
        let e = NoisePrediction::new(ImageTensor::scalar(2.0)).unwrap();
        assert_eq!(denoised_estimate(&x, 2.0, &e).unwrap().as_slice(), &[0.0]);
        assert_eq!(denoised_estimate(&x, 0.0, &e).unwrap(), x);
        let zero = NoisePrediction::new(ImageTensor::scalar(0.0)).unwrap();
        assert_eq!(denoised_estimate(&x, 3.0, &zero).unwrap(), x);
    }

    #[test]
    fn training_loss_cases() {
        let sched = make_schedule(ScheduleKind::LogLinear, 10, 0.05, 5.0).unwrap();
        let single = MixtureDenoiser::empirical(&[ImageTensor::from_flat(vec![0.3, -0.2, 1.0]).unwrap()]).unwrap();
        let l = mc_training_loss(&single, &single, &sched, 200, 1).unwrap();
        assert!(l < 1e-20, "{l}");

        let d = 8;
        let data = MixtureDenoiser::empirical(&[ImageTensor::zeros(1, 1, d)]).unwrap();
        let draws = draw_training_samples(&data, &sched, 20_000, 2).unwrap();
        let zero = training_loss_on(&draws, |y, _| Ok(ImageTensor::zeros(1, 1, y.len()))).unwrap();
        assert!((zero - d as f64).abs() < 0.2, "{zero}");

        let pair = points(&[-1.0, 1.0]);
        let draws = draw_training_samples(&pair, &sched, 2_000, 3).unwrap();
        let exact = training_loss_on(&draws, |y, s| Ok(pair.predict_epsilon(y, s, None)?.into_tensor())).unwrap();
        for k in [-1.0, -0.1, 0.0, 0.1, 1.0] {
            let constant = training_loss_on(&draws, |_, _| Ok(ImageTensor::scalar(k))).unwrap();
            assert!(exact < constant, "{exact} vs {constant}");
        }
        assert!(draw_training_samples(&pair, &sched, 0, 0).is_err());
    }

    #[test]
    fn exact_denoiser_beats_perturbations() {
        let sched = make_schedule(ScheduleKind::LogLinear, 10, 0.1, 4.0).unwrap();
        let m = MixtureDenoiser::new(
            (1, 1, 2),
            vec![
                comp(vec![-1.0, 0.5], 0.2, 0.3, None),
                comp(vec![1.0, -0.5], 0.0, 0.7, None),
            ],
        )
        .unwrap();
        let draws = draw_training_samples(&m, &sched, 4_000, 9).unwrap();
        let exact = training_loss_on(&draws, |y, s| Ok(m.predict_epsilon(y, s, None)?.into_tensor())).unwrap();
        let mut rng = rng::stream(5, 0);
        for _ in 0..100 {
            let delta = [
                0.05 * rng::standard_normal(&mut rng),
                0.05 * rng::standard_normal(&mut rng),
            ];
            let perturbed = training_loss_on(&draws, |y, s| {
                let e = m.predict_epsilon(y, s, None)?.into_tensor();
                ImageTensor::from_flat(vec![e.as_slice()[0] + delta[0], e.as_slice()[1] + delta[1]])
            })
            .unwrap();
            assert!(exact <= perturbed);
        }
    }

    #[test]
    fn mixture_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MixtureDenoiser::new(
            (1, 1, 2),
            vec![
                comp(vec![0.1, 0.2], 0.3, 1.0, Some("x")),
                comp(vec![-0.1, 0.7], 0.0, 3.0, None),
            ],
        )
        .unwrap();
        let p = dir.path().join("mix.json");
        m.save(&p).unwrap();
        assert_eq!(MixtureDenoiser::load(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn translation_equivariance(
            shift in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-3.0f64..3.0, 3),
            sigma in 0.2f64..3.0,
        ) {
            let means = [vec![0.0, 1.0, -1.0], vec![1.0, 0.5, 0.0]];
            let build = |off: &[f64]| {
                MixtureDenoiser::new(
                    (1, 1, 3),
                    means
                        .iter()
                        .enumerate()
                        .map(|(i, m)| comp(m.iter().zip(off).map(|(a, b)| a + b).collect(), 0.3 * i as f64, 1.0, None))
                        .collect(),
                )
                .unwrap()
            };
            let base = build(&[0.0; 3]);
            let moved = build(&shift);
            let y0 = ImageTensor::from_flat(y.clone()).unwrap();
            let y1 = ImageTensor::from_flat(y.iter().zip(&shift).map(|(a, b)| a + b).collect()).unwrap();
            let e0 = base.predict_epsilon(&y0, sigma, None).unwrap();
            let e1 = moved.predict_epsilon(&y1, sigma, None).unwrap();
            for (a, b) in e0.as_slice().iter().zip(e1.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn cfg_of_identical_predictions_is_identity(v in prop::collection::vec(-10.0f64..10.0, 4), w in -20.0f64..20.0) {
            let e = NoisePrediction::new(ImageTensor::from_flat(v).unwrap()).unwrap();
            let out = cfg_combine(&e, &e, w).unwrap();
            for (a, b) in out.as_slice().iter().zip(e.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + w.abs()) * b.abs().max(1.0));
            }
        }
    }
}
