//! Noise-level schedules and the per-step scalar coefficients shared by the
//! samplers.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    LogLinear,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_linear" | "log-linear" | "loglinear" => Ok(ScheduleKind::LogLinear),
            "linear" => Ok(ScheduleKind::Linear),
            other => Err(Error::invalid(format!("unknown schedule kind {other:?}"))),
        }
    }
}

/// Increasing noise levels `σ_0 < σ_1 < … < σ_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Wraps an explicit sigma sequence, checking the schedule invariants.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::invalid("a schedule needs at least two levels (T >= 1)"));
        }
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("schedule sigmas".into()));
        }
        if sigmas[0] < 0.0 {
            return Err(Error::invalid("sigma_0 must be nonnegative"));
        }
        if sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("sigmas must be strictly increasing"));
        }
        Ok(Self { sigmas })
    }

    /// Number of sampling steps `T`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[self.steps()]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// `σ_t − σ_{t−1}`
    pub fn decrement(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.sigmas[t] - self.sigmas[t - 1])
    }
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_sigmas(v)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.sigmas
    }
}

/// Builds a schedule with `σ_0 = sigma_min` and `σ_T = sigma_max`.
///
/// `Linear` spaces the levels uniformly. `LogLinear` spaces `log σ`
/// uniformly over `t = 0..=T` when `sigma_min > 0`. With `sigma_min = 0`
/// the zero level is pinned at `t = 0` and `σ_1..σ_T` are geometric from
/// `0.01·sigma_max` to `sigma_max`.
pub fn make_schedule(kind: ScheduleKind, steps: usize, sigma_min: f64, sigma_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    ensure_finite(sigma_min, "sigma_min")?;
    ensure_finite(sigma_max, "sigma_max")?;
    if sigma_min < 0.0 {
        return Err(Error::invalid("sigma_min must be nonnegative"));
    }
    if sigma_min >= sigma_max {
        return Err(Error::invalid("sigma_min must be below sigma_max"));
    }
    let t_max = steps as f64;
    let mut sigmas: Vec<f64> = match kind {
        ScheduleKind::Linear => (0..=steps)
            .map(|t| sigma_min + (sigma_max - sigma_min) * (t as f64 / t_max))
            .collect(),
        ScheduleKind::LogLinear if sigma_min > 0.0 => {
            let (lo, hi) = (sigma_min.ln(), sigma_max.ln());
            (0..=steps)
                .map(|t| (lo + (hi - lo) * (t as f64 / t_max)).exp())
                .collect()
        }
        ScheduleKind::LogLinear => {
            let mut s = vec![0.0];
            if steps == 1 {
                s.push(sigma_max);
            } else {
                let (lo, hi) = ((0.01 * sigma_max).ln(), sigma_max.ln());
                let span = (steps - 1) as f64;
                s.extend((1..=steps).map(|t| (lo + (hi - lo) * ((t - 1) as f64 / span)).exp()));
            }
            s
        }
    };
    // Pin the endpoints exactly; exp/ln round-trips can be off by an ulp.
    sigmas[0] = sigma_min;
    sigmas[steps] = sigma_max;
    NoiseSchedule::from_sigmas(sigmas)
}

/// Guidance strengths for one sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeights {
    /// Drag-guidance strength `η₀`.
    pub eta0: f64,
    /// Classifier-free guidance weight `w`.
    pub cfg_w: f64,
    /// Gradient-estimation mixing factor `γ`.
    pub ge_gamma: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self {
            eta0: 400.0,
            cfg_w: 7.5,
            ge_gamma: 2.0,
        }
    }
}

impl GuidanceWeights {
    pub fn new(eta0: f64, cfg_w: f64, ge_gamma: f64) -> Result<Self> {
        let w = Self { eta0, cfg_w, ge_gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(self.eta0, "eta0")?;
        ensure_finite(self.cfg_w, "cfg_w")?;
        ensure_finite(self.ge_gamma, "ge_gamma")?;
        if self.eta0 < 0.0 {
            return Err(Error::invalid("eta0 must be nonnegative"));
        }
        Ok(())
    }

    pub fn with_eta0(mut self, eta0: f64) -> Self {
        self.eta0 = eta0;
        self
    }
}

/// Step-size factor `α_t = 1 − σ_{t−1}/σ_t` of the projected-gradient form.
pub fn alpha(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    schedule.check_step(t)?;
    let s = schedule.sigma(t);
    if s == 0.0 {
        return Err(Error::invalid("alpha is undefined at sigma_t = 0"));
    }
    Ok(1.0 - schedule.sigma(t - 1) / s)
}

/// Guidance scale `η_t = η₀/√(1 + 1/σ²)`, evaluated as `η₀σ/√(σ²+1)`.
pub fn eta(weights: &GuidanceWeights, sigma_t: f64) -> Result<f64> {
    ensure_finite(sigma_t, "sigma_t")?;
    if sigma_t < 0.0 {
        return Err(Error::invalid("sigma_t must be nonnegative"));
    }
    Ok(weights.eta0 * sigma_t / (sigma_t * sigma_t + 1.0).sqrt())
}

/// `γ_t = σ_t·η_t`, the gradient step applied to the denoised estimate.
pub fn gamma_t(weights: &GuidanceWeights, sigma_t: f64) -> Result<f64> {
    Ok(sigma_t * eta(weights, sigma_t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(eta0: f64) -> GuidanceWeights {
        GuidanceWeights::new(eta0, 7.5, 2.0).unwrap()
    }

    #[test]
    fn linear_schedule_examples() {
        assert_eq!(
            make_schedule(ScheduleKind::Linear, 1, 0.0, 2.0).unwrap().sigmas(),
            &[0.0, 2.0]
        );
        assert_eq!(
            make_schedule(ScheduleKind::Linear, 2, 0.0, 2.0).unwrap().sigmas(),
            &[0.0, 1.0, 2.0]
        );
    }

    #[test]
    fn log_linear_geometric_midpoint() {
        let s = make_schedule(ScheduleKind::LogLinear, 2, 0.01, 100.0).unwrap();
        assert_eq!(s.sigma(0), 0.01);
        assert!((s.sigma(1) - 1.0).abs() < 1e-12);
        assert_eq!(s.sigma(2), 100.0);
    }

    #[test]
    fn log_linear_with_zero_floor() {
        let s = make_schedule(ScheduleKind::LogLinear, 80, 0.0, 20.0).unwrap();
        assert_eq!(s.steps(), 80);
        assert_eq!(s.sigma(0), 0.0);
        assert!((s.sigma(1) - 0.2).abs() < 1e-12);
        assert_eq!(s.sigma(80), 20.0);
        let one = make_schedule(ScheduleKind::LogLinear, 1, 0.0, 3.0).unwrap();
        assert_eq!(one.sigmas(), &[0.0, 3.0]);
    }

    #[test]
    fn make_schedule_rejects_bad_input() {
        assert!(make_schedule(ScheduleKind::Linear, 0, 0.0, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 3, 1.0, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::Linear, 3, 2.0, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::LogLinear, 3, f64::NAN, 1.0).is_err());
        assert!(make_schedule(ScheduleKind::LogLinear, 3, 0.0, f64::INFINITY).is_err());
        assert!(NoiseSchedule::from_sigmas(vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn alpha_examples() {
        let s = NoiseSchedule::from_sigmas(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(alpha(&s, 2).unwrap(), 0.5);
        assert_eq!(alpha(&s, 1).unwrap(), 1.0);
        assert!(alpha(&s, 0).is_err());
        assert!(alpha(&s, 3).is_err());
        let tight = NoiseSchedule::from_sigmas(vec![1.0, 1.0 + 1e-12]).unwrap();
        assert!(alpha(&tight, 1).unwrap() < 1e-11);
    }

    #[test]
    fn eta_and_gamma_examples() {
        assert!((eta(&w(400.0), 2.0).unwrap() - 357.770_876_4).abs() < 1e-7);
        assert_eq!(eta(&w(400.0), 0.0).unwrap(), 0.0);
        assert_eq!(eta(&w(0.0), 5.0).unwrap(), 0.0);
        assert!((gamma_t(&w(400.0), 2.0).unwrap() - 715.541_752_8).abs() < 1e-7);
        assert_eq!(gamma_t(&w(400.0), 0.0).unwrap(), 0.0);
        assert_eq!(gamma_t(&w(0.0), 3.0).unwrap(), 0.0);
        assert!(eta(&w(1.0), f64::NAN).is_err());
        assert!(eta(&w(1.0), -1.0).is_err());
    }

    #[test]
    fn weights_reject_negative_eta() {
        assert!(GuidanceWeights::new(-1.0, 1.0, 1.0).is_err());
        assert!(GuidanceWeights::new(1.0, f64::NAN, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn schedules_satisfy_invariants(
            steps in 1usize..200,
            lo in 0.0f64..5.0,
            span in 1e-3f64..100.0,
            log in any::<bool>(),
        ) {
            let kind = if log { ScheduleKind::LogLinear } else { ScheduleKind::Linear };
            let s = make_schedule(kind, steps, lo, lo + span).unwrap();
            prop_assert_eq!(s.steps(), steps);
            prop_assert_eq!(s.sigma(0), lo);
            prop_assert_eq!(s.sigma_max(), lo + span);
            prop_assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
            for t in 1..=steps {
                let a = alpha(&s, t).unwrap();
                prop_assert!(a > 0.0 && a <= 1.0);
                let lhs = s.sigma(t) - s.sigma(t - 1);
                let rhs = a * s.sigma(t);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * s.sigma(t));
            }
        }

        #[test]
        fn eta_is_monotone_and_bounded(eta0 in 0.0f64..1000.0, a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let g = w(eta0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (e_lo, e_hi) = (eta(&g, lo).unwrap(), eta(&g, hi).unwrap());
            prop_assert!(e_lo <= e_hi);
            prop_assert!(e_hi <= eta0);
        }
    }
}
