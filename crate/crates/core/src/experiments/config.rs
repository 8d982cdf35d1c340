use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::SamplerKind;
use crate::schedule::{make_schedule, GuidanceWeights, NoiseSchedule, ScheduleKind};

/// Every parameter a command can read. Commands ignore the fields they do
/// not use; the whole resolved struct is echoed next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub out: PathBuf,
    pub seed: u64,

    pub schedule: ScheduleKind,
    #[serde(rename = "T")]
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sampler: SamplerKind,
    pub eta0: f64,
    pub cfg_scale: f64,
    pub ge_gamma: f64,
    pub condition: Option<String>,

    pub lambda: f64,
    pub channels: usize,
    pub augment: bool,

    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub mixture: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub reference_index: usize,

    /// Number of synthetic records for `gen-data`.
    pub n: usize,
    /// Image side for `gen-data`.
    pub side: usize,
    /// Spatial side at which sampling runs.
    pub sampling_side: usize,
    /// Number of consecutive seeds, starting at `seed`.
    pub seeds: usize,
    /// Redesign start levels; `None` means `{0.1, 0.5, 1.0}·sigma_max`.
    pub sigma_t_list: Option<Vec<f64>>,
    /// Robustness noise levels.
    pub noise_levels: Vec<f64>,

    pub trials: usize,
    pub step_tolerance: f64,
    pub trajectory_tolerance: f64,

    pub descent_steps: usize,
    pub lr: f64,
    pub frame_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = GuidanceWeights::default();
        Self {
            command: String::new(),
            out: PathBuf::from("out"),
            seed: 0,
            schedule: ScheduleKind::LogLinear,
            steps: 80,
            sigma_min: 0.0,
            sigma_max: 20.0,
            sampler: SamplerKind::Ddim,
            eta0: w.eta0,
            cfg_scale: w.cfg_w,
            ge_gamma: w.ge_gamma,
            condition: None,
            lambda: 10.0,
            channels: 160,
            augment: false,
            dataset: None,
            model: None,
            mixture: None,
            reference: None,
            reference_index: 0,
            n: 1000,
            side: 64,
            sampling_side: 64,
            seeds: 4,
            sigma_t_list: None,
            noise_levels: vec![0.0, 2.0, 4.0, 8.0, 16.0],
            trials: 100,
            step_tolerance: 1e-9,
            trajectory_tolerance: 1e-7,
            descent_steps: 200,
            lr: 0.01,
            frame_every: 20,
        }
    }
}

impl RunConfig {
    /// Overlays the keys of a JSON config file onto `self`; keys in the
    /// file win over values already set.
    pub fn merge_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::data(path, format!("invalid JSON: {e}")))?;
        let serde_json::Value::Object(overlay) = overlay else {
            return Err(Error::data(path, "config file must contain a JSON object"));
        };
        let mut base = serde_json::to_value(self).map_err(|e| Error::Format(e.to_string()))?;
        let map = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in overlay {
            map.insert(k, v);
        }
        serde_json::from_value(base).map_err(|e| Error::data(path, format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.schedule, self.steps, self.sigma_min, self.sigma_max)
    }

    pub fn guidance(&self) -> Result<GuidanceWeights> {
        GuidanceWeights::new(self.eta0, self.cfg_scale, self.ge_gamma)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed + k).collect()
    }

    pub fn redesign_levels(&self) -> Vec<f64> {
        self.sigma_t_list
            .clone()
            .unwrap_or_else(|| [0.1, 0.5, 1.0].iter().map(|f| f * self.sigma_max).collect())
    }

    pub(crate) fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
        field
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} needs --{name}", self.command)))
    }
}
