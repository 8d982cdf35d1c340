//! Drag-guided diffusion sampling for vehicle images.
//!
//! The crate bundles the pieces needed to steer a score-based sampler toward
//! low-drag designs: noise schedules, exact mixture denoisers, guided and
//! gradient-estimation samplers, a differentiable random-feature drag
//! surrogate, dataset tooling and an experiments layer used by the CLI.

pub mod data;
pub mod denoiser;
pub mod error;
pub mod experiments;
mod linalg;
pub mod numfmt;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod surrogate;
pub mod tensor;

pub use denoiser::{Denoiser, MixtureComponent, MixtureDenoiser, NoisePrediction};
pub use error::{Error, Result};
pub use sampler::{run_sampler, SamplerConfig, SamplerKind, Trajectory};
pub use schedule::{make_schedule, GuidanceWeights, NoiseSchedule, ScheduleKind};
pub use surrogate::{DragObjective, SurrogateModel};
pub use tensor::ImageTensor;
