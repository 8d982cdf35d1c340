//! Deterministic experiment runs behind the `dragguide` CLI.
//!
//! Each `cmd_*` function reads a resolved [`RunConfig`], writes CSV, PNG and
//! a `metadata.json` into the configured output directory, and returns a
//! report. The computational cores (`train_surrogate`, `paired_sampling`,
//! `robustness_curve`, ...) are exposed separately for in-memory use.

mod analysis;
mod config;
mod output;
mod sampling;
mod train;

pub use analysis::{
    cmd_check_equivalence, cmd_robustness, equivalence_check, robustness_curve, EquivalenceReport, EquivalenceTrial,
    RobustnessRow,
};
pub use config::RunConfig;
pub use output::{write_csv, Cell, RunDir};
pub use sampling::{
    cmd_naive_descent, cmd_redesign, cmd_sample, empirical_denoiser, nearest_distance, paired_sampling, redesign_runs,
    DescentReport, RedesignRun, SamplePair,
};
pub use train::{cmd_eval, cmd_gen_data, cmd_train, train_surrogate, TrainReport};

use crate::error::Result;

/// Writes the resolved config into the output directory, then runs the
/// command named in `config.command`. Returns the process exit status.
pub fn run(config: &RunConfig) -> Result<i32> {
    let dir = RunDir::create(&config.out)?;
    std::fs::write(dir.root().join("config.json"), config.to_json())
        .map_err(|e| crate::error::Error::io(dir.root().join("config.json"), e))?;
    match config.command.as_str() {
        "gen-data" => cmd_gen_data(config).map(|_| 0),
        "train" => cmd_train(config).map(|_| 0),
        "eval" => cmd_eval(config).map(|_| 0),
        "sample" => cmd_sample(config).map(|_| 0),
        "redesign" => cmd_redesign(config).map(|_| 0),
        "robustness" => cmd_robustness(config).map(|_| 0),
        "check-equivalence" => cmd_check_equivalence(config).map(|r| if r.passed { 0 } else { 1 }),
        "naive-descent" => cmd_naive_descent(config).map(|_| 0),
        other => Err(crate::error::Error::invalid(format!("unknown command {other:?}"))),
    }
}
