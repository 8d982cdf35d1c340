//! Command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dragguide::experiments::{run, RunConfig};
use dragguide::{SamplerKind, ScheduleKind};

#[derive(Parser)]
#[command(name = "dragguide", version, about = "Drag-guided diffusion sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand. Flags given explicitly win over `--config`.
#[derive(Args)]
struct Common {
    /// Number of sampling steps.
    #[arg(long = "T", global = true)]
    sampling_steps: Option<usize>,
    #[arg(long, global = true)]
    sigma_min: Option<f64>,
    #[arg(long, global = true)]
    sigma_max: Option<f64>,
    /// log_linear or linear.
    #[arg(long, global = true)]
    schedule: Option<ScheduleKind>,
    /// ddim, pgd or ge.
    #[arg(long, global = true)]
    sampler: Option<SamplerKind>,
    #[arg(long, global = true)]
    eta0: Option<f64>,
    #[arg(long, global = true)]
    cfg_scale: Option<f64>,
    #[arg(long, global = true)]
    ge_gamma: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file, such as the config.json of an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Mixture denoiser file; defaults to the dataset's empirical denoiser.
    #[arg(long, global = true)]
    mixture: Option<PathBuf>,
    #[arg(long, global = true)]
    condition: Option<String>,
    #[arg(long, global = true)]
    sampling_side: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic labeled dataset.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
    },
    /// Fit the random-feature ridge surrogate.
    Train {
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Evaluate a surrogate on a dataset.
    Eval,
    /// Paired baseline and guided sampling.
    Sample {
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Guided image-to-image redesigns of a reference.
    Redesign {
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        reference_index: Option<usize>,
        /// Comma-separated start noise levels.
        #[arg(long, value_delimiter = ',')]
        sigma_t: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Surrogate error on denoised estimates across noise levels.
    Robustness {
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',')]
        noise_levels: Option<Vec<f64>>,
    },
    /// Compare the two guided-update forms on randomized problems.
    CheckEquivalence {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Plain gradient descent on the surrogate in pixel space.
    NaiveDescent {
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        reference_index: Option<usize>,
        #[arg(long = "steps")]
        descent_steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn resolve(cli: Cli) -> dragguide::Result<RunConfig> {
    let g = cli.common;
    let mut c = match &g.config {
        Some(path) => RunConfig::default().merge_file(path)?,
        None => RunConfig::default(),
    };
    set(&mut c.steps, g.sampling_steps);
    set(&mut c.sigma_min, g.sigma_min);
    set(&mut c.sigma_max, g.sigma_max);
    set(&mut c.schedule, g.schedule);
    set(&mut c.sampler, g.sampler);
    set(&mut c.eta0, g.eta0);
    set(&mut c.cfg_scale, g.cfg_scale);
    set(&mut c.ge_gamma, g.ge_gamma);
    set(&mut c.lambda, g.lambda);
    set(&mut c.seed, g.seed);
    set(&mut c.out, g.out);
    set(&mut c.sampling_side, g.sampling_side);
    c.dataset = g.dataset.or(c.dataset);
    c.model = g.model.or(c.model);
    c.mixture = g.mixture.or(c.mixture);
    c.condition = g.condition.or(c.condition);

    c.command = match cli.command {
        Command::GenData { n, side } => {
            set(&mut c.n, n);
            set(&mut c.side, side);
            "gen-data"
        }
        Command::Train { augment, channels } => {
            c.augment |= augment;
            set(&mut c.channels, channels);
            "train"
        }
        Command::Eval => "eval",
        Command::Sample { seeds } => {
            set(&mut c.seeds, seeds);
            "sample"
        }
        Command::Redesign {
            reference,
            reference_index,
            sigma_t,
            seeds,
        } => {
            c.reference = reference.or(c.reference);
            set(&mut c.reference_index, reference_index);
            c.sigma_t_list = sigma_t.or(c.sigma_t_list);
            set(&mut c.seeds, seeds);
            "redesign"
        }
        Command::Robustness { noise_levels } => {
            set(&mut c.noise_levels, noise_levels);
            "robustness"
        }
        Command::CheckEquivalence { trials } => {
            set(&mut c.trials, trials);
            "check-equivalence"
        }
        Command::NaiveDescent {
            reference,
            reference_index,
            descent_steps,
            lr,
        } => {
            c.reference = reference.or(c.reference);
            set(&mut c.reference_index, reference_index);
            set(&mut c.descent_steps, descent_steps);
            set(&mut c.lr, lr);
            "naive-descent"
        }
    }
    .to_string();
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve(cli).and_then(|cfg| run(&cfg));
    match result {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
