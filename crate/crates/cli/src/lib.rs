//! Command-line front end: data preparation, training, generation,
//! evaluation and reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cl2gen", version, about = "Continual-learning motion generation experiments")]
pub struct Cli {
    /// Force single-threaded execution for bit-exact reruns.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// All classes in a single task.
    Offline,
    /// Task by task with replay.
    Cl2gen,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a canonical dataset file from a synthetic spec or an existing file.
    PrepareData {
        /// Synthetic spec, e.g. "classes=4,per_class=50,seed=7" (also min_len, max_len, noise, fps).
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        synth: Option<String>,
        /// Dataset file to validate and rewrite canonically.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a generator; writes checkpoints, run log, loss curves and a manifest.
    Train {
        #[arg(long, value_enum, default_value_t = Mode::Cl2gen)]
        mode: Mode,
        /// Flat TOML config; keys not given keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frozen classifier to reuse instead of pretraining one.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Replay ratio such as 1/5, or "none".
        #[arg(long)]
        replay_ratio: Option<String>,
        #[arg(long)]
        lambda_aux: Option<f64>,
        #[arg(long)]
        classes_per_task: Option<usize>,
    },
    /// Sample sequences of one class from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Class name or numeric id.
        #[arg(long = "class")]
        class: String,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint (or the real data itself) with a frozen classifier.
    Evaluate {
        /// Omit to evaluate the real data against itself.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Config file whose evaluation keys set the protocol.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary table, accuracy curves (CSV) and plot (SVG) from a run log.
    Report {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recheck the hashes recorded in a run manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Execute one parsed command line; returns text for stdout.
pub fn run(cli: Cli) -> CliResult<String> {
    if cli.deterministic {
        // Fails only if the pool was already built, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match cli.command {
        Command::PrepareData { synth, input, out } => commands::prepare_data(synth.as_deref(), input.as_deref(), &out),
        Command::Train {
            mode,
            config,
            data,
            out,
            classifier,
            seed,
            epochs,
            lr,
            replay_ratio,
            lambda_aux,
            classes_per_task,
        } => {
            let mut cfg = match &config {
                Some(p) => config::RunConfig::load(p)?,
                None => config::RunConfig::default(),
            };
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = epochs {
                cfg.epochs_per_task = v;
            }
            if let Some(v) = lr {
                cfg.lr = v;
            }
            if let Some(v) = replay_ratio {
                cfg.replay_ratio = v;
            }
            if let Some(v) = lambda_aux {
                cfg.lambda_aux = v;
            }
            if let Some(v) = classes_per_task {
                cfg.classes_per_task = v;
            }
            commands::train(&commands::TrainArgs {
                mode,
                config: cfg,
                data,
                out,
                classifier,
                deterministic: cli.deterministic,
            })
        }
        Command::Generate {
            checkpoint,
            class,
            frames,
            count,
            seed,
            out,
        } => commands::generate(&checkpoint, &class, frames, count, seed, &out),
        Command::Evaluate {
            checkpoint,
            classifier,
            data,
            protocol,
            repetitions,
            out,
        } => {
            let cfg = match &protocol {
                Some(p) => config::RunConfig::load(p)?,
                None => config::RunConfig::default(),
            };
            let mut protocol = cfg.protocol();
            if let Some(r) = repetitions {
                protocol.repetitions = r;
            }
            commands::evaluate(checkpoint.as_deref(), &classifier, &data, &protocol, &out)
        }
        Command::Report { runlog, out } => commands::report(&runlog, &out),
        Command::Verify { manifest } => commands::verify(&manifest),
    }
}
