//! The `posekit` command-line tool: corpus generation, ingestion, training,
//! one-shot solving, benchmarking and the websocket server.

mod commands;
pub mod posefile;
pub mod settings;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{parse_joint, parse_joint_set, parse_target};

#[derive(Debug, Parser)]
#[command(
    name = "posekit",
    version,
    about = "Learned pose solvers for a 21-joint skeleton"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolveMethod {
    Neural,
    Fabrik,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic CMU-layout BVH corpus and its mapping file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        clips: usize,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        /// Add single-frame spikes so the jitter filter has something to drop.
        #[arg(long)]
        jitter: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse and retarget a directory of BVH files into a dataset file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Joint mapping file (`Canonical = Source` lines).
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the pose autoencoder.
    TrainAe {
        #[arg(long)]
        dataset: PathBuf,
        /// Model directory to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one solver network per joint set against a trained autoencoder.
    TrainSolver {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding the trained autoencoder.
        #[arg(long)]
        models: PathBuf,
        /// `hands`, `ankles`, `head`, `standard`, or comma-separated joint names.
        #[arg(long, default_value = "standard")]
        joints: String,
        /// Output directory; defaults to the model directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Solve one pose for a set of joint targets.
    Solve {
        #[arg(long)]
        models: PathBuf,
        /// Starting pose file; defaults to the dataset mean pose.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// `Joint=x,y,z`, repeatable.
        #[arg(long = "target", required = true)]
        targets: Vec<String>,
        #[arg(long, value_enum, default_value_t = SolveMethod::Neural)]
        method: SolveMethod,
        #[arg(long)]
        post_process: bool,
        /// Output pose file; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time neural and FABRIK solvers with two and five effectors.
    Bench {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Tab-separated report file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve solve sessions over a websocket.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::run(cli.command)
}
