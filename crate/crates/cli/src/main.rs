mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunArgs;

/// Online neural surface light fields: train, render, evaluate, synthesize
/// and self-verify.
#[derive(Debug, Parser)]
#[command(name = "nslfol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stream an RGBD sequence through the agents and write a checkpoint.
    Train(TrainArgs),
    /// Render a checkpoint along a trajectory into PNG frames.
    Render(RenderArgs),
    /// Render at every ground-truth pose and report PSNR/SSIM and angle buckets.
    Eval(EvalArgs),
    /// Write a synthetic scene as a TUM-layout sequence with its oracle.
    Synth(commands::synth::SynthArgs),
    /// Run a self-check suite: grad, sh, partition, async or all.
    Verify(commands::verify::VerifyArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, env = "NSLFOL_CHECKPOINT")]
    checkpoint: PathBuf,
    /// Surface mesh (OBJ or PLY).
    #[arg(long, env = "NSLFOL_MESH")]
    mesh: PathBuf,
    /// Camera-to-world poses in TUM trajectory format.
    #[arg(long, env = "NSLFOL_TRAJECTORY")]
    trajectory: PathBuf,
    /// Intrinsics file (`key = value`); defaults to the ICL-NUIM camera.
    #[arg(long, env = "NSLFOL_INTRINSICS")]
    intrinsics: Option<PathBuf>,
    /// Also write little-endian f32 dumps next to each PNG.
    #[arg(long)]
    float_dump: bool,
    #[arg(long, env = "NSLFOL_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, env = "NSLFOL_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "NSLFOL_MESH")]
    mesh: PathBuf,
    /// Sequence whose training directions define the angle buckets;
    /// defaults to the evaluated dataset, read with the training skip.
    #[arg(long, env = "NSLFOL_TRAIN_DATASET")]
    train_dataset: Option<PathBuf>,
    /// Evaluate every n-th frame of the dataset.
    #[arg(long, default_value_t = 1)]
    eval_skip: usize,
    /// Comma-separated angle bucket limits in degrees.
    #[arg(long, default_value = "15,30,60", value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// `per_point` (nearest trained direction per surface point) or
    /// `per_frame` (camera optical-axis angle).
    #[arg(long, default_value = "per_point")]
    angle_mode: String,
    /// Voxel edge (m) of the trained-direction index.
    #[arg(long, default_value_t = 0.02)]
    voxel: f64,
}

/// Bad flags, config values or unusable combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A verification suite ran and reported failures.
#[derive(Debug)]
pub struct VerifyFailed(pub Vec<String>);

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verification failed: {}", self.0.join(", "))
    }
}

impl std::error::Error for VerifyFailed {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if err.downcast_ref::<VerifyFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match err.downcast_ref::<nslf_core::Error>() {
        Some(nslf_core::Error::Config(_)) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train::run(&a.run),
        Command::Render(a) => commands::render::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Synth(a) => commands::synth::run(&a),
        Command::Verify(a) => commands::verify::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
