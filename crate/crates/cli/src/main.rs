//! `agmn`: synthetic data, inference, evaluation and oracle checks.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod commands;
mod predictions;

use std::path::PathBuf;
use std::process::ExitCode;

use agmn_core::bp::ConvPath;
use agmn_core::tensor_io::Dtype;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "agmn", version, about = "Tree-structured message passing over keypoint heatmaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with oracle kernels.
    Synth(SynthArgs),
    /// Compute marginals and predictions for one sample or a manifest.
    Infer(InferArgs),
    /// Score predictions with PCK.
    Eval(EvalArgs),
    /// Compare message passing against brute-force enumeration.
    Check(CheckArgs),
    /// Write Gaussian training targets for a keypoint file.
    Targets(TargetsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConvArg {
    Direct,
    Fft,
}

impl From<ConvArg> for ConvPath {
    fn from(c: ConvArg) -> Self {
        match c {
            ConvArg::Direct => ConvPath::Direct,
            ConvArg::Fft => ConvPath::Fft,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of keypoints whose true peak is removed.
    #[arg(long, default_value_t = 0.0)]
    pub occlusion: f64,
    /// Distractor peaks planted in each occluded channel.
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    /// Amplitude of uniform background noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub peak_sigma: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Unary maps (C x H x W) for a single sample.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub unary: Option<PathBuf>,
    /// Directed kernels (2|E| x K x K), or |E| with --shared-kernels.
    #[arg(long, conflicts_with = "manifest")]
    pub kernels: Option<PathBuf>,
    /// Dataset manifest written by `agmn synth`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Tree definition (JSON); the 21-keypoint hand tree by default.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// One kernel per undirected edge; the reverse direction uses its reflection.
    #[arg(long)]
    pub shared_kernels: bool,
    #[arg(long, value_enum, default_value_t = ConvArg::Direct)]
    pub conv: ConvArg,
    /// Skip message passing and take the argmax of each unary map.
    #[arg(long)]
    pub unary_only: bool,
    /// Worker threads for manifest batches. 1 is the serial reference path.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for marginals and predictions.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// predictions.json written by `agmn infer`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground truth and normalization lengths from a synth manifest.
    #[arg(long, required_unless_present = "truth", conflicts_with = "truth")]
    pub manifest: Option<PathBuf>,
    /// Ground-truth keypoint files, one per predicted sample, in order.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    /// Normalization length for every sample, overriding other sources.
    #[arg(long)]
    pub norm_len: Option<f64>,
    /// Comma-separated thresholds; 0.01..0.10 by default.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV table path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Row label for the CSV table; the prediction mode by default.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 3)]
    pub nodes: usize,
    /// Grid side.
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    /// Kernel side (odd).
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Largest number of joint configurations to enumerate.
    #[arg(long)]
    pub budget: Option<u128>,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Perturb the engine output; used to test that failures are reported.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    /// Keypoint JSON: {"points": [[x, y], ...]}.
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 46)]
    pub rows: usize,
    #[arg(long, default_value_t = 46)]
    pub cols: usize,
    #[arg(long, default_value_t = 45)]
    pub ksize: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Output directory for unary_targets.agt and kernel_targets.agt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

/// Why a subcommand stopped.
#[derive(Debug)]
pub enum Failure {
    /// Bad flag values, detected before any output is written.
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Check(a) => commands::check(a),
        Command::Targets(a) => commands::targets(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
