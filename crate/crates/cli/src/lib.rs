//! The `vsr` command line: `gen-data`, `train`, `infer`, `eval` and
//! `profile`.
//!
//! Exit codes are 0 on success, 1 on runtime failure and 2 on configuration
//! or contract failure. Errors are printed to stderr as one JSON object.

mod commands;
mod manifest;
mod overrides;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use vsr_core::VsrError;

pub use commands::{cmd_eval, cmd_gen_data, cmd_infer, cmd_profile, cmd_train, GenDataConfig};
pub use manifest::{read_manifests, RunManifest, MANIFEST_FILE};
pub use overrides::{parse_assignment, resolve, set_path};

#[derive(Debug, Parser)]
#[command(name = "vsr", version, about = "Recurrent one-step video super-resolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic clips with ground-truth motion and degrade them.
    GenData(GenDataArgs),
    /// Train a generator on a generated dataset.
    Train(TrainArgs),
    /// Super-resolve a clip (or every clip of a dataset) with a checkpoint.
    Infer(InferArgs),
    /// Score SR clips against ground truth.
    Eval(EvalArgs),
    /// Stack one scanline of every frame into a temporal profile image.
    Profile(ProfileArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// JSON with optional `scenes` (scene template) and `degradation` objects.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override a config value, e.g. `--set scenes.num_frames=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub no_temporal_loss: bool,
    #[arg(long)]
    pub no_recurrent: bool,
    #[arg(long)]
    pub no_latent_disc: bool,
    #[arg(long)]
    pub no_pixel_disc: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    /// Checkpoint directory (or its `generator/` subdirectory).
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Clip directory, training clip directory or dataset root.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feed predictions back into the window buffer (default).
    #[arg(long, overrides_with = "no_recurrent")]
    pub recurrent: bool,
    #[arg(long)]
    pub no_recurrent: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Ground-truth flow directory (each flow on frame t+1, pointing into t).
    #[arg(long)]
    pub flows: Option<PathBuf>,
    /// Report path, or a directory when evaluating a dataset.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub quantize_8bit: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub row: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(err: &VsrError) -> i32 {
    if err.is_usage_error() {
        2
    } else {
        1
    }
}

pub fn error_json(err: &VsrError) -> serde_json::Value {
    let mut body = json!({ "kind": err.kind(), "message": err.to_string() });
    if let VsrError::NonFinite { term, step } = err {
        body["term"] = json!(term);
        body["step"] = json!(step);
    }
    json!({ "error": body })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{msg}");
            return 2;
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, raw) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Runs one parsed command and returns its JSON summary.
pub fn execute(command: Command, raw_args: Vec<String>) -> vsr_core::Result<serde_json::Value> {
    match command {
        Command::GenData(a) => cmd_gen_data(&a, raw_args),
        Command::Train(a) => cmd_train(&a, raw_args),
        Command::Infer(a) => cmd_infer(&a, raw_args),
        Command::Eval(a) => cmd_eval(&a, raw_args),
        Command::Profile(a) => cmd_profile(&a, raw_args),
    }
}
