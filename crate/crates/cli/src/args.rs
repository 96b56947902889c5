use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fsdiff_core::pipeline::Method;
use fsdiff_core::synthio::{FloatRange, IntRange};

/// Few-shot detection with graph-diffusion score refinement over precomputed proposals.
///
/// Tuning values can also come from a `--config` file of `key=value` lines whose keys are
/// the long flag names (for example `alpha=0.3` or `max-steps=30`). A flag given on the
/// command line always wins over the file.
#[derive(Debug, Parser)]
#[command(name = "fsdiff", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus and print its manifest path.
    Gen(GenArgs),
    /// Run the full pipeline on a dataset and write detections and a report.
    Run(RunArgs),
    /// Evaluate a grid of diffusion settings and write a table.
    Sweep(SweepArgs),
    /// Evaluate every post-processing method on the same inputs.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory, created if missing [default: fsdiff-out]
    #[arg(short, long, env = "FSDIFF_OUT", value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// File of key=value settings; command-line flags take precedence
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub output: OutputArgs,
    /// RNG seed [default: 17]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of query images [default: 50]
    #[arg(long)]
    pub images: Option<usize>,
    /// Number of classes [default: 3]
    #[arg(long)]
    pub classes: Option<u32>,
    /// Support annotations per class [default: 2]
    #[arg(long)]
    pub shots: Option<u32>,
    /// Objects per image, `lo..hi` inclusive [default: 2..4]
    #[arg(long, value_name = "RANGE")]
    pub objects: Option<IntRange>,
    /// Fragments per object [default: 3..6]
    #[arg(long, value_name = "RANGE")]
    pub fragments: Option<IntRange>,
    /// Background distractors per image [default: 0..2]
    #[arg(long, value_name = "RANGE")]
    pub distractors: Option<IntRange>,
    /// Feature dimension [default: 64]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Noise mixing weight in [0, 1) [default: 0.15]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fragment proposal scores [default: 0.05..0.45]
    #[arg(long, value_name = "RANGE")]
    pub fragment_scores: Option<FloatRange>,
    /// Whole-object proposal scores [default: 0.55..0.95]
    #[arg(long, value_name = "RANGE")]
    pub whole_scores: Option<FloatRange>,
    /// Allow fragment and whole-object score ranges to overlap
    #[arg(long)]
    pub allow_score_overlap: bool,
    /// Probability of cutting a fragment from an earlier fragment [default: 0.5]
    #[arg(long)]
    pub nest_probability: Option<f64>,
    /// Image side in pixels [default: 192]
    #[arg(long)]
    pub image_size: Option<u32>,
    /// Feature grid side in cells [default: 24]
    #[arg(long)]
    pub grid_size: Option<usize>,
    /// Store dense query feature maps instead of per-proposal features
    #[arg(long)]
    pub query_feature_maps: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DiffusionArgs {
    /// Restart weight of the diffusion, in [0, 1) [default: 0.3]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Decay exponent applied to (1 - pi), >= 0 [default: 0.5]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Early-stopping threshold on the update norm [default: 1e-6]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Maximum diffusion iterations [default: 30]
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Detections kept per image [default: 100]
    #[arg(long)]
    pub max_output: Option<usize>,
    /// IoU threshold for NMS [default: 0.5]
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Gaussian width for Soft-NMS [default: 0.5]
    #[arg(long)]
    pub softnms_sigma: Option<f64>,
    /// IoU threshold for weighted boxes fusion [default: 0.5]
    #[arg(long)]
    pub wbf_iou: Option<f64>,
    /// Worker threads; 0 uses every core [default: 0]
    #[arg(short, long)]
    pub jobs: Option<usize>,
    /// Read class prototypes from this file instead of building them from supports
    #[arg(long, value_name = "FILE")]
    pub prototypes: Option<PathBuf>,
    /// Sample `shots` supports per class with this seed when more are available
    #[arg(long, value_name = "SEED")]
    pub support_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset manifest
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub diffusion: DiffusionArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// none | nms | softnms | wbf | softmerge | diffusion | diffusion+nms [default: diffusion]
    #[arg(short, long)]
    pub method: Option<Method>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Dataset manifest
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated lambda values [default: 0.3,0.5,1.0]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub lambdas: Vec<f64>,
    /// Comma-separated alpha values [default: 0,0.3,0.5]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub alphas: Vec<f64>,
    /// Comma-separated max-steps values [default: 30]
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub steps: Vec<usize>,
    /// Early-stopping threshold on the update norm [default: 1e-6]
    #[arg(long)]
    pub tau: Option<f64>,
    /// diffusion | diffusion+nms [default: diffusion]
    #[arg(short, long)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Write `-` instead of measured times so the table is reproducible byte for byte
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Dataset manifest
    pub manifest: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
    #[command(flatten)]
    pub diffusion: DiffusionArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}
