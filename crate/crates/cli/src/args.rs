use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Attention-enhanced GCN training and distillation on graph datasets.
#[derive(Debug, Parser)]
#[command(name = "gkedm", version)]
pub struct Cli {
    /// TOML file with [data], [model], [train], [distill] and [sweep]
    /// sections. Flags override values from the file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads. `--threads 1` runs everything on one thread.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stochastic block model dataset.
    GenData(GenDataArgs),
    /// Train a plain convolutional model.
    Pretrain(PretrainArgs),
    /// Replace the last convolution of a pretrained model with an attention
    /// layer and fine-tune.
    Enhance(EnhanceArgs),
    /// Train a student against a frozen teacher.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Distill students for several alphas and seeds.
    AlphaSweep(SweepArgs),
    /// Merge training reports into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub nodes_per_block: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Learning-rate multiplier for the retained backbone when enhancing.
    #[arg(long)]
    pub backbone_lr_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OutputFlags {
    /// Summary table; `.json` gives JSON, anything else CSV. Printed to
    /// stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch CSV with one column per loss term.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Backbone as `kind:w1,w2,...` with kind gcn or sage.
    #[arg(long)]
    pub arch: Option<String>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Pretrained checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the dataset recorded in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Positional encoding width.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Args)]
pub struct DistillFlags {
    /// Teacher checkpoint directory.
    #[arg(long)]
    pub teacher: PathBuf,
    /// Defaults to the dataset recorded in the teacher checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub student_arch: Option<String>,
    /// Comma-separated subset of value, query, key.
    #[arg(long)]
    pub relations: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub lsp_weight: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long)]
    pub seeds: Option<String>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub distill: DistillFlags,
    /// none, kd, fitnet, lsp or attention (attn).
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Run KD, FitNet, LSP and attention distillation over `--seeds` and
    /// write one comparison table.
    #[arg(long)]
    pub compare: bool,
    /// Student checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// JSON result file; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub distill: DistillFlags,
    /// Comma-separated alphas.
    #[arg(long)]
    pub alphas: Option<String>,
    /// Sweep table (CSV); printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Training reports (`train_report.json` in a checkpoint) or summary
    /// tables written by other commands.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv or json; defaults to the output extension, else CSV.
    #[arg(long)]
    pub format: Option<String>,
}
