use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use emg_core::config::{SmoothingKind, WindowConvention};
use emg_core::matcher::Activation;
use emg_core::pipeline::SweepAxis;
use emg_core::{Aggregation, EdgeMode, Fallback, RunConfig, SquashMode};

pub const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nformats: emg-dataset v1 (JSONL), EMG-FEAT v1, emg-report v1, emg-params v1"
);

#[derive(Debug, Parser)]
#[command(name = "emg", version, long_version = LONG_VERSION)]
#[command(about = "Event-matching temporal grounding: smoothing, extraction, evaluation and analysis")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Maximum worker threads. Results do not depend on this value.
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print Savitzky-Golay smoothing coefficients, one per line.
    SgKernel {
        #[arg(long, value_name = "K")]
        half_window: usize,
        #[arg(long, value_name = "P")]
        order: usize,
    },
    /// Write a synthetic dataset and its feature files.
    GenSynth(GenSynthArgs),
    /// Train the toy projectors and event embeddings on a dataset.
    TrainToy(TrainArgs),
    /// Smooth a score track read from a text file.
    Smooth(TrackArgs),
    /// Extract segments from a score track read from a text file.
    Extract(ExtractArgs),
    /// Run the pipeline on a dataset and report metrics.
    Eval(EvalArgs),
    /// Error taxonomy, length buckets and ablations.
    Analyze(AnalyzeArgs),
    /// One pipeline run per value of a hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Scenario {
    Clean,
    BoundaryDistractors,
    Noisy,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory; receives dataset.jsonl and features/.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "boundary-distractors")]
    pub scenario: Scenario,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_videos: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// JSONL dataset; feature paths resolve against its directory.
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Trained parameters from `train-toy`.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Where to write the trained parameters (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Where to write the `epoch,loss` curve.
    #[arg(long, value_name = "FILE")]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub init_noise: Option<f64>,
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// Squash mode used inside the training loss.
    #[arg(long)]
    pub train_squash: Option<SquashMode>,
    #[arg(long)]
    pub train_temperature: Option<f64>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Scores separated by whitespace or commas; `-` reads stdin.
    #[arg(long, value_name = "FILE")]
    pub scores: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub fps: f64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub track: TrackArgs,
    /// Smooth with the configured smoother before extracting.
    #[arg(long)]
    pub smooth: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutputFormat,
    /// Also write the JSON report here.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write per-query predictions (JSONL) here.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Ablation {
    Smoothing,
    Aggregation,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Bucket edges in seconds, strictly increasing; `inf` is allowed.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,20,40,inf")]
    pub bucket_edges: Vec<f64>,
    /// Analyze the two-token boundary baseline instead of event matching.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, value_name = "FILE")]
    pub taxonomy_out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub buckets_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    /// Ablation strategies, e.g. `none,ma:5,ema:5,sg:5:2` or `average,max,median`.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub ablation_out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Sigma,
    Alpha,
    K,
    Smoothing,
    Aggregation,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Sigma => SweepAxis::Sigma,
            AxisArg::Alpha => SweepAxis::Alpha,
            AxisArg::K => SweepAxis::K,
            AxisArg::Smoothing => SweepAxis::Smoothing,
            AxisArg::Aggregation => SweepAxis::Aggregation,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SmoothingArg {
    None,
    SavitzkyGolay,
    MovingAverage,
    Exponential,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WindowArg {
    Half,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Tanh,
    Identity,
}

/// Per-run overrides of the configuration file.
#[derive(Debug, Args, Default)]
pub struct RunFlags {
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub halo_width: Option<usize>,
    #[arg(long, value_enum)]
    pub smoothing: Option<SmoothingArg>,
    #[arg(long)]
    pub sg_half_window: Option<usize>,
    #[arg(long)]
    pub sg_order: Option<usize>,
    #[arg(long, value_enum)]
    pub window_convention: Option<WindowArg>,
    #[arg(long)]
    pub edge_mode: Option<EdgeMode>,
    #[arg(long)]
    pub smoothing_window: Option<usize>,
    #[arg(long)]
    pub squash: Option<SquashMode>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long, value_delimiter = ',')]
    pub layer_mask: Option<Vec<usize>>,
    #[arg(long)]
    pub merge_gap: Option<usize>,
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub fallback: Option<Fallback>,
    #[arg(long)]
    pub f1_iou_threshold: Option<f64>,
    #[arg(long)]
    pub saliency_threshold: Option<f64>,
    #[arg(long)]
    pub highlight_count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunFlags {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            )*};
        }
        set!(
            sigma, alpha, halo_width, sg_half_window, sg_order, edge_mode, smoothing_window, squash, temperature,
            aggregation, merge_gap, min_duration, fallback, f1_iou_threshold, saliency_threshold, highlight_count, seed
        );
        if let Some(m) = &self.layer_mask {
            cfg.layer_mask = Some(m.clone());
        }
        if let Some(s) = self.smoothing {
            cfg.smoothing = match s {
                SmoothingArg::None => SmoothingKind::None,
                SmoothingArg::SavitzkyGolay => SmoothingKind::SavitzkyGolay,
                SmoothingArg::MovingAverage => SmoothingKind::MovingAverage,
                SmoothingArg::Exponential => SmoothingKind::Exponential,
            };
        }
        if let Some(w) = self.window_convention {
            cfg.window_convention = match w {
                WindowArg::Half => WindowConvention::Half,
                WindowArg::Full => WindowConvention::Full,
            };
        }
    }
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Tanh => Activation::Tanh,
            ActivationArg::Identity => Activation::Identity,
        }
    }
}
