use std::path::PathBuf;

use cfcam::cfcam::{CfCamParams, Weighting};
use cfcam::clustering::ClusteringParams;
use cfcam::explain::Method;
use cfcam::metrics::{AdMask, MetricParams};
use cfcam::robustness::{NoiseMode, NoiseSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cfcam", version, about = "Class activation maps and saliency evaluation for exported CNN bundles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute one heatmap for one bundle
    Explain(ExplainArgs),
    /// Faithfulness metrics for several methods over a set of bundles
    Evaluate(EvaluateArgs),
    /// Heatmap stability under gradient noise
    Robustness(RobustnessArgs),
    /// Compare a CF-CAM variant against the default configuration
    Ablate(AblateArgs),
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: cfcam::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct CamArgs {
    /// Percentile of channel L2 norms above which channels are dominant
    #[arg(long, default_value_t = 75.0)]
    pub p1: f64,
    /// Percentile of pairwise channel distances used as the DBSCAN radius
    #[arg(long, default_value_t = 10.0)]
    pub p2: f64,
    /// Standard deviation of the cross-channel gradient filter
    #[arg(long, default_value_t = 5.0)]
    pub sigma: f64,
    /// Range parameter, recorded but not used by the Gaussian filter
    #[arg(long = "sigma-r", default_value_t = 0.1)]
    pub sigma_r: f64,
    /// One softmax over all valid channels instead of two stages
    #[arg(long)]
    pub single_softmax: bool,
}

impl CamArgs {
    pub fn params(&self) -> CfCamParams {
        CfCamParams {
            sigma_filter: self.sigma,
            sigma_range: self.sigma_r,
            clustering: ClusteringParams {
                p1: self.p1,
                p2: self.p2,
                ..ClusteringParams::default()
            },
            weighting: if self.single_softmax {
                Weighting::Single
            } else {
                Weighting::TwoStage
            },
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AdMaskArg {
    Binary,
    Soft,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// Deletion/insertion curve steps
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Percent of most salient pixels kept for Average Drop/Increase
    #[arg(long, default_value_t = 50.0)]
    pub topk: f64,
    /// Blur applied to the insertion starting image, in pixels
    #[arg(long = "blur-sigma", default_value_t = 10.0)]
    pub blur_sigma: f64,
    #[arg(long = "ad-mask", value_enum, default_value = "binary")]
    pub ad_mask: AdMaskArg,
    /// Divide deletion curves by their first point and insertion curves by
    /// their last
    #[arg(long)]
    pub normalize_curves: bool,
}

impl MetricArgs {
    pub fn params(&self) -> MetricParams {
        MetricParams {
            steps: self.steps,
            top_fraction: self.topk / 100.0,
            blur_sigma: self.blur_sigma,
            ad_mask: match self.ad_mask {
                AdMaskArg::Binary => AdMask::Binary,
                AdMaskArg::Soft => AdMask::Soft,
            },
            normalize_curves: self.normalize_curves,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "cf-cam")]
    pub method: Method,
    #[command(flatten)]
    pub cam: CamArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A bundle directory or a directory of bundles
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "cf-cam,grad-cam,grad-cam-pp,score-cam,ablation-cam")]
    pub method: Vec<Method>,
    #[command(flatten)]
    pub cam: CamArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseModeArg {
    Relative,
    Absolute,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long, value_parser = parse_method, value_delimiter = ',', default_value = "cf-cam,grad-cam,grad-cam-pp")]
    pub method: Vec<Method>,
    /// Noise levels
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub sigmas: Vec<f64>,
    #[arg(long = "noise-mode", value_enum, default_value = "relative")]
    pub noise_mode: NoiseModeArg,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    #[command(flatten)]
    pub cam: CamArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

impl RobustnessArgs {
    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            levels: self.sigmas.clone(),
            mode: match self.noise_mode {
                NoiseModeArg::Relative => NoiseMode::Relative,
                NoiseModeArg::Absolute => NoiseMode::Absolute,
            },
            trials: self.trials,
            seed: self.run.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arm {
    /// Cluster every channel, skipping the dominant-channel split
    NoL2,
    /// K-Means instead of DBSCAN
    Kmeans,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub bundles: PathBuf,
    #[arg(long, value_enum)]
    pub arm: Arm,
    /// Cluster count for the kmeans arm; defaults to the DBSCAN cluster count
    #[arg(long = "kmeans-k")]
    pub kmeans_k: Option<usize>,
    /// Write each bundle's variant and default partitions
    #[arg(long)]
    pub dump_partition: bool,
    #[command(flatten)]
    pub cam: CamArgs,
    #[command(flatten)]
    pub metrics: MetricArgs,
    #[command(flatten)]
    pub run: RunArgs,
}
