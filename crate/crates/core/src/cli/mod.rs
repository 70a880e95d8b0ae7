//! `herbage` command line: one subcommand per pipeline stage.
//!
//! Every stage reads and writes the formats in [`crate::dataio`]. JSON
//! artifacts carry a `provenance` object; CSV artifacts get a sibling
//! `<file>.provenance.json`. Failures print a JSON object on stderr and exit
//! with a stage-specific code.

mod config;
mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use config::{PipelineConfig, Provenance, SpeciesSpec};

#[derive(Debug, Parser)]
#[command(name = "herbage", version, about = "Synthetic canopy generation and biomass auto-labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a procedural cutout library and write its manifest.
    Assets(AssetsArgs),
    /// Generate synthetic scenes with label maps and height rasters.
    Generate(GenerateArgs),
    /// Score images with the colour-prototype segmenter.
    Segment(SegmentArgs),
    /// Reduce score maps (and heights) to per-image features.
    Features(FeaturesArgs),
    /// Fit the ridge auto-labeler on trusted labels.
    Fit(FitArgs),
    /// Predict labels for images from a fitted model.
    Autolabel(AutolabelArgs),
    /// Train the linear regressor on trusted and automatic labels.
    Train(TrainArgs),
    /// Compare a prediction table with ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct AssetsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Samples per species.
    #[arg(long, default_value_t = 8)]
    pub per_species: usize,
    /// Smallest and largest cutout side, e.g. 24,48.
    #[arg(long, value_parser = parse_pair::<usize>, default_value = "24,48")]
    pub sample_size: (usize, usize),
    #[arg(long, default_value_t = 4)]
    pub backgrounds: usize,
    /// Background size, WxH.
    #[arg(long, value_parser = parse_dims, default_value = "256x256")]
    pub background_size: (usize, usize),
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Asset manifest; overrides the config.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Canvas size, WxH.
    #[arg(long, value_parser = parse_dims)]
    pub canvas: Option<(usize, usize)>,
    /// Inclusive paste-count range, e.g. 400,800.
    #[arg(long, value_parser = parse_pair::<u32>)]
    pub paste_count: Option<(u32, u32)>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "HERBAGE_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `<id>.jpg` images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Prototype model JSON.
    #[arg(long, conflicts_with = "fit_on", required_unless_present = "fit_on")]
    pub model: Option<PathBuf>,
    /// Labelled synthetic dataset to fit prototypes on.
    #[arg(long)]
    pub fit_on: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of `<id>.smp` score maps.
    #[arg(long)]
    pub scores: PathBuf,
    /// Directory of `<id>_height.hht` rasters (needed for HL+SL+H).
    #[arg(long)]
    pub heights: Option<PathBuf>,
    /// HL, SL, HL+SL or HL+SL+H.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RidgeFlags {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Fit on raw features.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub no_intercept: bool,
    /// Rescale clipped percentages to sum to 100.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    /// Trusted label table.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ridge: RidgeFlags,
    /// Share of labelled rows held out for the per-mode validation report.
    #[arg(long, default_value_t = 0.5)]
    pub val_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AutolabelArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Label table whose images are skipped (usually the trusted set).
    #[arg(long)]
    pub exclude: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub trusted: PathBuf,
    /// Automatic label table; omit to train on trusted rows only.
    #[arg(long)]
    pub automatic: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub trusted_fraction: Option<f64>,
    #[arg(long)]
    pub allow_pure_automatic: bool,
    #[arg(long)]
    pub no_perturb: bool,
    /// Per-target perturbation sigmas, comma separated, in target order.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the printed table.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Drop predictions for images absent from the truth table.
    #[arg(long)]
    pub truth_only: bool,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("bad number {v:?}"));
    Ok((p(a)?, p(b)?))
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad size {v:?}"));
    Ok((p(a)?, p(b)?))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
    #[error(transparent)]
    Asset(#[from] crate::assets::AssetError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Segment(#[from] crate::refseg::SegError),
    #[error(transparent)]
    Feature(#[from] crate::segfeat::FeatureError),
    #[error(transparent)]
    Ridge(#[from] crate::ridge::RidgeError),
    #[error(transparent)]
    Train(#[from] crate::robust::TrainError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("input: {0}")]
    Input(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Asset(_) => "assets",
            CliError::Synth(_) => "generate",
            CliError::Segment(_) => "segment",
            CliError::Feature(_) => "features",
            CliError::Ridge(_) => "ridge",
            CliError::Train(_) => "train",
            CliError::Metric(_) => "eval",
            CliError::Io { .. } => "io",
            CliError::Input(_) => "input",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Asset(_) => 4,
            CliError::Synth(_) => 5,
            CliError::Segment(_) | CliError::Feature(_) => 6,
            CliError::Ridge(_) => 7,
            CliError::Train(_) => 8,
            CliError::Metric(_) => 9,
        }
    }

    /// `{"error": kind, "message": ..., "exit_code": n}`
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Out {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        })
        .expect("error serializes")
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Assets(a) => stages::assets(a),
        Command::Generate(a) => stages::generate(a),
        Command::Segment(a) => stages::segment(a),
        Command::Features(a) => stages::features(a),
        Command::Fit(a) => stages::fit(a),
        Command::Autolabel(a) => stages::autolabel(a),
        Command::Train(a) => stages::train(a),
        Command::Eval(a) => stages::eval(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dims_and_pairs() {
        assert_eq!(parse_dims("256x128").unwrap(), (256, 128));
        assert!(parse_dims("256").is_err());
        assert_eq!(parse_pair::<u32>("400,800").unwrap(), (400, 800));
        assert!(parse_pair::<u32>("a,b").is_err());
    }

    #[test]
    fn error_json_is_machine_readable() {
        let e = CliError::Config("bad".into());
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "config");
        assert_eq!(v["exit_code"], 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
