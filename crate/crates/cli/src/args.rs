use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dccnn::kernels::KernelSpec;
use dccnn::losses::LossSpec;
use dccnn::model::{KernelChoice, LayerConfig};

#[derive(Debug, Parser)]
#[command(
    name = "dccnn",
    version,
    about = "Convexified convolutional networks trained through the dual"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a layer-wise model and write it with a report.
    Train(TrainArgs),
    /// Score a model on a test split and report accuracy.
    Eval(EvalArgs),
    /// Check the dual solver against the primal oracle on seeded tiny instances.
    Verify(VerifyArgs),
    /// Print one prediction per input row.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelKind {
    Gaussian,
    Linear,
    Poly,
}

/// Where samples come from and how the split is drawn.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// IDX image file, or a CSV file with the label in the first column.
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file; required unless --data is a CSV file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Classes to keep. Two classes train a binary model with the first as +1.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub classes: Vec<u32>,
    /// Training samples, spread evenly over the classes.
    #[arg(long, default_value_t = 400)]
    pub n_train: usize,
    /// Test samples drawn disjointly from the training ones.
    #[arg(long, default_value_t = 400)]
    pub n_test: usize,
    /// Halve the image resolution by 2×2 averaging before training.
    #[arg(long)]
    pub downsample: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelKind,
    /// Gaussian width; the median heuristic over 1000 patch pairs when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub degree: u32,
    #[arg(long, default_value_t = 1.0)]
    pub offset: f64,
    #[arg(long, default_value = "hinge")]
    pub loss: String,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Comma-separated `filter:stride:padding` per layer.
    #[arg(long, default_value = "5:1:2")]
    pub layers_spec: String,
    /// Eigenvalue cutoff for filter recovery, in (0, 1].
    #[arg(long, default_value_t = 0.9)]
    pub threshold: f64,
    /// `width:stride` average pooling after every layer but the last.
    #[arg(long)]
    pub pool: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub sweeps: usize,
    /// Polish the greedy dual with barrier Newton steps.
    #[arg(long)]
    pub refine: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report path; defaults to the model path with a .json extension.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV file to append a result row to.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Dataset name for the CSV row; defaults to the data file stem.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 16)]
    pub max_n: usize,
    /// Run only this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace α by the box corner before auditing; the audit must then fail.
    #[arg(long, hide = true)]
    pub corrupt_alpha: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of feature rows, no label column.
    #[arg(long)]
    pub input: PathBuf,
}

/// A flag that failed validation.
#[derive(Debug)]
pub struct FlagError {
    pub flag: &'static str,
    pub reason: String,
}

impl std::fmt::Display for FlagError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "--{}: {}", self.flag, self.reason)
    }
}

impl std::error::Error for FlagError {}

fn flag(flag: &'static str, reason: impl Into<String>) -> FlagError {
    FlagError {
        flag,
        reason: reason.into(),
    }
}

/// Everything `train` needs, checked before any data is read.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub layers: Vec<LayerConfig>,
    pub loss: LossSpec,
    pub c: f64,
    pub threshold: f64,
    pub sweeps: usize,
    pub refine: bool,
}

pub const MEDIAN_PAIRS: usize = 1000;

fn triple(part: &str) -> Option<[usize; 3]> {
    let v: Vec<usize> = part.split(':').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

impl TrainArgs {
    pub fn validate(&self) -> Result<RunConfig, FlagError> {
        check_data(&self.data)?;
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(flag("threshold", format!("must be in (0, 1], got {}", self.threshold)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(flag("c", format!("must be positive, got {}", self.c)));
        }
        if self.sweeps == 0 {
            return Err(flag("sweeps", "must be at least 1"));
        }
        let loss: LossSpec = self
            .loss
            .parse()
            .map_err(|e: dccnn::Error| flag("loss", e.to_string()))?;
        let kernel = match self.kernel {
            KernelKind::Gaussian => match self.gamma {
                Some(gamma) => KernelChoice::Fixed(KernelSpec::GaussianRbf { gamma }),
                None => KernelChoice::GaussianMedian {
                    pairs: MEDIAN_PAIRS,
                    seed: self.data.seed,
                },
            },
            KernelKind::Linear => KernelChoice::Fixed(KernelSpec::Linear),
            KernelKind::Poly => KernelChoice::Fixed(KernelSpec::Polynomial {
                degree: self.degree,
                offset: self.offset,
            }),
        };
        if let KernelChoice::Fixed(spec) = &kernel {
            let name = if self.kernel == KernelKind::Gaussian {
                "gamma"
            } else {
                "kernel"
            };
            spec.validate().map_err(|e| flag(name, e.to_string()))?;
        }
        let pooling = match &self.pool {
            None => None,
            Some(p) => {
                let parts: Vec<usize> = p
                    .split(':')
                    .map(|s| s.trim().parse().ok())
                    .collect::<Option<_>>()
                    .ok_or_else(|| flag("pool", format!("expected width:stride, got {p:?}")))?;
                match parts[..] {
                    [w, s] if w > 0 && s > 0 => Some((w, s)),
                    _ => return Err(flag("pool", format!("expected positive width:stride, got {p:?}"))),
                }
            }
        };
        let specs: Vec<[usize; 3]> = self
            .layers_spec
            .split(',')
            .map(|part| {
                triple(part).ok_or_else(|| flag("layers-spec", format!("expected filter:stride:padding, got {part:?}")))
            })
            .collect::<Result<_, _>>()?;
        if pooling.is_some() && specs.len() < 2 {
            return Err(flag(
                "pool",
                "pooling applies between layers; give at least two in --layers-spec",
            ));
        }
        let count = specs.len();
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, [filter_width, stride, padding])| LayerConfig {
                kernel: kernel.clone(),
                filter_width,
                stride,
                padding,
                pooling: if i + 1 < count { pooling } else { None },
            })
            .collect();
        Ok(RunConfig {
            layers,
            loss,
            c: self.c,
            threshold: self.threshold,
            sweeps: self.sweeps,
            refine: self.refine,
        })
    }
}

pub fn check_data(data: &DataArgs) -> Result<(), FlagError> {
    if !data.data.exists() {
        return Err(flag("data", format!("{} does not exist", data.data.display())));
    }
    if !is_csv(&data.data) {
        match &data.labels {
            None => return Err(flag("labels", "required for IDX data")),
            Some(l) if !l.exists() => return Err(flag("labels", format!("{} does not exist", l.display()))),
            Some(_) => {}
        }
    }
    let mut sorted = data.classes.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != data.classes.len() || sorted.len() < 2 {
        return Err(flag("classes", "need at least two distinct classes"));
    }
    Ok(())
}

pub fn is_csv(path: &std::path::Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
