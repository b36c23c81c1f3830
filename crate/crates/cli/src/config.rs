use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mrbm::{ActivationSpec, Architecture, GibbsMode, LossNorm};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconArg {
    Mean,
    Stochastic,
}

impl From<ReconArg> for GibbsMode {
    fn from(r: ReconArg) -> Self {
        match r {
            ReconArg::Mean => GibbsMode::MeanField,
            ReconArg::Stochastic => GibbsMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNormArg {
    Mean,
    Sum,
}

impl From<LossNormArg> for LossNorm {
    fn from(l: LossNormArg) -> Self {
        match l {
            LossNormArg::Mean => LossNorm::Mean,
            LossNormArg::Sum => LossNorm::Sum,
        }
    }
}

/// Every setting of a run. Echoed verbatim to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RunConfig {
    /// IDX image file or a directory of .pgm/.ppm images.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Checkpoint to read (generate, reconstruct, eval).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Layers, e.g. `conv:64:4:2,conv:128,dense:500`.
    #[arg(long, default_value = "dense:500")]
    pub arch: String,
    #[arg(long, default_value_t = 0.03)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Largest unit value N (1 gives binary units).
    #[arg(long = "n-levels", default_value_t = 255)]
    pub n_levels: u32,
    /// Activation scale k, a number or `1/N`.
    #[arg(long, default_value = "1.0")]
    pub k: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ReconArg::Mean)]
    pub recon: ReconArg,
    #[arg(long = "loss-norm", value_enum, default_value_t = LossNormArg::Mean)]
    pub loss_norm: LossNormArg,
    /// Gibbs steps per generated sample.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Number of images to generate or reconstruct.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Image shape `CxHxW` for dense-only models; inferred when omitted.
    #[arg(long)]
    pub shape: Option<String>,
}

impl RunConfig {
    pub fn k_value(&self) -> Result<f64, CliError> {
        match self.k.trim() {
            "1/N" | "1/n" => Ok(1.0 / f64::from(self.n_levels.max(1))),
            s => s.parse().map_err(|_| CliError::Usage(format!("--k expects a number or 1/N, got `{s}`"))),
        }
    }

    pub fn spec(&self) -> Result<ActivationSpec, CliError> {
        Ok(ActivationSpec::sigmoid(self.n_levels, self.k_value()?)?)
    }

    pub fn architecture(&self) -> Result<Architecture, CliError> {
        Ok(self.arch.parse()?)
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    pub fn model_path(&self) -> Result<&Path, CliError> {
        self.model.as_deref().ok_or_else(|| CliError::Usage("--model is required".into()))
    }
}

/// What `manifest.json` holds: enough to repeat the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            tool: "mrbm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}
