//! The JSON run configuration shared by every subcommand.
//!
//! Every key is optional; a missing key takes the default shown on its field.
//! Unknown keys are rejected.

use pfgn::data::{DatasetConfig, Split};
use pfgn::training::TrainConfig;
use pfgn::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for weight initialization, batching and sampling. Default 0.
    pub seed: u64,
    /// Seed of synthetic datasets, both for `gen-data` and for datasets built
    /// on the fly when no `--dataset` directory is given. Default 0.
    pub data_seed: u64,
    /// Synthetic dataset knobs: 200 geometries of 1024 points, 128 on the surface.
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    /// Optimizer and schedule: fm, lr 1e-3, batch 32, 1 epoch, no step cap.
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Divides every hidden width (rounded up). 1 gives the reference network.
    pub width_divisor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { width_divisor: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Euler steps of the flow-matching sampler. Default 1000.
    pub flow_steps: usize,
    /// Diffusion steps `T` used for training and sampling. Default 1000.
    pub diffusion_steps: usize,
    /// Offset `r` of the cosine noise schedule. Default 0.008.
    pub offset: f64,
    /// Width of the sinusoidal time embedding. Default 32.
    pub embed_dims: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            flow_steps: pfgn::flow_matching::DEFAULT_STEPS,
            diffusion_steps: pfgn::diffusion::DEFAULT_STEPS,
            offset: pfgn::diffusion::DEFAULT_OFFSET,
            embed_dims: pfgn::conditioning::DEFAULT_EMBED_DIMS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Realizations per geometry. Default 100.
    pub samples: usize,
    /// Split evaluated by `eval`, `robust` and `sample`. Default "test".
    pub split: String,
    /// Point-drop fractions of the robustness study. Default [0.05, 0.10, 0.15].
    pub fractions: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples: 100, split: "test".into(), fractions: vec![0.05, 0.10, 0.15] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory written by `gen-data`. When absent the dataset is
    /// regenerated in memory from `dataset` and `data_seed`.
    pub dataset: Option<PathBuf>,
    /// Checkpoint read by `sample`, `eval` and `robust`.
    pub checkpoint: Option<PathBuf>,
    /// Output directory. Default "out".
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn split(&self) -> Result<Split> {
        self.eval.split.parse()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Checks the knobs that are not validated by the library itself.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.split()?;
        if self.model.width_divisor == 0 {
            return Err(Error::Config("model.width_divisor must be positive".into()));
        }
        if self.sampler.flow_steps == 0 {
            return Err(Error::Config("sampler.flow_steps must be positive".into()));
        }
        if self.eval.samples == 0 {
            return Err(Error::Config("eval.samples must be positive".into()));
        }
        if self.eval.fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
            return Err(Error::Config(format!("drop fractions {:?} must lie in [0, 1)", self.eval.fractions)));
        }
        pfgn::conditioning::TimeEmbedding::new(self.sampler.embed_dims)?;
        pfgn::diffusion::NoiseSchedule::new(self.sampler.diffusion_steps, self.sampler.offset)?;
        Ok(())
    }
}
