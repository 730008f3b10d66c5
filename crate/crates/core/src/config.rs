//! Experiment configuration: a sectioned TOML file whose values can be
//! overridden from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::nn::AdamConfig;
use crate::noise::PairStrategy;
use crate::train::{ModelConfig, Selection, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Inner-product loss on clean posteriors, no transition layer.
    Mcl,
    /// Transition layer fixed to the stage-one estimate.
    MnsEstimatedT,
    /// Transition layer fixed to the true matrix.
    MnsTrueT,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mcl => "mcl",
            Method::MnsEstimatedT => "mns_estimated_t",
            Method::MnsTrueT => "mns_true_t",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mcl" => Ok(Method::Mcl),
            "mns_estimated_t" | "mns-estimated-t" => Ok(Method::MnsEstimatedT),
            "mns_true_t" | "mns-true-t" => Ok(Method::MnsTrueT),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Gaussian clusters on simplex vertices; the test set is a fresh draw.
    Blobs {
        #[serde(default = "blob_classes")]
        classes: usize,
        #[serde(default = "blob_per_class")]
        per_class: usize,
        #[serde(default = "blob_dim")]
        dim: usize,
        #[serde(default = "blob_separation")]
        separation: f64,
        #[serde(default = "blob_spread")]
        spread: f64,
        #[serde(default = "blob_per_class")]
        test_per_class: usize,
    },
    /// Columnar text datasets with clean labels.
    File { train: PathBuf, test: PathBuf },
    /// IDX image/label files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        limit: Option<usize>,
        test_limit: Option<usize>,
        #[serde(default = "default_true")]
        normalize: bool,
    },
}

fn default_true() -> bool {
    true
}

fn blob_classes() -> usize {
    3
}

fn blob_per_class() -> usize {
    1000
}

fn blob_dim() -> usize {
    8
}

fn blob_separation() -> f64 {
    4.0
}

fn blob_spread() -> f64 {
    1.0
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Blobs {
            classes: blob_classes(),
            per_class: blob_per_class(),
            dim: blob_dim(),
            separation: blob_separation(),
            spread: blob_spread(),
            test_per_class: blob_per_class(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub rho: f64,
    /// Optional explicit transition matrix file; overrides `rho`.
    pub transition: Option<PathBuf>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            rho: 0.3,
            transition: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub pairing: PairStrategy,
    pub validation_fraction: f64,
    /// Cap on pre-materialized validation pairs.
    pub validation_pairs: usize,
    pub pos_weight: f64,
    /// τ for the validation pair error; defaults to 1/C.
    pub threshold: Option<f64>,
    /// Initialize stage two from the stage-one model instead of afresh.
    pub warm_start: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 128,
            epochs: 30,
            pairing: PairStrategy::AllPairs,
            validation_fraction: 0.1,
            validation_pairs: 50_000,
            pos_weight: 1.0,
            threshold: None,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub anchors_per_class: usize,
    pub percentile: Option<f64>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            anchors_per_class: 5,
            percentile: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub training: TrainingConfig,
    pub estimation: EstimationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            method: Method::MnsEstimatedT,
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            training: TrainingConfig::default(),
            estimation: EstimationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.training;
        if !(t.validation_fraction > 0.0 && t.validation_fraction < 1.0) {
            return Err(Error::invalid("validation fraction must lie in (0, 1)"));
        }
        if t.epochs == 0 || t.batch_size < 2 || t.validation_pairs == 0 {
            return Err(Error::invalid("epochs, batch size (>= 2) and validation pairs must be positive"));
        }
        if !(t.pos_weight > 0.0) {
            return Err(Error::invalid("pos_weight must be positive"));
        }
        if self.noise.transition.is_none() && !(0.0..1.0).contains(&self.noise.rho) {
            return Err(Error::invalid("rho must lie in [0, 1)"));
        }
        if self.estimation.anchors_per_class == 0 {
            return Err(Error::invalid("anchors_per_class must be positive"));
        }
        self.optimizer.validate()?;
        if let DataConfig::Blobs {
            classes,
            per_class,
            dim,
            separation,
            spread,
            test_per_class,
        } = &self.data
        {
            if *classes < 2 || *per_class == 0 || *dim == 0 || *test_per_class == 0 {
                return Err(Error::invalid("blob sizes must be positive with at least 2 classes"));
            }
            if !(*separation > 0.0 && *spread >= 0.0) {
                return Err(Error::invalid("blob separation must be positive and spread non-negative"));
            }
        }
        Ok(())
    }

    pub(crate) fn train_config(&self, classes: usize, stage: Stage, selection: Selection) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            batch_size: self.training.batch_size,
            epochs: self.training.epochs,
            pairing: self.training.pairing,
            pos_weight: self.training.pos_weight,
            threshold: self.training.threshold.unwrap_or(1.0 / classes as f64),
            selection,
            stage,
        }
    }
}
