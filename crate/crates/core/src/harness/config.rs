use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::data::{load_idx, make_blobs, stratified_split, DatasetSplit};
use crate::metrics::{FeatureExtractor, DEFAULT_EVAL_N};
use crate::model::{AdamConfig, LATENT_FLOOR};
use crate::pruning::PruneStrategy;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Adaptive latent compression.
    #[default]
    Ald,
    Fixed,
    Grid,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ald => "ald",
            Mode::Fixed => "fixed",
            Mode::Grid => "grid",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ald" => Ok(Mode::Ald),
            "fixed" => Ok(Mode::Fixed),
            "grid" => Ok(Mode::Grid),
            other => Err(Error::Config(format!("unknown mode {other:?}; expected ald, fixed or grid"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSpec {
    Blobs {
        n_per_class: usize,
        k_classes: usize,
        d: usize,
        spread: f64,
        seed: u64,
    },
    /// IDX image/label files. Without separate validation files the loaded
    /// set is split 80/20 per class.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        val_labels: Option<PathBuf>,
        /// Defaults to one more than the largest label.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_classes: Option<usize>,
        /// Keep only the first rows of the training set.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_train: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            n_per_class: 250,
            k_classes: 4,
            d: 64,
            spread: 0.1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<DatasetSplit> {
        match self {
            DatasetSpec::Blobs {
                n_per_class,
                k_classes,
                d,
                spread,
                seed,
            } => make_blobs(*n_per_class, *k_classes, *d, *spread, *seed),
            DatasetSpec::Idx {
                images,
                labels,
                val_images,
                val_labels,
                k_classes,
                max_train,
            } => {
                let (x, y) = load_idx(images, labels)?;
                let val = match (val_images, val_labels) {
                    (Some(vi), Some(vl)) => Some(load_idx(vi, vl)?),
                    (None, None) => None,
                    _ => return Err(Error::Config("validation images and labels must be given together".into())),
                };
                let k = match k_classes {
                    Some(k) => *k,
                    None => y.iter().chain(val.iter().flat_map(|v| &v.1)).max().map_or(0, |m| m + 1),
                };
                let split = match val {
                    Some((vx, vy)) => DatasetSplit::new(x, y, vx, vy, k)?,
                    None => stratified_split(&x, &y, k, 0.8)?,
                };
                Ok(match max_train {
                    Some(n) => split.truncate_train(*n),
                    None => split,
                })
            }
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: DatasetSpec,
    pub init_dim: usize,
    pub fixed_dims: Vec<usize>,
    pub hidden: usize,
    #[serde(flatten)]
    pub controller: ControllerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_seed: u64,
    pub eval_n: usize,
    pub extractor: FeatureExtractor,
    pub prune_strategy: PruneStrategy,
    /// Grid mode runs seeds `seed .. seed + num_seeds`.
    pub num_seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ald,
            dataset: DatasetSpec::default(),
            init_dim: 64,
            fixed_dims: Vec::new(),
            hidden: 400,
            controller: ControllerConfig::default(),
            epochs: 200,
            batch_size: 128,
            lr: AdamConfig::default().lr,
            seed: 0,
            eval_seed: 1,
            eval_n: DEFAULT_EVAL_N,
            extractor: FeatureExtractor::default(),
            prune_strategy: PruneStrategy::Random,
            num_seeds: 1,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io("reading config", path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.controller.validate()?;
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.eval_n < 2 {
            return bad("eval_n must be at least 2".into());
        }
        if self.num_seeds == 0 {
            return bad("num_seeds must be at least 1".into());
        }
        if let Some(&d) = self.fixed_dims.iter().find(|&&d| d < LATENT_FLOOR) {
            return bad(format!("latent dim {d} is below the floor of {LATENT_FLOOR}"));
        }
        match self.mode {
            Mode::Ald if self.init_dim < LATENT_FLOOR => {
                bad(format!("init dim {} is below the floor of {LATENT_FLOOR}", self.init_dim))
            }
            Mode::Fixed if self.fixed_dims.len() != 1 => {
                bad(format!("fixed mode needs exactly one dim, got {:?}", self.fixed_dims))
            }
            Mode::Grid if self.fixed_dims.len() < 3 => {
                bad(format!("grid mode needs at least 3 dims, got {:?}", self.fixed_dims))
            }
            _ => Ok(()),
        }
    }

    /// A fixed-mode copy of this config at latent size `dim`.
    pub fn fixed_at(&self, dim: usize, seed: u64) -> RunConfig {
        RunConfig {
            mode: Mode::Fixed,
            fixed_dims: vec![dim],
            seed,
            num_seeds: 1,
            ..self.clone()
        }
    }

    pub(crate) fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}
