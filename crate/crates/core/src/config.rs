//! Pipeline configuration: one TOML file shared by every stage.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calib::CalibrationConfig;
use crate::cluster::KMeansConfig;
use crate::cohort::{CovariateSchema, FeatureLayout, FilterCriteria, StaticFeature};
use crate::encoder::{Optimizer, SparsityConfig, TrainConfig, DEFAULT_LATENT_DIM};
use crate::error::{Error, Result};
use crate::mdp::{ActionSpace, DEFAULT_MIN_COUNT};
use crate::rng;
use crate::solver::DEFAULT_EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    #[default]
    Raw,
    SparseAe,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::SparseAe => "sparse_ae",
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Representation::Raw),
            "sparse_ae" | "sparse-ae" | "sparse-autoencoder" => Ok(Representation::SparseAe),
            other => Err(Error::Config(format!("unknown representation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub covariates: CovariateSchema,
}

impl Default for CohortSection {
    fn default() -> Self {
        Self {
            covariates: CovariateSchema::default_icu(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessingSection {
    pub min_age_years: f64,
    pub min_sofa: u32,
    pub max_missing_fraction: f64,
    /// Static covariates appended to every hourly state vector.
    pub state_statics: Vec<StaticFeature>,
}

impl Default for PreprocessingSection {
    fn default() -> Self {
        let f = FilterCriteria::default();
        Self {
            min_age_years: f.min_age_years,
            min_sofa: f.min_sofa,
            max_missing_fraction: f.max_missing_fraction,
            state_statics: StaticFeature::ALL.to_vec(),
        }
    }
}

impl PreprocessingSection {
    pub fn filter(&self) -> FilterCriteria {
        FilterCriteria {
            min_age_years: self.min_age_years,
            min_sofa: self.min_sofa,
            max_missing_fraction: self.max_missing_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub stratify: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSection {
    pub latent_dim: usize,
    /// Sparsity target `D`.
    pub sparsity_target: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub patience: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SparsityConfig::default();
        Self {
            latent_dim: DEFAULT_LATENT_DIM,
            sparsity_target: s.target,
            beta: s.beta,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            patience: t.patience,
        }
    }
}

impl EncoderSection {
    pub fn sparsity(&self) -> SparsityConfig {
        SparsityConfig {
            target: self.sparsity_target,
            beta: self.beta,
        }
    }

    /// Initialization and shuffling draw their own substreams of `master_seed`.
    pub fn train_config(&self, master_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: master_seed,
            optimizer: self.optimizer,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpSection {
    pub bin_edges: Vec<f64>,
    pub min_count: u64,
    pub gamma: f64,
}

impl Default for MdpSection {
    fn default() -> Self {
        Self {
            bin_edges: ActionSpace::default().bin_edges,
            min_count: DEFAULT_MIN_COUNT,
            gamma: 0.9,
        }
    }
}

impl MdpSection {
    pub fn action_space(&self) -> Result<ActionSpace> {
        ActionSpace::new(self.bin_edges.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub representation: Representation,
    pub cohort: CohortSection,
    pub preprocessing: PreprocessingSection,
    pub split: SplitSection,
    pub encoder: EncoderSection,
    pub clustering: KMeansConfig,
    pub mdp: MdpSection,
    pub solver: SolverSection,
    pub calibration: CalibrationConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cohort.covariates.is_empty() {
            return bad("cohort.covariates must not be empty".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad(format!(
                "split.test_fraction must be in (0, 1), got {}",
                self.split.test_fraction
            ));
        }
        if self.encoder.latent_dim == 0 {
            return bad("encoder.latent_dim must be positive".into());
        }
        if self.clustering.k == 0 {
            return bad("clustering.k must be positive".into());
        }
        if !(self.mdp.gamma >= 0.0 && self.mdp.gamma < 1.0) {
            return bad(format!(
                "mdp.gamma must be in [0, 1), got {}",
                self.mdp.gamma
            ));
        }
        if self.mdp.min_count == 0 {
            return bad("mdp.min_count must be at least 1".into());
        }
        if !(self.solver.epsilon > 0.0) {
            return bad("solver.epsilon must be positive".into());
        }
        if self.calibration.n_bins < 2 {
            return bad("calibration.n_bins must be at least 2".into());
        }
        self.mdp
            .action_space()
            .map_err(|e| Error::Config(format!("mdp.bin_edges: {e}")))?;
        self.encoder
            .sparsity()
            .validate()
            .map_err(|e| Error::Config(format!("encoder: {e}")))?;
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            covariates: self.cohort.covariates.clone(),
            statics: self.preprocessing.state_statics.clone(),
        }
    }

    pub fn split_seed(&self) -> u64 {
        rng::derive_seed(self.seed, rng::SPLIT)
    }

    /// SHA-256 over the canonical JSON form, so formatting and key order in
    /// the TOML file do not matter.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(canonical))
    }
}
