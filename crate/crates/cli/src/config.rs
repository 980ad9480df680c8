//! The JSON experiment configuration.
//!
//! One document drives one run. Every path inside it is resolved against the
//! directory that holds the configuration file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use loss_gap::empirical::CsvSchema;
use loss_gap::numerics::from_rows;
use loss_gap::{Dataset, PopulationSpec, ShiftScenario, TrueLinearModel, Vector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const DEFAULT_REPETITIONS: usize = 100;
pub const DEFAULT_BATCH_SIZE: usize = 1000;
pub const DEFAULT_MAX_K: usize = 10;
pub const DEFAULT_MC_SPECS: usize = 20;
pub const DEFAULT_MC_N: usize = 1_000_000;
pub const DEFAULT_MC_SEED: u64 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Path to a population JSON document, or the document inline.
    #[serde(default)]
    pub population: Option<Source<PopulationSpec>>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    /// Rows drawn per repetition when the data come from `population`.
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub noise_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub omit: Option<OmitConfig>,
    #[serde(default)]
    pub shift: Option<ShiftConfig>,
    #[serde(default)]
    pub reweight: Option<ReweightConfig>,
    #[serde(default)]
    pub mc: Option<McConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub group_column: String,
    pub group_mapping: BTreeMap<String, u8>,
    pub target_column: String,
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmitConfig {
    /// Feature indices in the order they are drowned; drawn from the master seed if absent.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
    /// Defaults to `0..=d`.
    #[serde(default)]
    pub k_values: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    #[serde(default)]
    pub scenario: Option<Source<ScenarioJson>>,
    #[serde(default = "default_max_k")]
    pub max_k: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Defaults to `batch_size`.
    #[serde(default)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioJson {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub noise_cov: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub alpha: f64,
}

impl ScenarioJson {
    pub fn build(&self) -> CliResult<ShiftScenario> {
        Ok(ShiftScenario::new(
            Vector::from_vec(self.mu.clone()),
            from_rows(&self.sigma)?,
            from_rows(&self.noise_cov)?,
            TrueLinearModel::new(Vector::from_vec(self.beta.clone()), self.alpha),
        )?)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightConfig {
    /// Rows in the resampled dataset; defaults to the input size.
    #[serde(default)]
    pub resample_size: Option<usize>,
    #[serde(default)]
    pub write_lp_debug: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default = "default_mc_specs")]
    pub specs: usize,
    #[serde(default = "default_mc_n")]
    pub n: usize,
    #[serde(default = "default_mc_seed")]
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { specs: DEFAULT_MC_SPECS, n: DEFAULT_MC_N, seed: DEFAULT_MC_SEED }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}
fn default_true() -> bool {
    true
}
fn default_max_k() -> usize {
    DEFAULT_MAX_K
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_mc_specs() -> usize {
    DEFAULT_MC_SPECS
}
fn default_mc_n() -> usize {
    DEFAULT_MC_N
}
fn default_mc_seed() -> u64 {
    DEFAULT_MC_SEED
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    /// Lowercase hex SHA-256 of the raw configuration bytes.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path.parent().unwrap_or(Path::new("")))
    }

    pub fn from_bytes(bytes: &[u8], base_dir: &Path) -> CliResult<Self> {
        let config: ExperimentConfig =
            serde_json::from_slice(bytes).map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
        if config.repetitions == 0 {
            return Err(CliError::config("repetitions must be at least 1"));
        }
        Ok(Self { config, base_dir: base_dir.to_path_buf(), hash: sha256_hex(bytes) })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn population(&self) -> CliResult<Option<PopulationSpec>> {
        match &self.config.population {
            None => Ok(None),
            Some(Source::Inline(p)) => Ok(Some(p.clone())),
            Some(Source::Path(p)) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                serde_json::from_str(&text)
                    .map(Some)
                    .map_err(|e| CliError::config(format!("{}: invalid population: {e}", path.display())))
            }
        }
    }

    pub fn require_population(&self) -> CliResult<PopulationSpec> {
        self.population()?.ok_or_else(|| CliError::config("this command needs a `population`"))
    }

    pub fn dataset(&self) -> CliResult<Option<Dataset>> {
        let Some(dc) = &self.config.dataset else {
            return Ok(None);
        };
        let path = self.resolve(&dc.path);
        let file = fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        let schema = CsvSchema {
            group_column: dc.group_column.clone(),
            group_mapping: dc.group_mapping.clone(),
            target_column: dc.target_column.clone(),
            feature_columns: dc.feature_columns.clone(),
        };
        Ok(Some(Dataset::from_csv(file, &schema)?))
    }

    pub fn scenario(&self) -> CliResult<Option<ShiftScenario>> {
        let Some(shift) = &self.config.shift else {
            return Ok(None);
        };
        match &shift.scenario {
            None => Ok(None),
            Some(Source::Inline(s)) => s.build().map(Some),
            Some(Source::Path(p)) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                let s: ScenarioJson = serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: invalid scenario: {e}", path.display())))?;
                s.build().map(Some)
            }
        }
    }

    pub fn noise_grid(&self) -> CliResult<Vec<f64>> {
        let grid = self.config.noise_grid.clone().ok_or_else(|| CliError::config("sweep-noise needs `noise_grid`"))?;
        if grid.is_empty() {
            return Err(CliError::config("`noise_grid` is empty"));
        }
        if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CliError::config(format!("`noise_grid` entries must be finite and >= 0, got {v}")));
        }
        Ok(grid)
    }
}
