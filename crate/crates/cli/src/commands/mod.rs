pub mod analytic;
pub mod mc;
pub mod reweight;
pub mod shift;
pub mod sweep;

use std::path::PathBuf;

use loss_gap::empirical::sample_dataset;
use loss_gap::{Dataset, PopulationSpec, Seed};

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::meta::{Metadata, OutputSink};

/// Options that come from the command line rather than the configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
    /// Overrides the configured output directory.
    pub output_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn with_jobs(jobs: usize) -> Self {
        Self { jobs: Some(jobs), output_dir: None }
    }

    /// Runs `f` on a dedicated pool so `--jobs` never leaks into the global pool.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                return Err(CliError::config("--jobs must be at least 1"));
            }
            b = b.num_threads(j);
        }
        let pool = b.build().map_err(|e| CliError::config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }

    pub(crate) fn sink(&self, lc: &LoadedConfig, command: &str) -> CliResult<OutputSink> {
        let dir = self.output_dir.clone().unwrap_or_else(|| lc.output_dir());
        OutputSink::create(dir, Metadata::new(command, lc.config.master_seed, &lc.hash))
    }
}

/// Where experiment rows come from: fresh draws from a population, or a fixed table.
#[derive(Debug, Clone)]
pub enum DataSource {
    Population { pop: PopulationSpec, n: usize },
    Table(Dataset),
}

impl DataSource {
    pub fn from_config(lc: &LoadedConfig) -> CliResult<Self> {
        let pop = lc.population()?;
        let table = lc.dataset()?;
        match (pop, table) {
            (Some(_), Some(_)) => Err(CliError::config("give either `population` or `dataset`, not both")),
            (None, None) => Err(CliError::config("this command needs a `population` or a `dataset`")),
            (None, Some(ds)) => Ok(DataSource::Table(ds)),
            (Some(pop), None) => {
                let n = lc
                    .config
                    .sample_size
                    .ok_or_else(|| CliError::config("`sample_size` is required with `population`"))?;
                if n == 0 {
                    return Err(CliError::config("`sample_size` must be at least 1"));
                }
                Ok(DataSource::Population { pop, n })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DataSource::Population { pop, .. } => pop.dim(),
            DataSource::Table(ds) => ds.dim(),
        }
    }

    /// A table source ignores the seed.
    pub fn draw(&self, seed: Seed) -> CliResult<Dataset> {
        match self {
            DataSource::Population { pop, n } => Ok(sample_dataset(pop, *n, seed)?),
            DataSource::Table(ds) => Ok(ds.clone()),
        }
    }
}

/// Mean and standard error of the mean over repetitions.
///
/// With a single repetition the spread is unknown and `fallback_se` is used instead.
pub fn mean_se(values: &[f64], fallback_se: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, fallback_se);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
