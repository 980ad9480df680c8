//! Closed-form reports for a population: both predictors, both noise ratios and the
//! infinite-noise limits. No randomness is involved.

use std::path::PathBuf;

use loss_gap::discrepancy::{analytic_report, infinite_noise_report};
use loss_gap::estimators::{fit_population, lambda_no_group, lambda_with_group};
use loss_gap::numerics::to_rows;
use loss_gap::{DiscrepancyReport, LinearPredictor, ObservationMode, PopulationSpec};
use serde::Serialize;

use super::RunOptions;
use crate::config::LoadedConfig;
use crate::error::CliResult;

pub const FILE: &str = "analytic.json";

#[derive(Debug, Clone, Serialize)]
pub struct Predictors {
    pub no_group: LinearPredictor,
    pub with_group: LinearPredictor,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyticOutput {
    pub population: PopulationSpec,
    pub lambda: Vec<Vec<f64>>,
    pub lambda_prime: Vec<Vec<f64>>,
    pub predictors: Predictors,
    pub reports: Vec<DiscrepancyReport>,
    pub infinite_noise: Vec<DiscrepancyReport>,
}

pub fn compute(pop: &PopulationSpec) -> CliResult<AnalyticOutput> {
    let reports = ObservationMode::ALL
        .iter()
        .map(|&m| analytic_report(pop, m))
        .collect::<loss_gap::Result<Vec<_>>>()?;
    Ok(AnalyticOutput {
        population: pop.clone(),
        lambda: to_rows(lambda_no_group(pop)?.matrix()),
        lambda_prime: to_rows(lambda_with_group(pop)?.matrix()),
        predictors: Predictors {
            no_group: fit_population(pop, ObservationMode::NoGroup)?,
            with_group: fit_population(pop, ObservationMode::WithGroup)?,
        },
        reports,
        infinite_noise: ObservationMode::ALL.iter().map(|&m| infinite_noise_report(pop, m)).collect(),
    })
}

pub fn run(lc: &LoadedConfig, opts: &RunOptions) -> CliResult<(AnalyticOutput, PathBuf)> {
    let pop = lc.require_population()?;
    let out = compute(&pop)?;
    let sink = opts.sink(lc, "analytic")?;
    let path = sink.json(FILE, &out)?;
    Ok((out, path))
}
