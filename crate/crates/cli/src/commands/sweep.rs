//! Noise and feature-omission sweeps.
//!
//! Each repetition draws (or copies) a dataset, splits it 80/20, optionally
//! standardizes on the training split, and then for every grid level perturbs both
//! splits, fits the two least-squares predictors on train and reports on test. The
//! split and the perturbation streams are shared across levels within a repetition,
//! so neighbouring levels differ only by the perturbation itself.

use std::path::PathBuf;

use loss_gap::empirical::{inject_noise, ols_fit, omit_features, split_80_20, standardize};
use loss_gap::{CldBasis, Dataset, DiscrepancyReport, ObservationMode, Seed};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{mean_se, DataSource, RunOptions};
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::meta::num;

const SAMPLE_TAG: u64 = 0;
const SPLIT_TAG: u64 = 1;
const TRAIN_NOISE_TAG: u64 = 2;
const TEST_NOISE_TAG: u64 = 3;
const ORDER_TAG: u64 = 0x6f72_6465_72;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Noise,
    Omit,
}

impl SweepKind {
    pub fn command(self) -> &'static str {
        match self {
            SweepKind::Noise => "sweep-noise",
            SweepKind::Omit => "sweep-omit",
        }
    }

    pub fn level_column(self) -> &'static str {
        match self {
            SweepKind::Noise => "sigma_sq",
            SweepKind::Omit => "k",
        }
    }

    pub fn rows_file(self) -> &'static str {
        match self {
            SweepKind::Noise => "sweep_noise.csv",
            SweepKind::Omit => "sweep_omit.csv",
        }
    }

    pub fn summary_file(self) -> &'static str {
        match self {
            SweepKind::Noise => "sweep_noise_summary.csv",
            SweepKind::Omit => "sweep_omit_summary.csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Level {
    NoiseVariance(f64),
    Omitted(usize),
}

impl Level {
    pub fn value(self) -> f64 {
        match self {
            Level::NoiseVariance(s) => s,
            Level::Omitted(k) => k as f64,
        }
    }

    fn label(self) -> String {
        match self {
            Level::NoiseVariance(s) => num(s),
            Level::Omitted(k) => k.to_string(),
        }
    }
}

/// One fitted predictor evaluated on one repetition's test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub level: Level,
    pub rep: usize,
    pub report: DiscrepancyReport,
    pub beta_g: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Aggregate over repetitions at one `(level, mode)`.
///
/// `sld_res` is `|mean signed gap|`, which is what converges to the population
/// discrepancy; `sld_res_rep_mean` averages the per-repetition absolute values and
/// is biased upward when the gap is small relative to its noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub level: Level,
    pub mode: ObservationMode,
    pub reps: usize,
    pub sld_res: f64,
    pub sld_res_se: f64,
    pub signed_sld_res: f64,
    pub sld_res_rep_mean: f64,
    pub sld_sq: f64,
    pub sld_sq_se: f64,
    pub cld_res: f64,
    pub cld_sq: f64,
    pub cld_basis: CldBasis,
    pub squared_error: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub kind: SweepKind,
    pub order: Option<Vec<usize>>,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub rows_path: PathBuf,
    pub summary_path: PathBuf,
}

pub const ROW_HEADER: [&str; 15] = [
    "level",
    "rep",
    "mode",
    "sld_res",
    "sld_res_se",
    "signed_sld_res",
    "sld_sq",
    "sld_sq_se",
    "cld_res",
    "cld_sq",
    "cld_sq_se",
    "cld_basis",
    "beta_g",
    "squared_error",
    "n_test",
];

pub const SUMMARY_HEADER: [&str; 13] = [
    "level",
    "mode",
    "reps",
    "sld_res",
    "sld_res_se",
    "signed_sld_res",
    "sld_res_rep_mean",
    "sld_sq",
    "sld_sq_se",
    "cld_res",
    "cld_sq",
    "cld_basis",
    "squared_error",
];

fn header(kind: SweepKind, base: &[&'static str]) -> Vec<&'static str> {
    let mut h = base.to_vec();
    h[0] = kind.level_column();
    h
}

fn basis_label(b: CldBasis) -> &'static str {
    match b {
        CldBasis::Exact => "exact",
        CldBasis::Latent => "latent",
        CldBasis::Proxy => "proxy",
    }
}

/// The omission order: configured, or a permutation drawn once from the master seed.
pub fn omission_order(lc: &LoadedConfig, d: usize) -> CliResult<Vec<usize>> {
    if let Some(order) = lc.config.omit.as_ref().and_then(|o| o.order.clone()) {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..d).collect::<Vec<_>>() {
            return Err(CliError::config(format!("`omit.order` must be a permutation of 0..{d}")));
        }
        return Ok(order);
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut Seed(lc.config.master_seed).derive(ORDER_TAG).rng(0, 0));
    Ok(order)
}

fn levels(lc: &LoadedConfig, kind: SweepKind, d: usize) -> CliResult<Vec<Level>> {
    match kind {
        SweepKind::Noise => Ok(lc.noise_grid()?.into_iter().map(Level::NoiseVariance).collect()),
        SweepKind::Omit => {
            let ks = lc.config.omit.as_ref().and_then(|o| o.k_values.clone()).unwrap_or_else(|| (0..=d).collect());
            if ks.is_empty() {
                return Err(CliError::config("`omit.k_values` is empty"));
            }
            if let Some(k) = ks.iter().find(|&&k| k > d) {
                return Err(CliError::config(format!("cannot omit {k} of {d} features")));
            }
            Ok(ks.into_iter().map(Level::Omitted).collect())
        }
    }
}

fn perturb(ds: &Dataset, level: Level, order: &[usize], seed: Seed) -> CliResult<Dataset> {
    Ok(match level {
        Level::NoiseVariance(s) => inject_noise(ds, s, seed)?,
        Level::Omitted(k) => omit_features(ds, order, k, seed)?,
    })
}

fn run_rep(
    source: &DataSource,
    levels: &[Level],
    order: &[usize],
    do_standardize: bool,
    master: Seed,
    rep: usize,
) -> CliResult<Vec<SweepRow>> {
    let rep_seed = master.derive(rep as u64);
    let ds = source.draw(rep_seed.derive(SAMPLE_TAG))?;
    let (train, test) = split_80_20(&ds, rep_seed.derive(SPLIT_TAG))?;
    let (train, test) = if do_standardize { standardize(&train, &test)? } else { (train, test) };
    let mut rows = Vec::with_capacity(2 * levels.len());
    for &level in levels {
        let tr = perturb(&train, level, order, rep_seed.derive(TRAIN_NOISE_TAG))?;
        let te = perturb(&test, level, order, rep_seed.derive(TEST_NOISE_TAG))?;
        for mode in ObservationMode::ALL {
            let predictor = ols_fit(&tr, mode == ObservationMode::WithGroup)?;
            let report = loss_gap::empirical::empirical_report(&predictor, &te)?;
            rows.push(SweepRow {
                level,
                rep,
                beta_g: predictor.group_coef(),
                report,
                n_train: tr.n(),
                n_test: te.n(),
            });
        }
    }
    Ok(rows)
}

fn std_errors(r: &DiscrepancyReport) -> (f64, f64, f64) {
    r.std_errors.map(|s| (s.sld_res, s.sld_sq, s.cld_sq)).unwrap_or_default()
}

fn summarize(level: Level, mode: ObservationMode, sel: &[&SweepRow]) -> SweepSummary {
    let col = |f: fn(&SweepRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let mean = |f: fn(&SweepRow) -> f64| mean_se(&col(f), 0.0).0;
    let (se_res, se_sq, _) = std_errors(&sel[0].report);
    let (signed, signed_se) = mean_se(&col(|r| r.report.signed_sld_res), se_res);
    let (sq, sq_se) = mean_se(&col(|r| r.report.sld_sq), se_sq);
    SweepSummary {
        level,
        mode,
        reps: sel.len(),
        sld_res: signed.abs(),
        sld_res_se: signed_se,
        signed_sld_res: signed,
        sld_res_rep_mean: mean(|r| r.report.sld_res),
        sld_sq: sq,
        sld_sq_se: sq_se,
        cld_res: mean(|r| r.report.cld_res),
        cld_sq: mean(|r| r.report.cld_sq),
        cld_basis: sel[0].report.cld_basis,
        squared_error: mean(|r| r.report.squared_error),
    }
}

pub fn run(lc: &LoadedConfig, opts: &RunOptions, kind: SweepKind) -> CliResult<SweepOutput> {
    let source = DataSource::from_config(lc)?;
    let d = source.dim();
    let levels = levels(lc, kind, d)?;
    let order = match kind {
        SweepKind::Omit => omission_order(lc, d)?,
        SweepKind::Noise => (0..d).collect(),
    };
    let master = Seed(lc.config.master_seed);
    let reps = lc.config.repetitions;
    let standardize = lc.config.standardize;
    let per_rep: Vec<Vec<SweepRow>> = opts.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|rep| run_rep(&source, &levels, &order, standardize, master, rep))
            .collect::<CliResult<Vec<_>>>()
    })??;

    // level-major, then repetition, then mode
    let mut rows: Vec<SweepRow> = Vec::with_capacity(reps * levels.len() * 2);
    for li in 0..levels.len() {
        for rep_rows in &per_rep {
            rows.extend(rep_rows[2 * li..2 * li + 2].iter().cloned());
        }
    }
    let block = 2 * reps;
    let mut summary = Vec::with_capacity(2 * levels.len());
    for (li, &level) in levels.iter().enumerate() {
        for mode in ObservationMode::ALL {
            let sel: Vec<&SweepRow> =
                rows[li * block..(li + 1) * block].iter().filter(|r| r.report.mode == mode).collect();
            summary.push(summarize(level, mode, &sel));
        }
    }

    let mut sink = opts.sink(lc, kind.command())?;
    sink.meta.push("repetitions", reps);
    sink.meta.push("standardize", standardize);
    if kind == SweepKind::Omit {
        let joined: Vec<String> = order.iter().map(|j| j.to_string()).collect();
        sink.meta.push("omit_order", joined.join(" "));
        sink.meta.push("omit_variance", num(loss_gap::empirical::OMIT_VARIANCE));
    }

    let mut w = sink.csv(kind.rows_file(), &header(kind, &ROW_HEADER))?;
    for r in &rows {
        let (se_res, se_sq, se_cld) = std_errors(&r.report);
        w.row([
            r.level.label(),
            r.rep.to_string(),
            r.report.mode.label().to_string(),
            num(r.report.sld_res),
            num(se_res),
            num(r.report.signed_sld_res),
            num(r.report.sld_sq),
            num(se_sq),
            num(r.report.cld_res),
            num(r.report.cld_sq),
            num(se_cld),
            basis_label(r.report.cld_basis).to_string(),
            num(r.beta_g),
            num(r.report.squared_error),
            r.n_test.to_string(),
        ])?;
    }
    let rows_path = w.finish()?;

    let mut w = sink.csv(kind.summary_file(), &header(kind, &SUMMARY_HEADER))?;
    for s in &summary {
        w.row([
            s.level.label(),
            s.mode.label().to_string(),
            s.reps.to_string(),
            num(s.sld_res),
            num(s.sld_res_se),
            num(s.signed_sld_res),
            num(s.sld_res_rep_mean),
            num(s.sld_sq),
            num(s.sld_sq_se),
            num(s.cld_res),
            num(s.cld_sq),
            basis_label(s.cld_basis).to_string(),
            num(s.squared_error),
        ])?;
    }
    let summary_path = w.finish()?;

    Ok(SweepOutput {
        kind,
        order: (kind == SweepKind::Omit).then_some(order),
        rows,
        summary,
        rows_path,
        summary_path,
    })
}
