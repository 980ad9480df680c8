//! Persistence of the with-group residual gap as shifted batches accumulate.
//!
//! Training data for `K` is one batch from the initial distribution plus `K` batches
//! from the shifted one, so the initial distribution carries weight `1/(K+1)`. Test
//! data come from the shifted distribution. Batches are nested: the training set for
//! `K + 1` extends the one for `K` within a repetition.

use std::path::PathBuf;

use loss_gap::empirical::{empirical_report, ols_fit, sample_dataset, standardize};
use loss_gap::reweight::{build_reweight_lp, resample_by_weights, simplex_solve, write_weights_csv};
use loss_gap::shift::{batch_weight, persistence_curve};
use loss_gap::{Dataset, LpStatus, ObservationMode, PersistenceCurve, PopulationSpec, Seed};
use rayon::prelude::*;

use super::{mean_se, RunOptions};
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};
use crate::meta::{num, opt_num};

const INITIAL_TAG: u64 = 0;
const BATCH_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

pub const REPS_FILE: &str = "shift_reps.csv";
pub const PERSISTENCE_FILE: &str = "persistence.csv";
pub const ANALYTIC_FILE: &str = "persistence_analytic.csv";
pub const WEIGHTS_FILE: &str = "shift_weights.csv";

pub const REPS_HEADER: [&str; 10] =
    ["K", "t", "rep", "mode", "signed_sld_res", "sld_res", "sld_res_se", "beta_g", "squared_error", "n_train"];
pub const PERSISTENCE_HEADER: [&str; 10] =
    ["t", "K", "sld", "lower", "upper", "sld_no_group", "sld_se", "sld_no_group_se", "signed_sld", "reps"];

enum Source {
    Scenario { initial: PopulationSpec, shifted: PopulationSpec },
    Table { data: Dataset, weights: Vec<f64> },
}

impl Source {
    fn initial(&self, n: usize, seed: Seed) -> CliResult<Dataset> {
        Ok(match self {
            Source::Scenario { initial, .. } => sample_dataset(initial, n, seed)?,
            Source::Table { data, .. } => resample_by_weights(data, &vec![1.0; data.n()], n, seed)?,
        })
    }

    fn shifted(&self, n: usize, seed: Seed) -> CliResult<Dataset> {
        Ok(match self {
            Source::Scenario { shifted, .. } => sample_dataset(shifted, n, seed)?,
            Source::Table { data, weights } => resample_by_weights(data, weights, n, seed)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub k: usize,
    pub rep: usize,
    pub mode: ObservationMode,
    pub signed: f64,
    pub sld_res: f64,
    pub sld_res_se: f64,
    pub beta_g: f64,
    pub squared_error: f64,
    pub n_train: usize,
}

/// Aggregate at one `K`. `sld` and `sld_no_group` are `|mean signed gap|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceRow {
    pub t: f64,
    pub k: usize,
    pub sld: f64,
    pub sld_se: f64,
    pub signed: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sld_no_group: f64,
    pub sld_no_group_se: f64,
    pub reps: usize,
}

#[derive(Debug, Clone)]
pub struct ShiftOutput {
    pub rows: Vec<ShiftRow>,
    pub persistence: Vec<PersistenceRow>,
    pub analytic: Option<PersistenceCurve>,
    pub dir: PathBuf,
}

fn run_rep(source: &Source, max_k: usize, n: usize, n_test: usize, master: Seed, rep: usize) -> CliResult<Vec<ShiftRow>> {
    let seed = master.derive(rep as u64);
    let mut parts = vec![source.initial(n, seed.derive(INITIAL_TAG))?];
    let test = source.shifted(n_test, seed.derive(TEST_TAG))?;
    let mut rows = Vec::with_capacity(2 * (max_k + 1));
    for k in 0..=max_k {
        if k > 0 {
            parts.push(source.shifted(n, seed.derive(BATCH_TAG).derive(k as u64))?);
        }
        let train = Dataset::stack(&parts)?;
        for mode in ObservationMode::ALL {
            let p = ols_fit(&train, mode == ObservationMode::WithGroup)?;
            let r = empirical_report(&p, &test)?;
            rows.push(ShiftRow {
                k,
                rep,
                mode,
                signed: r.signed_sld_res,
                sld_res: r.sld_res,
                sld_res_se: r.std_errors.map(|s| s.sld_res).unwrap_or(0.0),
                beta_g: p.group_coef(),
                squared_error: r.squared_error,
                n_train: train.n(),
            });
        }
    }
    Ok(rows)
}

pub fn run(lc: &LoadedConfig, opts: &RunOptions) -> CliResult<ShiftOutput> {
    let cfg = lc.config.shift.clone().ok_or_else(|| CliError::config("shift needs a `shift` section"))?;
    if cfg.max_k < 1 {
        return Err(CliError::config("`shift.max_k` must be at least 1"));
    }
    if cfg.batch_size < 5 {
        return Err(CliError::config("`shift.batch_size` must be at least 5"));
    }
    let n_test = cfg.test_size.unwrap_or(cfg.batch_size);
    let scenario = lc.scenario()?;
    let mut sink = opts.sink(lc, "shift")?;
    sink.meta.push("repetitions", lc.config.repetitions);
    sink.meta.push("batch_size", cfg.batch_size);
    sink.meta.push("test_size", n_test);

    let source = match &scenario {
        Some(sc) => {
            sink.meta.push("source", "scenario");
            Source::Scenario { initial: sc.initial_population()?, shifted: sc.shifted_population()? }
        }
        None => {
            let data = lc
                .dataset()?
                .ok_or_else(|| CliError::config("shift needs `shift.scenario` or a `dataset`"))?;
            let data = if lc.config.standardize { standardize(&data, &data)?.0 } else { data };
            let lp = build_reweight_lp(&data)?;
            let sol = simplex_solve(&lp.problem)?;
            if sol.status != LpStatus::Optimal {
                return Err(CliError::Core(loss_gap::Error::InvalidArgument(format!(
                    "reweighting LP is {:?}",
                    sol.status
                ))));
            }
            let weights = lp.dataset_weights(&sol, data.n());
            sink.meta.push("source", "reweighted_dataset");
            sink.meta.push("standardize", lc.config.standardize);
            sink.meta.push("lp_objective", num(sol.objective_value));
            let mut f = sink.text_file(WEIGHTS_FILE)?;
            write_weights_csv(&mut f, &weights)?;
            Source::Table { data, weights }
        }
    };

    let master = Seed(lc.config.master_seed);
    let per_rep: Vec<Vec<ShiftRow>> = opts.install(|| {
        (0..lc.config.repetitions)
            .into_par_iter()
            .map(|rep| run_rep(&source, cfg.max_k, cfg.batch_size, n_test, master, rep))
            .collect::<CliResult<Vec<_>>>()
    })??;

    let per_k = 2;
    let mut rows = Vec::new();
    for k in 0..=cfg.max_k {
        for rep_rows in &per_rep {
            rows.extend(rep_rows[per_k * k..per_k * (k + 1)].iter().cloned());
        }
    }

    let analytic = scenario.as_ref().map(|sc| persistence_curve(sc, cfg.max_k)).transpose()?;
    let persistence: Vec<PersistenceRow> = (0..=cfg.max_k)
        .map(|k| {
            let signed = |mode| -> (Vec<f64>, f64) {
                let sel: Vec<&ShiftRow> = rows.iter().filter(|r| r.k == k && r.mode == mode).collect();
                (sel.iter().map(|r| r.signed).collect(), sel[0].sld_res_se)
            };
            let (wg, wg_se) = signed(ObservationMode::WithGroup);
            let (ng, ng_se) = signed(ObservationMode::NoGroup);
            let (wg_mean, wg_se) = mean_se(&wg, wg_se);
            let (ng_mean, ng_se) = mean_se(&ng, ng_se);
            let bound = analytic.as_ref().map(|c| &c.entries[k]);
            PersistenceRow {
                t: batch_weight(k),
                k,
                sld: wg_mean.abs(),
                sld_se: wg_se,
                signed: wg_mean,
                lower: bound.and_then(|e| e.lower),
                upper: bound.and_then(|e| e.upper),
                sld_no_group: ng_mean.abs(),
                sld_no_group_se: ng_se,
                reps: wg.len(),
            }
        })
        .collect();

    let mut w = sink.csv(REPS_FILE, &REPS_HEADER)?;
    for r in &rows {
        w.row([
            r.k.to_string(),
            num(batch_weight(r.k)),
            r.rep.to_string(),
            r.mode.label().to_string(),
            num(r.signed),
            num(r.sld_res),
            num(r.sld_res_se),
            num(r.beta_g),
            num(r.squared_error),
            r.n_train.to_string(),
        ])?;
    }
    w.finish()?;

    let mut w = sink.csv(PERSISTENCE_FILE, &PERSISTENCE_HEADER)?;
    for p in &persistence {
        w.row([
            num(p.t),
            p.k.to_string(),
            num(p.sld),
            opt_num(p.lower),
            opt_num(p.upper),
            num(p.sld_no_group),
            num(p.sld_se),
            num(p.sld_no_group_se),
            num(p.signed),
            p.reps.to_string(),
        ])?;
    }
    w.finish()?;

    if let Some(curve) = &analytic {
        let mut f = sink.text_file(ANALYTIC_FILE)?;
        curve.write_csv(&mut f)?;
    }

    Ok(ShiftOutput { rows, persistence, analytic, dir: sink.dir })
}
