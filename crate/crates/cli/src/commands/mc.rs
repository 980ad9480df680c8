//! Analytic-versus-sampling oracle suite.
//!
//! For each seeded random population the closed-form reports are compared with
//! empirical reports of the same population predictors on a large sample, and the
//! closed-form coefficients with least squares fitted on that sample.

use std::path::PathBuf;

use loss_gap::discrepancy::analytic_report;
use loss_gap::empirical::{empirical_report, ols_fit_detailed, sample_dataset};
use loss_gap::estimators::fit_population;
use loss_gap::{fixtures, NoiseFamily, ObservationMode, Seed};
use rayon::prelude::*;

use super::RunOptions;
use crate::config::{sha256_hex, LoadedConfig, McConfig};
use crate::error::{CliError, CliResult};
use crate::meta::{num, Metadata, OutputSink};

pub const FILE: &str = "mc_validate.csv";
pub const HEADER: [&str; 11] =
    ["spec", "dim", "noise", "mode", "quantity", "analytic", "empirical", "se", "tolerance", "pass", "family"];

/// Relative tolerance and SE multiple for report metrics.
pub const METRIC_REL_TOL: f64 = 0.01;
pub const METRIC_SE_MULT: f64 = 3.0;
/// Relative tolerance and SE multiple for fitted coefficients. The multiple is wider
/// because a suite run compares a few hundred coefficients at once.
pub const COEF_REL_TOL: f64 = 0.005;
pub const COEF_SE_MULT: f64 = 4.0;

/// Which family of comparison a check belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckFamily {
    /// Analytic metric against its sample estimate.
    Metric,
    /// A closed-form entry that must be exactly zero.
    StructuralZero,
    /// Closed-form coefficient against least squares on the sample.
    Coefficient,
}

impl CheckFamily {
    fn label(self) -> &'static str {
        match self {
            CheckFamily::Metric => "metric",
            CheckFamily::StructuralZero => "structural_zero",
            CheckFamily::Coefficient => "coefficient",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McCheck {
    pub spec: usize,
    pub dim: usize,
    pub noise: &'static str,
    pub mode: ObservationMode,
    pub quantity: String,
    pub family: CheckFamily,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl McCheck {
    pub fn line(&self) -> String {
        format!(
            "{} spec={} d={} noise={} mode={} {}={} analytic={} empirical={} se={} tol={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.spec,
            self.dim,
            self.noise,
            self.mode.label(),
            self.family.label(),
            self.quantity,
            num(self.analytic),
            num(self.empirical),
            num(self.se),
            num(self.tolerance),
        )
    }
}

#[derive(Debug, Clone)]
pub struct McOutput {
    pub checks: Vec<McCheck>,
    pub path: Option<PathBuf>,
}

impl McOutput {
    pub fn failures(&self) -> impl Iterator<Item = &McCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.failures().next().is_none()
    }
}

fn noise_label(f: &NoiseFamily) -> &'static str {
    match f {
        NoiseFamily::Gaussian => "gaussian",
        NoiseFamily::Laplace => "laplace",
        NoiseFamily::Discrete { .. } => "discrete",
    }
}

/// Dimension of spec `i`: cycles through `1..=5`.
pub fn spec_dim(i: usize) -> usize {
    1 + i % 5
}

/// Population seed of spec `i`.
pub fn spec_seed(master: Seed, i: usize) -> u64 {
    master.derive(i as u64).value()
}

fn check_spec(i: usize, n: usize, master: Seed) -> CliResult<Vec<McCheck>> {
    let d = spec_dim(i);
    let pop = fixtures::random_population(d, spec_seed(master, i));
    let noise = noise_label(pop.noise().family());
    let sample = sample_dataset(&pop, n, master.derive(1_000_000 + i as u64))?;
    let mut out = Vec::new();
    let mut push = |mode, family: CheckFamily, quantity: String, analytic: f64, empirical: f64, se: f64| {
        let tolerance = match family {
            CheckFamily::Metric => (METRIC_REL_TOL * analytic.abs()).max(METRIC_SE_MULT * se),
            CheckFamily::Coefficient => (COEF_REL_TOL * analytic.abs()).max(COEF_SE_MULT * se),
            CheckFamily::StructuralZero => 0.0,
        };
        let pass = (empirical - analytic).abs() <= tolerance;
        out.push(McCheck { spec: i, dim: d, noise, mode, quantity, family, analytic, empirical, se, tolerance, pass });
    };
    for mode in ObservationMode::ALL {
        let exact = analytic_report(&pop, mode)?;
        let predictor = fit_population(&pop, mode)?;
        let emp = empirical_report(&predictor, &sample)?;
        let se = emp.std_errors.expect("empirical reports carry standard errors");
        let metrics = [
            ("sld_res", exact.sld_res, emp.sld_res, se.sld_res),
            ("sld_sq", exact.sld_sq, emp.sld_sq, se.sld_sq),
            ("cld_res", exact.cld_res, emp.cld_res, se.cld_res),
            ("cld_sq", exact.cld_sq, emp.cld_sq, se.cld_sq),
            ("squared_error", exact.squared_error, emp.squared_error, se.squared_error),
        ];
        for (name, a, e, s) in metrics {
            push(mode, CheckFamily::Metric, name.into(), a, e, s);
        }
        let zeros: &[(&str, f64)] = match mode {
            ObservationMode::NoGroup => &[("cld_res", exact.cld_res), ("cld_sq", exact.cld_sq)],
            ObservationMode::WithGroup => &[("sld_res", exact.sld_res)],
        };
        for &(name, v) in zeros {
            push(mode, CheckFamily::StructuralZero, name.into(), 0.0, v, 0.0);
        }

        let fit = ols_fit_detailed(&sample, mode == ObservationMode::WithGroup)?;
        for j in 0..d {
            push(
                mode,
                CheckFamily::Coefficient,
                format!("beta_hat[{j}]"),
                predictor.beta_hat()[j],
                fit.predictor.beta_hat()[j],
                fit.slope_se[j],
            );
        }
        push(
            mode,
            CheckFamily::Coefficient,
            "alpha_hat".into(),
            predictor.alpha_hat(),
            fit.predictor.alpha_hat(),
            fit.intercept_se,
        );
        if let (Some(a), Some(e), Some(s)) = (predictor.beta_g(), fit.predictor.beta_g(), fit.group_se) {
            push(mode, CheckFamily::Coefficient, "beta_g".into(), a, e, s);
        }
    }
    Ok(out)
}

/// Runs the suite. Results are ordered by spec regardless of the thread count.
pub fn run_suite(cfg: &McConfig, master: Seed, opts: &RunOptions) -> CliResult<Vec<McCheck>> {
    if cfg.specs == 0 || cfg.n < 10 {
        return Err(CliError::config("mc-validate needs at least 1 spec and 10 samples"));
    }
    let per_spec = opts.install(|| {
        (0..cfg.specs).into_par_iter().map(|i| check_spec(i, cfg.n, master)).collect::<CliResult<Vec<_>>>()
    })??;
    Ok(per_spec.into_iter().flatten().collect())
}

/// Settings come from the configuration when one is given; flags override them.
pub fn run(
    lc: Option<&LoadedConfig>,
    opts: &RunOptions,
    specs: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
) -> CliResult<McOutput> {
    let mut cfg = lc.and_then(|l| l.config.mc.clone()).unwrap_or_default();
    if let Some(s) = specs {
        cfg.specs = s;
    }
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let master_seed = cfg.seed;
    let checks = run_suite(&cfg, Seed(master_seed), opts)?;

    let dir = opts.output_dir.clone().or_else(|| lc.map(LoadedConfig::output_dir));
    let path = match dir {
        None => None,
        Some(dir) => {
            let settings = format!("specs={} n={} seed={master_seed}", cfg.specs, cfg.n);
            let hash = lc.map(|l| l.hash.clone()).unwrap_or_else(|| sha256_hex(settings.as_bytes()));
            let mut meta = Metadata::new("mc-validate", master_seed, &hash);
            meta.push("specs", cfg.specs);
            meta.push("n", cfg.n);
            meta.push("tol.metric", format!("max({METRIC_REL_TOL} rel, {METRIC_SE_MULT} se)"));
            meta.push("tol.coefficient", format!("max({COEF_REL_TOL} rel, {COEF_SE_MULT} se)"));
            let sink = OutputSink::create(dir, meta)?;
            let mut w = sink.csv(FILE, &HEADER)?;
            for c in &checks {
                w.row([
                    c.spec.to_string(),
                    c.dim.to_string(),
                    c.noise.to_string(),
                    c.mode.label().to_string(),
                    c.quantity.clone(),
                    num(c.analytic),
                    num(c.empirical),
                    num(c.se),
                    num(c.tolerance),
                    c.pass.to_string(),
                    c.family.label().to_string(),
                ])?;
            }
            Some(w.finish()?)
        }
    };
    Ok(McOutput { checks, path })
}
