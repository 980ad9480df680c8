use std::path::PathBuf;

use loss_gap::reweight::{
    build_reweight_lp, resample_by_weights, simplex_solve, weighted_group_means, write_weights_csv,
};
use loss_gap::{Dataset, LpStatus, Seed};
use serde::Serialize;

use super::{DataSource, RunOptions};
use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SUMMARY_FILE: &str = "reweight.json";
pub const RESAMPLED_FILE: &str = "resampled.csv";
pub const LP_DEBUG_FILE: &str = "lp_debug.txt";

const RESAMPLE_TAG: u64 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct GroupMeans {
    pub features: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReweightSummary {
    pub status: LpStatus,
    pub objective_value: f64,
    pub iterations: usize,
    pub rows: usize,
    pub mass: [f64; 2],
    pub means_before: [GroupMeans; 2],
    pub means_after: Option<[GroupMeans; 2]>,
    /// Largest absolute gap between the weighted group means (features and target).
    pub max_mean_gap: Option<f64>,
    pub equality_residual: f64,
    pub resampled_rows: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ReweightOutput {
    pub summary: ReweightSummary,
    pub weights: Vec<f64>,
    pub dataset: Dataset,
    pub resampled: Option<Dataset>,
    pub dir: PathBuf,
}

fn means(ds: &Dataset, w: &[f64]) -> CliResult<[GroupMeans; 2]> {
    let [(m0, y0), (m1, y1)] = weighted_group_means(ds, w)?;
    Ok([
        GroupMeans { features: m0.iter().copied().collect(), target: y0 },
        GroupMeans { features: m1.iter().copied().collect(), target: y1 },
    ])
}

pub fn run(lc: &LoadedConfig, opts: &RunOptions) -> CliResult<ReweightOutput> {
    let cfg = lc.config.reweight.clone().unwrap_or_default();
    let master = Seed(lc.config.master_seed);
    let ds = DataSource::from_config(lc)?.draw(master)?;
    let lp = build_reweight_lp(&ds)?;
    let sol = simplex_solve(&lp.problem)?;
    let weights = lp.dataset_weights(&sol, ds.n());

    let mut mass = [0.0; 2];
    for (i, w) in weights.iter().enumerate() {
        mass[usize::from(ds.group()[i])] += w;
    }
    let optimal = sol.status == LpStatus::Optimal;
    let nontrivial = optimal && mass[0] > 0.0 && mass[1] > 0.0;
    let means_after = if nontrivial { Some(means(&ds, &weights)?) } else { None };
    let max_mean_gap = means_after.as_ref().map(|[a, b]| {
        a.features.iter().zip(&b.features).map(|(x, y)| (x - y).abs()).fold((a.target - b.target).abs(), f64::max)
    });

    let mut sink = opts.sink(lc, "reweight")?;
    sink.meta.push("rows", ds.n());
    let m = cfg.resample_size.unwrap_or(ds.n());
    let resampled = if nontrivial && m > 0 {
        Some(resample_by_weights(&ds, &weights, m, master.derive(RESAMPLE_TAG))?)
    } else {
        None
    };

    let summary = ReweightSummary {
        status: sol.status,
        objective_value: sol.objective_value,
        iterations: sol.iterations,
        rows: ds.n(),
        mass,
        means_before: means(&ds, &vec![1.0; ds.n()])?,
        means_after,
        max_mean_gap,
        equality_residual: lp.problem.equality_residual(&sol.weights),
        resampled_rows: resampled.as_ref().map(Dataset::n),
    };

    let mut f = sink.text_file(WEIGHTS_FILE)?;
    write_weights_csv(&mut f, &weights)?;
    sink.json(SUMMARY_FILE, &summary)?;
    if let Some(r) = &resampled {
        let mut f = sink.text_file(RESAMPLED_FILE)?;
        r.to_csv(&mut f)?;
    }
    if cfg.write_lp_debug {
        let path = sink.path(LP_DEBUG_FILE);
        let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        lp.problem.write_debug(std::io::BufWriter::new(f))?;
    }

    Ok(ReweightOutput { summary, weights, dataset: ds, resampled, dir: sink.dir })
}
