//! Statistical (SLD) and counterfactual (CLD) loss discrepancies.
//!
//! Two losses are tracked throughout: the signed residual `y - ŷ` (`res`) and the
//! squared error (`sq`). SLD compares expected loss across groups; CLD compares an
//! individual's loss with that of the same latent `z` under the other group label.
//! All reported metrics are absolute values; `signed_sld_res` keeps the direction
//! as `E[res | g=1] - E[res | g=0]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    expected_squared_error, fit_population, lambda_no_group, lambda_with_group, LinearPredictor, ObservationMode,
};
use crate::numerics::{folded_normal_mean, quad_form, Matrix, Vector};
use crate::population::{group_deltas, pooled_mean, PopulationSpec};

const PROBABILITY_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    Analytic,
    Empirical,
}

/// How the CLD entries were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CldBasis {
    /// Closed form over the population.
    Exact,
    /// Sample estimate using the latent features.
    Latent,
    /// Observed features stand in for the latent ones; `cld_res` then equals `|β̂_g|`.
    Proxy,
}

/// Monte-Carlo standard errors attached to an empirical report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdErrors {
    pub sld_res: f64,
    pub sld_sq: f64,
    pub cld_res: f64,
    pub cld_sq: f64,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub mode: ObservationMode,
    pub source: ReportSource,
    pub sld_res: f64,
    pub sld_sq: f64,
    pub cld_res: f64,
    pub cld_sq: f64,
    pub signed_sld_res: f64,
    pub squared_error: f64,
    pub cld_basis: CldBasis,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_errors: Option<StdErrors>,
}

impl DiscrepancyReport {
    /// `(name, value)` pairs in a fixed order, for tabular output.
    pub fn metrics(&self) -> [(&'static str, f64); 6] {
        [
            ("sld_res", self.sld_res),
            ("sld_sq", self.sld_sq),
            ("cld_res", self.cld_res),
            ("cld_sq", self.cld_sq),
            ("signed_sld_res", self.signed_sld_res),
            ("squared_error", self.squared_error),
        ]
    }
}

/// `|(Λβ)'Δμ|` and `|(Λβ)'ΔΣ(Λβ) - ΔP ((Λβ)'Δμ)^2|`; CLD entries are zero.
pub fn analytic_report_no_group(pop: &PopulationSpec) -> Result<DiscrepancyReport> {
    let lost = lambda_no_group(pop)?.apply(&pop.model().beta);
    let deltas = group_deltas(pop);
    let gap = lost.dot(&deltas.delta_mu);
    let sq = quad_form(&lost, &deltas.delta_sigma, &lost) - deltas.delta_p * gap * gap;
    Ok(DiscrepancyReport {
        mode: ObservationMode::NoGroup,
        source: ReportSource::Analytic,
        sld_res: gap.abs(),
        sld_sq: sq.abs(),
        cld_res: 0.0,
        cld_sq: 0.0,
        signed_sld_res: gap,
        squared_error: expected_squared_error(pop, ObservationMode::NoGroup)?,
        cld_basis: CldBasis::Exact,
        std_errors: None,
    })
}

/// `SLD_res = 0`, `SLD_sq = |(Λ'β)'ΔΣ(Λ'β)|`, `CLD_res = |(Λ'β)'Δμ|` and
/// `CLD_sq = |(Λ'β)'Δμ| E|(Λ'β)'(2z - μ1 - μ0)|`, the expectation taken per Gaussian
/// component as a folded-normal mean.
pub fn analytic_report_with_group(pop: &PopulationSpec) -> Result<DiscrepancyReport> {
    let w = lambda_with_group(pop)?.apply(&pop.model().beta);
    let deltas = group_deltas(pop);
    let gap = w.dot(&deltas.delta_mu);
    let mid = pop.group(0).mean() + pop.group(1).mean();
    let spread: f64 = pop
        .groups()
        .iter()
        .map(|g| {
            let m = w.dot(&(g.mean() * 2.0 - &mid));
            let s = 2.0 * quad_form(&w, g.cov(), &w).max(0.0).sqrt();
            g.weight() * folded_normal_mean(m, s)
        })
        .sum();
    Ok(DiscrepancyReport {
        mode: ObservationMode::WithGroup,
        source: ReportSource::Analytic,
        sld_res: 0.0,
        sld_sq: quad_form(&w, &deltas.delta_sigma, &w).abs(),
        cld_res: gap.abs(),
        cld_sq: gap.abs() * spread,
        signed_sld_res: 0.0,
        squared_error: expected_squared_error(pop, ObservationMode::WithGroup)?,
        cld_basis: CldBasis::Exact,
        std_errors: None,
    })
}

pub fn analytic_report(pop: &PopulationSpec, mode: ObservationMode) -> Result<DiscrepancyReport> {
    match mode {
        ObservationMode::NoGroup => analytic_report_no_group(pop),
        ObservationMode::WithGroup => analytic_report_with_group(pop),
    }
}

/// Group gaps (group 1 minus group 0) of observed-space moments.
///
/// Second moments are taken about the pooled means of `x` and `y`, so that for a
/// least-squares predictor (whose pooled residual mean is zero) the squared-loss SLD
/// is a quadratic form in `β̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMomentGaps {
    pub delta_mu_x: Vector,
    pub delta_mu_y: f64,
    pub delta_sigma_x: Matrix,
    pub delta_sigma_xy: Vector,
    pub delta_sigma_y: f64,
}

impl GroupMomentGaps {
    /// Gaps for `x = z + u` with `u` independent of `(z, g)`.
    pub fn from_population(pop: &PopulationSpec) -> Self {
        let mu = pooled_mean(pop);
        let beta = &pop.model().beta;
        let d = pop.dim();
        let mut second = [Matrix::zeros(d, d), Matrix::zeros(d, d)];
        for (g, s) in second.iter_mut().enumerate() {
            let c = pop.group(g).mean() - &mu;
            *s = pop.group(g).cov() + &c * c.transpose();
        }
        let delta_sigma_x = &second[1] - &second[0];
        let delta_sigma_xy = &delta_sigma_x * beta;
        let delta_sigma_y = quad_form(beta, &delta_sigma_x, beta);
        let delta_mu_x = group_deltas(pop).delta_mu;
        let delta_mu_y = beta.dot(&delta_mu_x);
        Self { delta_mu_x, delta_mu_y, delta_sigma_x, delta_sigma_xy, delta_sigma_y }
    }

    /// Sample gaps from observed rows, with population (1/n) normalisation.
    pub fn from_samples(features: &Matrix, target: &[f64], group: &[u8]) -> Result<Self> {
        let (n, d) = features.shape();
        if target.len() != n || group.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} feature rows, {} targets, {} group labels",
                target.len(),
                group.len()
            )));
        }
        let counts = [0u8, 1].map(|g| group.iter().filter(|&&x| x == g).count());
        for (g, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::GroupEmpty { group: g as u8 });
            }
        }
        let mu_x = Vector::from_fn(d, |j, _| features.column(j).mean());
        let mu_y = target.iter().sum::<f64>() / n as f64;
        let mut mx = [Vector::zeros(d), Vector::zeros(d)];
        let mut my = [0.0; 2];
        let mut sx = [Matrix::zeros(d, d), Matrix::zeros(d, d)];
        let mut sxy = [Vector::zeros(d), Vector::zeros(d)];
        let mut sy = [0.0; 2];
        for i in 0..n {
            let g = usize::from(group[i]);
            let xc = features.row(i).transpose() - &mu_x;
            let yc = target[i] - mu_y;
            mx[g] += &xc;
            my[g] += yc;
            sx[g] += &xc * xc.transpose();
            sxy[g] += &xc * yc;
            sy[g] += yc * yc;
        }
        let inv = counts.map(|c| 1.0 / c as f64);
        Ok(Self {
            delta_mu_x: &mx[1] * inv[1] - &mx[0] * inv[0],
            delta_mu_y: my[1] * inv[1] - my[0] * inv[0],
            delta_sigma_x: &sx[1] * inv[1] - &sx[0] * inv[0],
            delta_sigma_xy: &sxy[1] * inv[1] - &sxy[0] * inv[0],
            delta_sigma_y: sy[1] * inv[1] - sy[0] * inv[0],
        })
    }
}

/// `(|β̂'Δμ_x - Δμ_y|, |ΔΣ_y + β̂'ΔΣ_x β̂ - 2β̂'ΔΣ_xy|)` for any linear predictor `β̂`
/// whose intercept zeroes the pooled residual mean.
pub fn general_noise_sld(beta_hat: &Vector, gaps: &GroupMomentGaps) -> Result<(f64, f64)> {
    let d = beta_hat.len();
    if gaps.delta_mu_x.len() != d || gaps.delta_sigma_x.shape() != (d, d) || gaps.delta_sigma_xy.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "beta_hat has {d} entries, moment gaps have {}",
            gaps.delta_mu_x.len()
        )));
    }
    let res = beta_hat.dot(&gaps.delta_mu_x) - gaps.delta_mu_y;
    let sq = gaps.delta_sigma_y + quad_form(beta_hat, &gaps.delta_sigma_x, beta_hat)
        - 2.0 * beta_hat.dot(&gaps.delta_sigma_xy);
    Ok((res.abs(), sq.abs()))
}

/// Limiting metrics as `Σ_u → ∞`, written in terms of the group moments of `y`.
///
/// `NoGroup` predicts the pooled mean of `y`; `WithGroup` predicts `E[y | g]`.
pub fn infinite_noise_report(pop: &PopulationSpec, mode: ObservationMode) -> DiscrepancyReport {
    let mu = [pop.target_mean(0), pop.target_mean(1)];
    let var = [pop.target_var(0), pop.target_var(1)];
    let p1 = pop.group(1).weight();
    let dmu = mu[1] - mu[0];
    let dvar = var[1] - var[0];
    let (sld_res, signed, sld_sq, cld_res, cld_sq, squared_error) = match mode {
        ObservationMode::NoGroup => (
            dmu.abs(),
            dmu,
            (dvar + (1.0 - 2.0 * p1) * dmu * dmu).abs(),
            0.0,
            0.0,
            pop.pooled_target_var(),
        ),
        ObservationMode::WithGroup => {
            let mid = 0.5 * (mu[0] + mu[1]);
            let spread: f64 = (0..2)
                .map(|g| pop.group(g).weight() * folded_normal_mean(mu[g] - mid, var[g].max(0.0).sqrt()))
                .sum();
            let within = (0..2).map(|g| pop.group(g).weight() * var[g]).sum();
            (0.0, 0.0, dvar.abs(), dmu.abs(), 2.0 * dmu.abs() * spread, within)
        }
    };
    DiscrepancyReport {
        mode,
        source: ReportSource::Analytic,
        sld_res,
        sld_sq,
        cld_res,
        cld_sq,
        signed_sld_res: signed,
        squared_error,
        cld_basis: CldBasis::Exact,
        std_errors: None,
    }
}

/// One atom of a discrete population: a latent type observed in one group, with
/// its loss under both group labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub z_id: usize,
    pub group: u8,
    pub loss_g0: f64,
    pub loss_g1: f64,
    pub probability: f64,
}

impl Individual {
    pub fn own_loss(&self) -> f64 {
        if self.group == 0 {
            self.loss_g0
        } else {
            self.loss_g1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    individuals: Vec<Individual>,
}

impl FinitePopulation {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        if individuals.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        for (i, ind) in individuals.iter().enumerate() {
            if ind.group > 1 {
                return Err(Error::MissingGroup(format!("individual {i} has group {}", ind.group)));
            }
            if !(ind.probability >= 0.0) {
                return Err(Error::NegativeWeight { index: i, weight: ind.probability });
            }
        }
        let total: f64 = individuals.iter().map(|i| i.probability).sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::InvalidSpec(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self { individuals })
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }
}

/// `(SLD, CLD)` of a single loss on a finite population.
pub fn finite_population_report(fp: &FinitePopulation) -> Result<(f64, f64)> {
    let mut mass = [0.0; 2];
    let mut loss = [0.0; 2];
    let mut cld = 0.0;
    for ind in fp.individuals() {
        let g = usize::from(ind.group);
        mass[g] += ind.probability;
        loss[g] += ind.probability * ind.own_loss();
        cld += ind.probability * (ind.loss_g0 - ind.loss_g1).abs();
    }
    for (g, &m) in mass.iter().enumerate() {
        if m <= 0.0 {
            return Err(Error::GroupEmpty { group: g as u8 });
        }
    }
    Ok(((loss[1] / mass[1] - loss[0] / mass[0]).abs(), cld))
}

/// Exact metrics of an arbitrary linear predictor on a Gaussian-mixture population.
///
/// Per group the residual has mean `m_g = (β-β̂)'μ_g + α - α̂ - β̂_g g` and variance
/// `(β-β̂)'Σ_g(β-β̂) + β̂'Σ_uβ̂`, from which both SLD entries follow for any noise family.
/// The CLD entries condition on `z`: flipping `g` shifts the residual by `β̂_g`, so
/// `CLD_res = |β̂_g|` and `CLD_sq = |β̂_g| E|2 r_0(z) - β̂_g|`, where `r_0` is the
/// noise-averaged residual under `g = 0`; the latter expectation assumes Gaussian `z`.
pub fn evaluate_on_population(predictor: &LinearPredictor, pop: &PopulationSpec) -> Result<DiscrepancyReport> {
    if predictor.dim() != pop.dim() {
        return Err(Error::DimensionMismatch(format!(
            "predictor has {} features, population has {}",
            predictor.dim(),
            pop.dim()
        )));
    }
    let beta = &pop.model().beta;
    let w = beta - predictor.beta_hat();
    let offset = pop.model().alpha - predictor.alpha_hat();
    let bg = predictor.group_coef();
    let noise_var = quad_form(predictor.beta_hat(), pop.noise().cov(), predictor.beta_hat());

    let mut mean = [0.0; 2];
    let mut var = [0.0; 2];
    let mut spread = 0.0;
    for g in 0..2 {
        let grp = pop.group(g);
        let r0 = w.dot(grp.mean()) + offset;
        let latent_var = quad_form(&w, grp.cov(), &w).max(0.0);
        mean[g] = r0 - bg * g as f64;
        var[g] = latent_var + noise_var;
        spread += grp.weight() * folded_normal_mean(2.0 * r0 - bg, 2.0 * latent_var.sqrt());
    }
    let second = [mean[0] * mean[0] + var[0], mean[1] * mean[1] + var[1]];
    let signed = mean[1] - mean[0];
    Ok(DiscrepancyReport {
        mode: predictor.mode(),
        source: ReportSource::Analytic,
        sld_res: signed.abs(),
        sld_sq: (second[1] - second[0]).abs(),
        cld_res: bg.abs(),
        cld_sq: bg.abs() * spread,
        signed_sld_res: signed,
        squared_error: pop.group(0).weight() * second[0] + pop.group(1).weight() * second[1],
        cld_basis: CldBasis::Exact,
        std_errors: None,
    })
}

/// Fit on `train`, evaluate on `test`.
///
/// The residual entries follow the train/test split of the closed forms:
/// `NoGroup` gives `SLD_res = |(Λ_train β)'Δμ_test|`, `CLD_res = 0`; `WithGroup` gives
/// `SLD_res = |(Λ'_train β)'(Δμ_train - Δμ_test)|` and `CLD_res = |(Λ'_train β)'Δμ_train|`.
pub fn decomposed_residual_report(
    train: &PopulationSpec,
    test: &PopulationSpec,
    mode: ObservationMode,
) -> Result<DiscrepancyReport> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch(format!(
            "train is {}-dimensional, test is {}-dimensional",
            train.dim(),
            test.dim()
        )));
    }
    if train.model() != test.model() || train.noise() != test.noise() {
        return Err(Error::InvalidArgument("train and test must share the linear model and noise".into()));
    }
    let predictor = fit_population(train, mode)?;
    evaluate_on_population(&predictor, test)
}
