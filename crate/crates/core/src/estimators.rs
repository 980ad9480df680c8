//! Population least-squares predictors under the two observation functions.
//!
//! `NoGroup` observes `x = z + u`; `WithGroup` observes `[z + u, g]`. Predictors are
//! expressed in latent coordinates and never need samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate_1d, quad_form, spd_solve, Matrix, Vector};
use crate::population::{group_deltas, pooled_cov, pooled_mean, within_group_cov, PopulationSpec};

/// Window half-width, in posterior standard deviations, for the Bayes-optimal integrals.
pub const BAYES_WINDOW_SDS: f64 = 8.0;
const BAYES_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    NoGroup,
    WithGroup,
}

impl ObservationMode {
    pub const ALL: [ObservationMode; 2] = [ObservationMode::NoGroup, ObservationMode::WithGroup];

    /// Short label used in tables: `o-g` / `o+g`.
    pub fn label(self) -> &'static str {
        match self {
            ObservationMode::NoGroup => "o-g",
            ObservationMode::WithGroup => "o+g",
        }
    }
}

/// `ŷ = beta_hat' x + beta_g * g + alpha_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    beta_hat: Vector,
    alpha_hat: f64,
    beta_g: Option<f64>,
    mode: ObservationMode,
}

impl LinearPredictor {
    pub fn no_group(beta_hat: Vector, alpha_hat: f64) -> Self {
        Self { beta_hat, alpha_hat, beta_g: None, mode: ObservationMode::NoGroup }
    }

    pub fn with_group(beta_hat: Vector, beta_g: f64, alpha_hat: f64) -> Self {
        Self { beta_hat, alpha_hat, beta_g: Some(beta_g), mode: ObservationMode::WithGroup }
    }

    pub fn beta_hat(&self) -> &Vector {
        &self.beta_hat
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha_hat
    }

    pub fn beta_g(&self) -> Option<f64> {
        self.beta_g
    }

    /// Group coefficient, zero for `NoGroup` predictors.
    pub fn group_coef(&self) -> f64 {
        self.beta_g.unwrap_or(0.0)
    }

    pub fn mode(&self) -> ObservationMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    pub fn predict(&self, x: &[f64], g: u8) -> f64 {
        debug_assert_eq!(x.len(), self.beta_hat.len());
        let lin: f64 = x.iter().zip(self.beta_hat.iter()).map(|(a, b)| a * b).sum();
        lin + self.group_coef() * f64::from(g) + self.alpha_hat
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorJson {
    beta_hat: Vec<f64>,
    alpha_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    beta_g: Option<f64>,
    mode: ObservationMode,
}

impl Serialize for LinearPredictor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PredictorJson {
            beta_hat: self.beta_hat.iter().copied().collect(),
            alpha_hat: self.alpha_hat,
            beta_g: self.beta_g,
            mode: self.mode,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LinearPredictor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PredictorJson::deserialize(d)?;
        match (j.mode, j.beta_g) {
            (ObservationMode::NoGroup, None) => Ok(Self::no_group(Vector::from_vec(j.beta_hat), j.alpha_hat)),
            (ObservationMode::WithGroup, Some(bg)) => {
                Ok(Self::with_group(Vector::from_vec(j.beta_hat), bg, j.alpha_hat))
            }
            _ => Err(serde::de::Error::custom("beta_g must be present iff mode is with_group")),
        }
    }
}

/// Noise-to-signal ratio `(Σ + Σ_u)^-1 Σ_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRatio(pub Matrix);

impl NoiseRatio {
    /// `(signal + Σ_u)^-1 Σ_u`.
    pub fn from_covariances(signal: &Matrix, noise: &Matrix) -> Result<Self> {
        if signal.shape() != noise.shape() {
            return Err(Error::DimensionMismatch(format!(
                "signal {:?} vs noise {:?}",
                signal.shape(),
                noise.shape()
            )));
        }
        Ok(Self(spd_solve(&(signal + noise), noise)?))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    /// `Λ β`: the part of `β` lost to noise.
    pub fn apply(&self, beta: &Vector) -> Vector {
        &self.0 * beta
    }
}

/// `Λ = (Σ_z + Σ_u)^-1 Σ_u` with the pooled latent covariance.
pub fn lambda_no_group(pop: &PopulationSpec) -> Result<NoiseRatio> {
    NoiseRatio::from_covariances(&pooled_cov(pop), pop.noise().cov())
}

/// `Λ' = (Σ_{z|g} + Σ_u)^-1 Σ_u` with the within-group covariance.
pub fn lambda_with_group(pop: &PopulationSpec) -> Result<NoiseRatio> {
    NoiseRatio::from_covariances(&within_group_cov(pop), pop.noise().cov())
}

pub fn lambda(pop: &PopulationSpec, mode: ObservationMode) -> Result<NoiseRatio> {
    match mode {
        ObservationMode::NoGroup => lambda_no_group(pop),
        ObservationMode::WithGroup => lambda_with_group(pop),
    }
}

/// `β̂ = (I - Λ)β`, `α̂ = (Λβ)' E[z] + α`.
pub fn fit_population_no_group(pop: &PopulationSpec) -> Result<LinearPredictor> {
    let beta = &pop.model().beta;
    let lost = lambda_no_group(pop)?.apply(beta);
    let alpha_hat = lost.dot(&pooled_mean(pop)) + pop.model().alpha;
    Ok(LinearPredictor::no_group(beta - &lost, alpha_hat))
}

/// `β̂_z = (I - Λ')β`, `β̂_g = (Λ'β)'Δμ_z`, `α̂ = (Λ'β)'μ_0 + α`.
pub fn fit_population_with_group(pop: &PopulationSpec) -> Result<LinearPredictor> {
    let beta = &pop.model().beta;
    let lost = lambda_with_group(pop)?.apply(beta);
    let beta_g = lost.dot(&group_deltas(pop).delta_mu);
    let alpha_hat = lost.dot(pop.group(0).mean()) + pop.model().alpha;
    Ok(LinearPredictor::with_group(beta - &lost, beta_g, alpha_hat))
}

pub fn fit_population(pop: &PopulationSpec, mode: ObservationMode) -> Result<LinearPredictor> {
    match mode {
        ObservationMode::NoGroup => fit_population_no_group(pop),
        ObservationMode::WithGroup => fit_population_with_group(pop),
    }
}

/// Constant predictions `(ŷ | g=0, ŷ | g=1)` in the infinite-noise limit.
///
/// Without the group the predictor collapses to `E[y]`; with it, to `E[y | g]`.
pub fn infinite_noise_predictions(pop: &PopulationSpec, mode: ObservationMode) -> (f64, f64) {
    match mode {
        ObservationMode::NoGroup => {
            let m = pop.pooled_target_mean();
            (m, m)
        }
        ObservationMode::WithGroup => (pop.target_mean(0), pop.target_mean(1)),
    }
}

/// `E[(y - ŷ)^2] = (Λβ)'Σ_z(Λβ) + ((I-Λ)β)'Σ_u((I-Λ)β)` for the no-group fit.
pub fn expected_squared_error_no_group(pop: &PopulationSpec) -> Result<f64> {
    let beta = &pop.model().beta;
    let lost = lambda_no_group(pop)?.apply(beta);
    let kept = beta - &lost;
    Ok(quad_form(&lost, &pooled_cov(pop), &lost) + quad_form(&kept, pop.noise().cov(), &kept))
}

/// Same decomposition for the with-group fit, with `Σ_{z|g}` in place of `Σ_z`.
pub fn expected_squared_error_with_group(pop: &PopulationSpec) -> Result<f64> {
    let beta = &pop.model().beta;
    let lost = lambda_with_group(pop)?.apply(beta);
    let kept = beta - &lost;
    Ok(quad_form(&lost, &within_group_cov(pop), &lost) + quad_form(&kept, pop.noise().cov(), &kept))
}

pub fn expected_squared_error(pop: &PopulationSpec, mode: ObservationMode) -> Result<f64> {
    match mode {
        ObservationMode::NoGroup => expected_squared_error_no_group(pop),
        ObservationMode::WithGroup => expected_squared_error_with_group(pop),
    }
}

fn log_normal_kernel(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean) * (x - mean) / var
}

/// `E[f(z) | z + u = x]` for `z ~ N(prior_mean, prior_var)`, `u ~ N(0, noise_var)`:
/// the ratio `∫ P_u(x - z) P_z(z) f(z) dz / ∫ P_u(x - z) P_z(z) dz`.
///
/// Both integrals run over the posterior mean ± [`BAYES_WINDOW_SDS`] posterior
/// standard deviations, outside of which the Gaussian weight is below 1e-15.
pub fn bayes_optimal_1d<F>(f: F, prior_mean: f64, prior_var: f64, noise_var: f64, x: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(prior_var > 0.0) || !(noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "prior and noise variances must be positive, got {prior_var} and {noise_var}"
        )));
    }
    let post_var = prior_var * noise_var / (prior_var + noise_var);
    let post_mean = (noise_var * prior_mean + prior_var * x) / (prior_var + noise_var);
    let sd = post_var.sqrt();
    let (lo, hi) = (post_mean - BAYES_WINDOW_SDS * sd, post_mean + BAYES_WINDOW_SDS * sd);

    // log of P_u(x - z) P_z(z), shifted by its value at the mode to avoid underflow
    let log_peak = log_normal_kernel(x - post_mean, 0.0, noise_var) + log_normal_kernel(post_mean, prior_mean, prior_var);
    let weight = |z: f64| {
        (log_normal_kernel(x - z, 0.0, noise_var) + log_normal_kernel(z, prior_mean, prior_var) - log_peak).exp()
    };
    let mass_scale = (2.0 * std::f64::consts::PI * post_var).sqrt();
    let denom = integrate_1d(&weight, lo, hi, BAYES_REL_TOL * mass_scale)?;
    let f_scale = 1.0 + f(post_mean).abs() + f(lo).abs().max(f(hi).abs());
    let numer = integrate_1d(|z| weight(z) * f(z), lo, hi, BAYES_REL_TOL * mass_scale * f_scale)?;
    Ok(numer / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::population::{GroupSpec, NoiseSpec, TrueLinearModel};

    const EXACT: f64 = 1e-12;

    #[test]
    fn example_no_group_fit() {
        let pop = fixtures::two_group_1d();
        assert!((lambda_no_group(&pop).unwrap().0[(0, 0)] - 3.0 / 11.0).abs() < EXACT);
        let p = fit_population_no_group(&pop).unwrap();
        assert!((p.beta_hat()[0] - 8.0 / 11.0).abs() < EXACT);
        assert!((p.alpha_hat() - 6.0 / 11.0).abs() < EXACT);
        assert_eq!(p.mode(), ObservationMode::NoGroup);
        assert_eq!(p.beta_g(), None);
    }

    #[test]
    fn example_with_group_fit() {
        let pop = fixtures::two_group_1d();
        assert!((lambda_with_group(&pop).unwrap().0[(0, 0)] - 3.0 / 5.0).abs() < EXACT);
        let p = fit_population_with_group(&pop).unwrap();
        assert!((p.beta_hat()[0] - 2.0 / 5.0).abs() < EXACT);
        assert!((p.beta_g().unwrap() - 9.0 / 5.0).abs() < EXACT);
        assert!((p.alpha_hat() - 3.0 / 5.0).abs() < EXACT);
    }

    #[test]
    fn zero_noise_recovers_truth() {
        for seed in 0..5 {
            let pop = fixtures::random_population(3, seed);
            let clean = pop.with_noise_cov(Matrix::zeros(3, 3)).unwrap();
            assert_eq!(lambda_no_group(&clean).unwrap().0.amax(), 0.0);
            let p = fit_population_no_group(&clean).unwrap();
            assert!((p.beta_hat() - &clean.model().beta).amax() < EXACT);
            assert!((p.alpha_hat() - clean.model().alpha).abs() < EXACT);
            let q = fit_population_with_group(&clean).unwrap();
            assert!((q.beta_hat() - &clean.model().beta).amax() < EXACT);
            assert_eq!(q.beta_g(), Some(0.0));
            assert!((q.alpha_hat() - clean.model().alpha).abs() < EXACT);
            assert_eq!(expected_squared_error_no_group(&clean).unwrap(), 0.0);
        }
    }

    #[test]
    fn huge_noise_drives_lambda_to_identity() {
        let pop = fixtures::two_group_1d().with_noise_cov(Matrix::from_element(1, 1, 1e6)).unwrap();
        let l = lambda_no_group(&pop).unwrap().0[(0, 0)];
        assert!((l - 1.0).abs() < 1e-5);
    }

    #[test]
    fn attenuation_factor_in_one_dimension() {
        for seed in 0..10 {
            let pop = fixtures::random_population(1, seed);
            let sz = pooled_cov(&pop)[(0, 0)];
            let su = pop.noise().cov()[(0, 0)];
            let p = fit_population_no_group(&pop).unwrap();
            let expect = sz / (sz + su) * pop.model().beta[0];
            assert!((p.beta_hat()[0] - expect).abs() < EXACT);
        }
    }

    #[test]
    fn equal_group_means_zero_group_coefficient() {
        let m = Vector::from_element(2, 0.7);
        let pop = PopulationSpec::new(
            GroupSpec::new(m.clone(), Matrix::identity(2, 2), 0.3).unwrap(),
            GroupSpec::new(m, Matrix::identity(2, 2) * 2.0, 0.7).unwrap(),
            TrueLinearModel::new(Vector::from_vec(vec![1.0, -2.0]), 0.5),
            NoiseSpec::isotropic(2, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(fit_population_with_group(&pop).unwrap().beta_g(), Some(0.0));
    }

    #[test]
    fn infinite_noise_predictions_example() {
        let pop = fixtures::two_group_1d();
        let (a, b) = infinite_noise_predictions(&pop, ObservationMode::NoGroup);
        assert!((a - 2.0).abs() < EXACT && (b - 2.0).abs() < EXACT);
        assert_eq!(infinite_noise_predictions(&pop, ObservationMode::WithGroup), (1.0, 4.0));

        let shifted = pop.with_model(TrueLinearModel::new(Vector::from_element(1, 1.0), 2.5)).unwrap();
        for mode in ObservationMode::ALL {
            let (a0, a1) = infinite_noise_predictions(&pop, mode);
            let (b0, b1) = infinite_noise_predictions(&shifted, mode);
            assert!((b0 - a0 - 2.5).abs() < EXACT && (b1 - a1 - 2.5).abs() < EXACT);
        }
    }

    #[test]
    fn fitted_predictions_converge_to_infinite_noise_limit() {
        for seed in 0..5 {
            let base = fixtures::random_population(2, seed);
            let pop = base.with_noise_cov(Matrix::identity(2, 2) * 1e6).unwrap();
            for mode in ObservationMode::ALL {
                let p = fit_population(&pop, mode).unwrap();
                let (l0, l1) = infinite_noise_predictions(&pop, mode);
                for i in -5..=5 {
                    let x = [i as f64, -0.5 * i as f64];
                    assert!((p.predict(&x, 0) - l0).abs() < 1e-3);
                    assert!((p.predict(&x, 1) - l1).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn example_squared_error() {
        let pop = fixtures::two_group_1d();
        assert!((expected_squared_error_no_group(&pop).unwrap() - 8.0 / 11.0).abs() < EXACT);
    }

    #[test]
    fn squared_error_monotone_in_noise() {
        let pop = fixtures::two_group_1d();
        let mut last = -1.0;
        for k in 0..60 {
            let s = 0.05 * k as f64 * (1.0 + k as f64 * 0.2);
            let e = expected_squared_error_no_group(&pop.with_noise_cov(Matrix::from_element(1, 1, s)).unwrap())
                .unwrap();
            assert!(e >= last - 1e-15);
            last = e;
        }
    }

    #[test]
    fn bayes_optimal_linear_and_constant() {
        for &(pm, pv, nv, x) in &[(1.0, 1.0, 1.0, 0.3), (-2.0, 0.5, 3.0, 4.0), (3.0, 2.0, 0.1, -1.0)] {
            let got = bayes_optimal_1d(|z| z, pm, pv, nv, x).unwrap();
            let expect = (nv * pm + pv * x) / (pv + nv);
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
            let c = bayes_optimal_1d(|_| 4.25, pm, pv, nv, x).unwrap();
            assert!((c - 4.25).abs() < 1e-9);
        }
        assert!(bayes_optimal_1d(|z| z, 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn bayes_optimal_depends_on_prior() {
        let f = |z: f64| z * z * z + 5.0 * z * z;
        for x in [-1.0, 0.0, 2.0, 3.5] {
            let a = bayes_optimal_1d(f, 1.0, 1.0, 1.0, x).unwrap();
            let b = bayes_optimal_1d(f, 3.0, 1.0, 1.0, x).unwrap();
            assert!((a - b).abs() > 1.0, "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn predictor_json() {
        let p = LinearPredictor::with_group(Vector::from_vec(vec![0.4]), 1.8, 0.6);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"beta_hat":[0.4],"alpha_hat":0.6,"beta_g":1.8,"mode":"with_group"}"#);
        assert_eq!(serde_json::from_str::<LinearPredictor>(&s).unwrap(), p);
        let q = LinearPredictor::no_group(Vector::from_vec(vec![0.4]), 0.6);
        let s = serde_json::to_string(&q).unwrap();
        assert!(!s.contains("beta_g"));
        assert!(serde_json::from_str::<LinearPredictor>(r#"{"beta_hat":[1],"alpha_hat":0,"mode":"with_group"}"#).is_err());
    }
}
