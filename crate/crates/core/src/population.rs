//! The two-group latent data-generating process.
//!
//! Each group `g` draws latent features `z | g ~ N(mean_g, cov_g)` with probability
//! `weight_g`; the target is `y = beta' z + alpha`; the observation adds mean-zero noise
//! `u` (covariance `Σ_u`) that is independent of `z`, `g` and `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_psd, check_symmetric, from_rows, quad_form, to_rows, Matrix, Vector};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const NOISE_MEAN_TOL: f64 = 1e-12;

/// Latent distribution of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    mean: Vector,
    cov: Matrix,
    weight: f64,
}

impl GroupSpec {
    pub fn new(mean: Vector, cov: Matrix, weight: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidSpec("group mean is empty".into()));
        }
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "group mean has dimension {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !(weight > 0.0 && weight < 1.0) {
            return Err(Error::InvalidSpec(format!("group weight must lie in (0, 1), got {weight}")));
        }
        check_psd(&cov).map_err(|e| Error::InvalidSpec(format!("group covariance: {e}")))?;
        Ok(Self { mean, cov, weight })
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrueLinearModel {
    pub beta: Vector,
    pub alpha: f64,
}

impl TrueLinearModel {
    pub fn new(beta: Vector, alpha: f64) -> Self {
        Self { beta, alpha }
    }
}

/// Shape of the per-coordinate noise marginal before it is scaled to `Σ_u`.
///
/// Samples are drawn as `F ξ` where `F F' = Σ_u` and `ξ` has i.i.d. zero-mean,
/// unit-variance coordinates of the chosen family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
    Discrete { support: Vec<f64>, probs: Vec<f64> },
}

impl NoiseFamily {
    fn validate(&self) -> Result<()> {
        if let NoiseFamily::Discrete { support, probs } = self {
            if support.is_empty() || support.len() != probs.len() {
                return Err(Error::InvalidSpec(
                    "discrete noise needs matching, non-empty support and probs".into(),
                ));
            }
            if probs.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidSpec("discrete noise probabilities must be >= 0".into()));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidSpec(format!("discrete noise probabilities sum to {total}")));
            }
            let mean: f64 = support.iter().zip(probs).map(|(s, p)| s * p).sum();
            if mean.abs() > NOISE_MEAN_TOL {
                return Err(Error::InvalidSpec(format!("discrete noise has mean {mean}, expected 0")));
            }
            let var: f64 = support.iter().zip(probs).map(|(s, p)| s * s * p).sum();
            if !(var > 0.0) {
                return Err(Error::InvalidSpec("discrete noise has zero variance".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    cov: Matrix,
    family: NoiseFamily,
}

impl NoiseSpec {
    pub fn new(cov: Matrix, family: NoiseFamily) -> Result<Self> {
        check_psd(&cov).map_err(|e| Error::InvalidSpec(format!("noise covariance: {e}")))?;
        family.validate()?;
        Ok(Self { cov, family })
    }

    pub fn gaussian(cov: Matrix) -> Result<Self> {
        Self::new(cov, NoiseFamily::Gaussian)
    }

    /// Isotropic Gaussian noise `σ² I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::gaussian(Matrix::identity(dim, dim) * variance)
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }
}

/// Two groups, the true linear model and the noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    groups: [GroupSpec; 2],
    model: TrueLinearModel,
    noise: NoiseSpec,
}

/// Group differences `(Δμ_z, ΔΣ_z, ΔP)`, always "group 1 minus group 0".
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDeltas {
    pub delta_mu: Vector,
    pub delta_sigma: Matrix,
    pub delta_p: f64,
}

impl PopulationSpec {
    pub fn new(group0: GroupSpec, group1: GroupSpec, model: TrueLinearModel, noise: NoiseSpec) -> Result<Self> {
        let d = group0.dim();
        if group1.dim() != d || model.beta.len() != d || noise.cov.nrows() != d {
            return Err(Error::DimensionMismatch(format!(
                "group dims {}/{}, beta {}, noise {}",
                d,
                group1.dim(),
                model.beta.len(),
                noise.cov.nrows()
            )));
        }
        let total = group0.weight + group1.weight;
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidSpec(format!("group weights sum to {total}, expected 1")));
        }
        Ok(Self { groups: [group0, group1], model, noise })
    }

    pub fn dim(&self) -> usize {
        self.groups[0].dim()
    }

    pub fn group(&self, g: usize) -> &GroupSpec {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[GroupSpec; 2] {
        &self.groups
    }

    pub fn model(&self) -> &TrueLinearModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Same groups and model with a different noise covariance (family kept).
    pub fn with_noise_cov(&self, cov: Matrix) -> Result<Self> {
        let noise = NoiseSpec::new(cov, self.noise.family.clone())?;
        Self::new(self.groups[0].clone(), self.groups[1].clone(), self.model.clone(), noise)
    }

    pub fn with_model(&self, model: TrueLinearModel) -> Result<Self> {
        Self::new(self.groups[0].clone(), self.groups[1].clone(), model, self.noise.clone())
    }

    /// Same population with group labels exchanged.
    pub fn swap_groups(&self) -> Self {
        Self {
            groups: [self.groups[1].clone(), self.groups[0].clone()],
            model: self.model.clone(),
            noise: self.noise.clone(),
        }
    }

    /// `E[y | g] = beta' mean_g + alpha`.
    pub fn target_mean(&self, g: usize) -> f64 {
        self.model.beta.dot(&self.groups[g].mean) + self.model.alpha
    }

    /// `Var[y | g] = beta' cov_g beta`.
    pub fn target_var(&self, g: usize) -> f64 {
        quad_form(&self.model.beta, &self.groups[g].cov, &self.model.beta)
    }

    pub fn pooled_target_mean(&self) -> f64 {
        self.model.beta.dot(&pooled_mean(self)) + self.model.alpha
    }

    pub fn pooled_target_var(&self) -> f64 {
        quad_form(&self.model.beta, &pooled_cov(self), &self.model.beta)
    }
}

/// `P0 μ0 + P1 μ1`.
pub fn pooled_mean(pop: &PopulationSpec) -> Vector {
    let [g0, g1] = &pop.groups;
    &g0.mean * g0.weight + &g1.mean * g1.weight
}

/// Law of total variance: `E[Var[z|g]] + Var[E[z|g]]`.
pub fn pooled_cov(pop: &PopulationSpec) -> Matrix {
    let mu = pooled_mean(pop);
    let mut cov = within_group_cov(pop);
    for g in &pop.groups {
        let dm = &g.mean - &mu;
        cov += &dm * dm.transpose() * g.weight;
    }
    cov
}

/// `Σ_{z|g} = P0 Var[z|g=0] + P1 Var[z|g=1]`.
pub fn within_group_cov(pop: &PopulationSpec) -> Matrix {
    let [g0, g1] = &pop.groups;
    &g0.cov * g0.weight + &g1.cov * g1.weight
}

pub fn group_deltas(pop: &PopulationSpec) -> GroupDeltas {
    let [g0, g1] = &pop.groups;
    GroupDeltas {
        delta_mu: &g1.mean - &g0.mean,
        delta_sigma: &g1.cov - &g0.cov,
        delta_p: g1.weight - g0.weight,
    }
}

/// Joint mixture: weight `t` on `initial` and `1 - t` on `shifted`.
///
/// Group probabilities mix as `t P_i(g) + (1 - t) P_s(g)`; within each group the two
/// component Gaussians are replaced by a Gaussian with the mixture's exact mean and
/// covariance. With equal group sizes the within-group weight on `initial` is `t`.
pub fn mixture_population(initial: &PopulationSpec, shifted: &PopulationSpec, t: f64) -> Result<PopulationSpec> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("mixture weight t must lie in [0, 1], got {t}")));
    }
    if initial.dim() != shifted.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mixture of {}-d and {}-d populations",
            initial.dim(),
            shifted.dim()
        )));
    }
    if initial.model != shifted.model || initial.noise != shifted.noise {
        return Err(Error::InvalidArgument(
            "mixture components must share the linear model and noise".into(),
        ));
    }
    if t == 1.0 {
        return Ok(initial.clone());
    }
    if t == 0.0 {
        return Ok(shifted.clone());
    }
    let mut groups = Vec::with_capacity(2);
    for g in 0..2 {
        let (a, b) = (&initial.groups[g], &shifted.groups[g]);
        let wa = t * a.weight;
        let wb = (1.0 - t) * b.weight;
        let weight = wa + wb;
        let s = wa / weight;
        let mean = &a.mean * s + &b.mean * (1.0 - s);
        let dm = &a.mean - &b.mean;
        let cov = &a.cov * s + &b.cov * (1.0 - s) + &dm * dm.transpose() * (s * (1.0 - s));
        groups.push((mean, cov, weight));
    }
    let (m1, c1, w1) = groups.pop().unwrap();
    let (m0, c0, w0) = groups.pop().unwrap();
    // renormalise so the weight-sum invariant holds exactly after rounding
    let total = w0 + w1;
    PopulationSpec::new(
        GroupSpec::new(m0, c0, w0 / total)?,
        GroupSpec::new(m1, c1, 1.0 - w0 / total)?,
        initial.model.clone(),
        initial.noise.clone(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GroupJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelJson {
    pub beta: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NoiseJson {
    cov: Vec<Vec<f64>>,
    #[serde(default = "default_family")]
    family: NoiseFamily,
}

fn default_family() -> NoiseFamily {
    NoiseFamily::Gaussian
}

/// JSON document form of a [`PopulationSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationJson {
    #[serde(default = "crate::population::schema_version")]
    schema_version: u32,
    groups: Vec<GroupJson>,
    model: ModelJson,
    noise: NoiseJson,
}

pub(crate) fn schema_version() -> u32 {
    crate::SCHEMA_VERSION
}

impl From<&TrueLinearModel> for ModelJson {
    fn from(m: &TrueLinearModel) -> Self {
        Self { beta: m.beta.iter().copied().collect(), alpha: m.alpha }
    }
}

impl From<ModelJson> for TrueLinearModel {
    fn from(m: ModelJson) -> Self {
        TrueLinearModel::new(Vector::from_vec(m.beta), m.alpha)
    }
}

impl From<&PopulationSpec> for PopulationJson {
    fn from(p: &PopulationSpec) -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            groups: p
                .groups
                .iter()
                .map(|g| GroupJson {
                    mean: g.mean.iter().copied().collect(),
                    cov: to_rows(&g.cov),
                    weight: g.weight,
                })
                .collect(),
            model: (&p.model).into(),
            noise: NoiseJson { cov: to_rows(&p.noise.cov), family: p.noise.family.clone() },
        }
    }
}

impl TryFrom<PopulationJson> for PopulationSpec {
    type Error = Error;

    fn try_from(j: PopulationJson) -> Result<Self> {
        if j.groups.len() != 2 {
            return Err(Error::InvalidSpec(format!("expected 2 groups, got {}", j.groups.len())));
        }
        let mut groups = j.groups.into_iter().map(|g| {
            let cov = from_rows(&g.cov)?;
            check_symmetric(&cov)?;
            GroupSpec::new(Vector::from_vec(g.mean), cov, g.weight)
        });
        let g0 = groups.next().unwrap()?;
        let g1 = groups.next().unwrap()?;
        let noise = NoiseSpec::new(from_rows(&j.noise.cov)?, j.noise.family)?;
        PopulationSpec::new(g0, g1, j.model.into(), noise)
    }
}

impl Serialize for PopulationSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PopulationJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PopulationSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = PopulationJson::deserialize(d)?;
        PopulationSpec::try_from(j).map_err(serde::de::Error::custom)
    }
}
