//! Finite samples: seeded data generation, OLS, perturbations and empirical discrepancies.
//!
//! Every random draw comes from a [`Seed`] split into independent ChaCha8 streams, one
//! per purpose and column, so results do not depend on evaluation order or thread count.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discrepancy::{CldBasis, DiscrepancyReport, ReportSource, StdErrors};
use crate::error::{Error, Result};
use crate::estimators::LinearPredictor;
use crate::numerics::{psd_factor, Cholesky, Matrix, Vector};
use crate::population::{NoiseFamily, PopulationSpec};

/// Name of the generator behind [`Seed::rng`], recorded in output metadata.
pub const RNG_NAME: &str = "ChaCha8Rng";
/// Variance of the noise that stands in for dropping a feature.
pub const OMIT_VARIANCE: f64 = 1e4;
/// Relative pivot tolerance on the feature correlation matrix before declaring collinearity.
pub const RANK_TOL: f64 = 1e-10;
/// Fraction of rows that go to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Stream purposes; combined with a column or task index to select a ChaCha stream.
pub mod stream {
    pub const GROUPS: u64 = 1;
    pub const LATENT: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const INJECT: u64 = 5;
    pub const OMIT: u64 = 6;
    pub const RESAMPLE: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Seed(pub u64);

impl Seed {
    pub fn value(self) -> u64 {
        self.0
    }

    /// Child seed for a sub-task (repetition, grid point, ...).
    pub fn derive(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Generator for `(purpose, index)`: stream `(purpose << 32) + index` of the key.
    pub fn rng(self, purpose: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream((purpose << 32).wrapping_add(index));
        rng
    }
}

/// Per-column affine map fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    target: Vec<f64>,
    group: Vec<u8>,
    latent: Option<Matrix>,
    standardized: bool,
    feature_names: Option<Vec<String>>,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(features: Matrix, target: Vec<f64>, group: Vec<u8>) -> Result<Self> {
        let n = features.nrows();
        if target.len() != n || group.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} feature rows, {} targets, {} group labels",
                target.len(),
                group.len()
            )));
        }
        if let Some(i) = group.iter().position(|&g| g > 1) {
            return Err(Error::MissingGroup(format!("row {i} has group label {}", group[i])));
        }
        Ok(Self {
            features,
            target,
            group,
            latent: None,
            standardized: false,
            feature_names: None,
            standardization: None,
        })
    }

    pub fn with_latent(mut self, latent: Matrix) -> Result<Self> {
        if latent.shape() != self.features.shape() {
            return Err(Error::DimensionMismatch(format!(
                "latent {:?} vs features {:?}",
                latent.shape(),
                self.features.shape()
            )));
        }
        self.latent = Some(latent);
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("{} names for {} features", names.len(), self.dim())));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }

    pub fn latent(&self) -> Option<&Matrix> {
        self.latent.as_ref()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn feature_name(&self, j: usize) -> String {
        self.feature_names.as_ref().map(|v| v[j].clone()).unwrap_or_else(|| format!("x{j}"))
    }

    pub fn group_counts(&self) -> [usize; 2] {
        let n1 = self.group.iter().filter(|&&g| g == 1).count();
        [self.n() - n1, n1]
    }

    /// Same rows with the latent features in place of the observed ones.
    pub fn latent_view(&self) -> Option<Dataset> {
        let z = self.latent.as_ref()?;
        let mut out = self.clone();
        out.features = z.clone();
        Some(out)
    }

    /// Rows `idx`, in that order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &Matrix| Matrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
        Dataset {
            features: pick(&self.features),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            group: idx.iter().map(|&i| self.group[i]).collect(),
            latent: self.latent.as_ref().map(pick),
            standardized: self.standardized,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Row-wise concatenation; latent features survive only if every part has them.
    pub fn stack(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::EmptyInput)?;
        let d = first.dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch(format!("stacking {d}- and {}-feature datasets", p.dim())));
        }
        let n: usize = parts.iter().map(Dataset::n).sum();
        let mut features = Matrix::zeros(n, d);
        let keep_latent = parts.iter().all(|p| p.latent.is_some());
        let mut latent = keep_latent.then(|| Matrix::zeros(n, d));
        let mut target = Vec::with_capacity(n);
        let mut group = Vec::with_capacity(n);
        let mut row = 0;
        for p in parts {
            features.rows_mut(row, p.n()).copy_from(&p.features);
            if let (Some(dst), Some(src)) = (latent.as_mut(), p.latent.as_ref()) {
                dst.rows_mut(row, p.n()).copy_from(src);
            }
            target.extend_from_slice(&p.target);
            group.extend_from_slice(&p.group);
            row += p.n();
        }
        Ok(Dataset {
            features,
            target,
            group,
            latent,
            standardized: parts.iter().all(|p| p.standardized),
            feature_names: first.feature_names.clone(),
            standardization: first.standardization.clone(),
        })
    }

    /// Reads a CSV with a header row.
    pub fn from_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("column '{name}' not found in header")))
        };
        let group_col = find(&schema.group_column)?;
        let target_col = find(&schema.target_column)?;
        let feature_names: Vec<String> = match &schema.feature_columns {
            Some(cols) => cols.clone(),
            None => headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != group_col && *i != target_col)
                .map(|(_, h)| h.to_string())
                .collect(),
        };
        if feature_names.iter().any(|f| *f == schema.group_column) {
            return Err(Error::Data(format!("group column '{}' cannot be a feature", schema.group_column)));
        }
        let feature_cols = feature_names.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
        let mut values = Vec::new();
        let mut target = Vec::new();
        let mut group = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |col: usize| -> Result<f64> {
                let raw = rec.get(col).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    Error::Data(format!("record {}: column '{}' value '{raw}' is not a number", line + 1, &headers[col]))
                })
            };
            let label = rec.get(group_col).unwrap_or("");
            let g = *schema
                .group_mapping
                .get(label)
                .ok_or_else(|| Error::MissingGroup(format!("record {}: group value '{label}' is not mapped", line + 1)))?;
            for &c in &feature_cols {
                values.push(parse(c)?);
            }
            target.push(parse(target_col)?);
            group.push(g);
        }
        let n = target.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let features = Matrix::from_row_slice(n, feature_cols.len(), &values);
        Dataset::new(features, target, group)?.with_feature_names(feature_names)
    }

    /// Writes features, `target` and `group` (as 0/1), plus `z_<name>` latent columns when present.
    pub fn to_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let names: Vec<String> = (0..self.dim()).map(|j| self.feature_name(j)).collect();
        let mut header = names.clone();
        header.push("target".into());
        header.push("group".into());
        if self.latent.is_some() {
            header.extend(names.iter().map(|n| format!("z_{n}")));
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.target[i].to_string());
            rec.push(self.group[i].to_string());
            if let Some(z) = &self.latent {
                rec.extend(z.row(i).iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How to interpret a CSV file as a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub group_column: String,
    pub group_mapping: BTreeMap<String, u8>,
    pub target_column: String,
    /// Defaults to every column other than group and target.
    pub feature_columns: Option<Vec<String>>,
}

impl CsvSchema {
    /// Schema matching [`Dataset::to_csv`] output without latent columns.
    pub fn round_trip(feature_columns: Vec<String>) -> Self {
        Self {
            group_column: "group".into(),
            group_mapping: BTreeMap::from([("0".to_string(), 0), ("1".to_string(), 1)]),
            target_column: "target".into(),
            feature_columns: Some(feature_columns),
        }
    }
}

/// One zero-mean, unit-variance draw from `family`.
pub fn standard_noise_draw(family: &NoiseFamily, rng: &mut impl Rng) -> f64 {
    match family {
        NoiseFamily::Gaussian => rng.sample(StandardNormal),
        NoiseFamily::Laplace => {
            // inverse CDF with scale 1/sqrt(2), which has unit variance
            let v: f64 = rng.random::<f64>() - 0.5;
            -std::f64::consts::FRAC_1_SQRT_2 * v.signum() * (1.0 - 2.0 * v.abs()).ln()
        }
        NoiseFamily::Discrete { support, probs } => {
            let sd = support.iter().zip(probs).map(|(s, p)| s * s * p).sum::<f64>().sqrt();
            let r: f64 = rng.random();
            let mut acc = 0.0;
            for (s, p) in support.iter().zip(probs) {
                acc += p;
                if r < acc {
                    return s / sd;
                }
            }
            support[support.len() - 1] / sd
        }
    }
}

/// Draws `n` individuals: group, latent `z`, exact `y = β'z + α`, observed `x = z + u`.
///
/// The returned dataset carries `z` as its latent features.
pub fn sample_dataset(pop: &PopulationSpec, n: usize, seed: Seed) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let d = pop.dim();
    let factors = [psd_factor(pop.group(0).cov())?, psd_factor(pop.group(1).cov())?];
    let noise_factor = psd_factor(pop.noise().cov())?;
    let p1 = pop.group(1).weight();
    let (mut rg, mut rz, mut ru) =
        (seed.rng(stream::GROUPS, 0), seed.rng(stream::LATENT, 0), seed.rng(stream::NOISE, 0));
    let beta = &pop.model().beta;
    let mut z = Matrix::zeros(n, d);
    let mut x = Matrix::zeros(n, d);
    let mut target = Vec::with_capacity(n);
    let mut group = Vec::with_capacity(n);
    let mut eps = Vector::zeros(d);
    let mut xi = Vector::zeros(d);
    for i in 0..n {
        let g = u8::from(rg.random::<f64>() < p1);
        for e in eps.iter_mut() {
            *e = rz.sample(StandardNormal);
        }
        for e in xi.iter_mut() {
            *e = standard_noise_draw(pop.noise().family(), &mut ru);
        }
        let zi = pop.group(usize::from(g)).mean() + &factors[usize::from(g)] * &eps;
        let ui = &noise_factor * &xi;
        for j in 0..d {
            z[(i, j)] = zi[j];
            x[(i, j)] = zi[j] + ui[j];
        }
        target.push(beta.dot(&zi) + pop.model().alpha);
        group.push(g);
    }
    Dataset::new(x, target, group)?.with_latent(z)
}

/// Least-squares fit with heteroscedasticity-robust (HC0) standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub predictor: LinearPredictor,
    /// Standard errors of the slopes, in feature order.
    pub slope_se: Vec<f64>,
    pub group_se: Option<f64>,
    pub intercept_se: f64,
    /// `RSS / (n - p)` with `p` counting the intercept.
    pub residual_variance: f64,
}

/// OLS with intercept on the observed features, optionally with the group indicator
/// as an extra column. Collinear columns give `RankDeficient`.
pub fn ols_fit_detailed(ds: &Dataset, include_group: bool) -> Result<OlsFit> {
    let (n, d) = (ds.n(), ds.dim());
    let k = d + usize::from(include_group);
    if n <= k + 1 {
        return Err(Error::InvalidArgument(format!("{n} rows are too few to fit {} coefficients", k + 1)));
    }
    let col = |j: usize, i: usize| if j < d { ds.features[(i, j)] } else { f64::from(ds.group[i]) };
    let nf = n as f64;
    let means: Vec<f64> = (0..k).map(|j| (0..n).map(|i| col(j, i)).sum::<f64>() / nf).collect();
    let y_mean = ds.target.iter().sum::<f64>() / nf;
    let xc = Matrix::from_fn(n, k, |i, j| col(j, i) - means[j]);
    let yc = Vector::from_iterator(n, ds.target.iter().map(|y| y - y_mean));
    let gram = xc.tr_mul(&xc);
    let xty = xc.tr_mul(&yc);
    let scale: Vec<f64> = (0..k).map(|j| gram[(j, j)].sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::RankDeficient { column: j });
    }
    let corr = Matrix::from_fn(k, k, |a, b| gram[(a, b)] / (scale[a] * scale[b]));
    let chol = Cholesky::factor_with_tolerance(&corr, RANK_TOL).map_err(|e| match e {
        Error::NotSpd { index, .. } => Error::RankDeficient { column: index },
        other => other,
    })?;
    let rhs = Vector::from_fn(k, |j, _| xty[j] / scale[j]);
    let coef_scaled = chol.solve_vec(&rhs);
    let coef = Vector::from_fn(k, |j, _| coef_scaled[j] / scale[j]);
    let intercept = y_mean - (0..k).map(|j| coef[j] * means[j]).sum::<f64>();

    let resid = &yc - &xc * &coef;
    let sigma2 = resid.norm_squared() / (n - k - 1) as f64;
    // sandwich covariance in the centred parametrisation (mean level, slopes)
    let inv_corr = chol.inverse();
    let mut bread = Matrix::zeros(k + 1, k + 1);
    bread[(0, 0)] = 1.0 / nf;
    for a in 0..k {
        for b in 0..k {
            bread[(a + 1, b + 1)] = inv_corr[(a, b)] / (scale[a] * scale[b]);
        }
    }
    let scored = Matrix::from_fn(n, k + 1, |i, j| resid[i] * if j == 0 { 1.0 } else { xc[(i, j - 1)] });
    let full = &bread * scored.tr_mul(&scored) * &bread;
    let cov = full.view((1, 1), (k, k)).into_owned();
    let grad = Vector::from_fn(k + 1, |j, _| if j == 0 { 1.0 } else { -means[j - 1] });
    let intercept_var = (grad.transpose() * &full * &grad)[(0, 0)];

    let beta_hat = coef.rows(0, d).into_owned();
    let slope_se = (0..d).map(|j| cov[(j, j)].sqrt()).collect();
    let (predictor, group_se) = if include_group {
        (LinearPredictor::with_group(beta_hat, coef[d], intercept), Some(cov[(d, d)].sqrt()))
    } else {
        (LinearPredictor::no_group(beta_hat, intercept), None)
    };
    Ok(OlsFit { predictor, slope_se, group_se, intercept_se: intercept_var.sqrt(), residual_variance: sigma2 })
}

pub fn ols_fit(ds: &Dataset, include_group: bool) -> Result<LinearPredictor> {
    Ok(ols_fit_detailed(ds, include_group)?.predictor)
}

fn with_latent_kept(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    if out.latent.is_none() {
        out.latent = Some(ds.features.clone());
    }
    out
}

/// Adds independent `N(0, sigma_sq)` noise to every feature column.
///
/// Column `j` uses stream `(INJECT, j)`. If the dataset has no latent features, the
/// pre-noise features become its latent features.
pub fn inject_noise(ds: &Dataset, sigma_sq: f64, seed: Seed) -> Result<Dataset> {
    if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
        return Err(Error::InvalidArgument(format!("noise variance must be finite and >= 0, got {sigma_sq}")));
    }
    let mut out = with_latent_kept(ds);
    if sigma_sq == 0.0 {
        return Ok(out);
    }
    let sd = sigma_sq.sqrt();
    for j in 0..ds.dim() {
        let mut rng = seed.rng(stream::INJECT, j as u64);
        for v in out.features.column_mut(j).iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

/// Adds `N(0, OMIT_VARIANCE)` noise to the first `k` columns listed in `order`.
pub fn omit_features(ds: &Dataset, order: &[usize], k: usize, seed: Seed) -> Result<Dataset> {
    let d = ds.dim();
    let mut seen = vec![false; d];
    if order.len() != d {
        return Err(Error::InvalidPermutation(format!("order has {} entries for {d} features", order.len())));
    }
    for &j in order {
        if j >= d || seen[j] {
            return Err(Error::InvalidPermutation(format!("entry {j} is out of range or repeated")));
        }
        seen[j] = true;
    }
    if k > d {
        return Err(Error::InvalidArgument(format!("cannot omit {k} of {d} features")));
    }
    let mut out = with_latent_kept(ds);
    let sd = OMIT_VARIANCE.sqrt();
    for &j in &order[..k] {
        let mut rng = seed.rng(stream::OMIT, j as u64);
        for v in out.features.column_mut(j).iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}

fn mean_and_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, bool) {
    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut first = None;
    let mut constant = true;
    for v in values {
        count += 1;
        let delta = v - mean;
        mean += delta / count as f64;
        m2 += delta * (v - mean);
        match first {
            None => first = Some(v),
            Some(f) => constant &= v == f,
        }
    }
    (mean, (m2 / count as f64).sqrt(), constant)
}

fn apply_standardization(ds: &Dataset, s: &Standardization) -> Dataset {
    let mut out = ds.clone();
    let map = |m: &mut Matrix| {
        for j in 0..m.ncols() {
            for v in m.column_mut(j).iter_mut() {
                *v = (*v - s.feature_mean[j]) / s.feature_scale[j];
            }
        }
    };
    map(&mut out.features);
    if let Some(z) = out.latent.as_mut() {
        map(z);
    }
    for y in out.target.iter_mut() {
        *y = (*y - s.target_mean) / s.target_scale;
    }
    out.standardized = true;
    out.standardization = Some(s.clone());
    out
}

/// Fits per-column mean and standard deviation on `train` (features and target, not
/// the group) and applies them to both datasets. Latent features use the feature map.
pub fn standardize(train: &Dataset, apply_to: &Dataset) -> Result<(Dataset, Dataset)> {
    if train.n() == 0 {
        return Err(Error::EmptyInput);
    }
    if apply_to.dim() != train.dim() {
        return Err(Error::DimensionMismatch(format!("train has {} features, apply_to {}", train.dim(), apply_to.dim())));
    }
    let mut feature_mean = Vec::with_capacity(train.dim());
    let mut feature_scale = Vec::with_capacity(train.dim());
    for j in 0..train.dim() {
        let (m, sd, constant) = mean_and_sd(train.features.column(j).iter().copied());
        if constant || !(sd > 0.0) {
            return Err(Error::ZeroVariance { column: train.feature_name(j) });
        }
        feature_mean.push(m);
        feature_scale.push(sd);
    }
    let (target_mean, target_scale, constant) = mean_and_sd(train.target.iter().copied());
    if constant || !(target_scale > 0.0) {
        return Err(Error::ZeroVariance { column: "target".into() });
    }
    let s = Standardization { feature_mean, feature_scale, target_mean, target_scale };
    Ok((apply_standardization(train, &s), apply_standardization(apply_to, &s)))
}

/// Uniform random partition: `floor(0.8 n)` training rows, both sides in original order.
pub fn split_indices(n: usize, seed: Seed) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 rows to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed.rng(stream::SPLIT, 0));
    let n_train = (TRAIN_FRACTION * n as f64).floor() as usize;
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split_80_20(ds: &Dataset, seed: Seed) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.n(), seed)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

#[derive(Default, Clone, Copy)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Squared standard error of the mean.
    fn se2(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n as f64 - 1.0) / self.n as f64
        }
    }
}

/// Sample SLD/CLD of `predictor` on `ds`, with standard errors.
///
/// SLD entries compare per-group means of the residual and the squared error. CLD
/// entries compare, for each row, the noise-averaged loss under `g = 0` and `g = 1`
/// at the same latent features: `|e0 - e1| = |β̂_g|` and `|e0² - e1²|` where
/// `e_g = y - β̂'z - β̂_g g - α̂`. Without latent features the observed ones are used
/// and the report is tagged [`CldBasis::Proxy`].
pub fn empirical_report(predictor: &LinearPredictor, ds: &Dataset) -> Result<DiscrepancyReport> {
    if predictor.dim() != ds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "predictor has {} features, dataset has {}",
            predictor.dim(),
            ds.dim()
        )));
    }
    let counts = ds.group_counts();
    for (g, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::GroupEmpty { group: g as u8 });
        }
    }
    let (z, basis) = match ds.latent() {
        Some(z) => (z, CldBasis::Latent),
        None => (&ds.features, CldBasis::Proxy),
    };
    let bg = predictor.group_coef();
    let beta_hat = predictor.beta_hat();
    let mut res = [Running::default(); 2];
    let mut sq = [Running::default(); 2];
    let mut all_sq = Running::default();
    let mut cld_sq = Running::default();
    for i in 0..ds.n() {
        let g = ds.group[i];
        let x = ds.features.row(i);
        let r = ds.target[i] - predictor.predict(x.transpose().as_slice(), g);
        res[usize::from(g)].push(r);
        sq[usize::from(g)].push(r * r);
        all_sq.push(r * r);
        let e0 = ds.target[i] - z.row(i).dot(&beta_hat.transpose()) - predictor.alpha_hat();
        let e1 = e0 - bg;
        cld_sq.push((e0 * e0 - e1 * e1).abs());
    }
    let signed = res[1].mean - res[0].mean;
    let sq_gap = sq[1].mean - sq[0].mean;
    Ok(DiscrepancyReport {
        mode: predictor.mode(),
        source: ReportSource::Empirical,
        sld_res: signed.abs(),
        sld_sq: sq_gap.abs(),
        cld_res: bg.abs(),
        cld_sq: cld_sq.mean,
        signed_sld_res: signed,
        squared_error: all_sq.mean,
        cld_basis: basis,
        std_errors: Some(StdErrors {
            sld_res: (res[0].se2() + res[1].se2()).sqrt(),
            sld_sq: (sq[0].se2() + sq[1].se2()).sqrt(),
            cld_res: 0.0,
            cld_sq: cld_sq.se2().sqrt(),
            squared_error: all_sq.se2().sqrt(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_population_no_group, fit_population_with_group, ObservationMode};
    use crate::fixtures;
    use crate::population::TrueLinearModel;

    #[test]
    fn seed_streams_are_distinct_and_stable() {
        let s = Seed(7);
        let a: u64 = s.rng(1, 0).random();
        let b: u64 = s.rng(1, 1).random();
        let c: u64 = s.rng(2, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, Seed(7).rng(1, 0).random::<u64>());
        assert_ne!(s.derive(1), s.derive(2));
        assert_eq!(s.derive(1), Seed(7).derive(1));
    }

    #[test]
    fn sample_is_deterministic() {
        let pop = fixtures::random_population(3, 4);
        assert_eq!(sample_dataset(&pop, 500, Seed(3)).unwrap(), sample_dataset(&pop, 500, Seed(3)).unwrap());
        assert_ne!(sample_dataset(&pop, 500, Seed(3)).unwrap(), sample_dataset(&pop, 500, Seed(4)).unwrap());
    }

    #[test]
    fn sample_without_noise_is_latent() {
        let pop = fixtures::random_population(2, 1).with_noise_cov(Matrix::zeros(2, 2)).unwrap();
        let ds = sample_dataset(&pop, 300, Seed(1)).unwrap();
        let z = ds.latent().unwrap();
        for (a, b) in ds.features().iter().zip(z.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sample_mean_fixture() {
        let ds = sample_dataset(&fixtures::two_group_1d(), 200_000, Seed(11)).unwrap();
        let z = ds.latent().unwrap().column(0);
        let (m, sd, _) = mean_and_sd(z.iter().copied());
        let se = sd / (ds.n() as f64).sqrt();
        assert!((m - 2.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn standard_noise_draws_have_unit_variance() {
        let families = [
            NoiseFamily::Gaussian,
            NoiseFamily::Laplace,
            NoiseFamily::Discrete { support: vec![-1.0, 0.0, 2.0], probs: vec![0.4, 0.4, 0.2] },
        ];
        for f in &families {
            let mut rng = Seed(5).rng(9, 0);
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| standard_noise_draw(f, &mut rng)).collect();
            let (m, sd, _) = mean_and_sd(draws.iter().copied());
            assert!(m.abs() < 0.015, "{f:?} mean {m}");
            assert!((sd - 1.0).abs() < 0.015, "{f:?} sd {sd}");
        }
    }

    fn noiseless(n: usize, seed: u64) -> (Dataset, Vector, f64) {
        let pop = fixtures::random_population(3, seed).with_noise_cov(Matrix::zeros(3, 3)).unwrap();
        let ds = sample_dataset(&pop, n, Seed(seed)).unwrap();
        (ds, pop.model().beta.clone(), pop.model().alpha)
    }

    #[test]
    fn ols_recovers_noiseless_model() {
        let (ds, beta, alpha) = noiseless(200, 2);
        let p = ols_fit(&ds, false).unwrap();
        assert!((p.beta_hat() - &beta).amax() < 1e-8);
        assert!((p.alpha_hat() - alpha).abs() < 1e-8);
        let q = ols_fit(&ds, true).unwrap();
        assert!(q.beta_g().unwrap().abs() < 1e-8);
    }

    #[test]
    fn ols_detects_duplicate_column() {
        let (ds, _, _) = noiseless(100, 3);
        let mut f = ds.features().clone();
        let c0 = f.column(0).into_owned();
        f.set_column(2, &c0);
        let dup = Dataset::new(f, ds.target().to_vec(), ds.group().to_vec()).unwrap();
        assert_eq!(ols_fit(&dup, false), Err(Error::RankDeficient { column: 2 }));
    }

    #[test]
    fn ols_standard_errors_match_sandwich_formula() {
        let pop = fixtures::random_population(2, 8);
        let ds = sample_dataset(&pop, 400, Seed(8)).unwrap();
        let fit = ols_fit_detailed(&ds, true).unwrap();
        let n = ds.n();
        let design = Matrix::from_fn(n, 4, |i, j| match j {
            0 | 1 => ds.features()[(i, j)],
            2 => f64::from(ds.group()[i]),
            _ => 1.0,
        });
        let xtx_inv = (design.transpose() * &design).try_inverse().unwrap();
        let y = Vector::from_row_slice(ds.target());
        let coef = &xtx_inv * design.transpose() * &y;
        let resid = &y - &design * &coef;
        let mut meat = Matrix::zeros(4, 4);
        for i in 0..n {
            let row = design.row(i).transpose();
            meat += &row * row.transpose() * resid[i].powi(2);
        }
        let cov = &xtx_inv * meat * &xtx_inv;
        assert!((fit.predictor.beta_hat()[1] - coef[1]).abs() < 1e-9);
        assert!((fit.predictor.alpha_hat() - coef[3]).abs() < 1e-9);
        assert!((fit.slope_se[0] - cov[(0, 0)].sqrt()).abs() < 1e-9);
        assert!((fit.slope_se[1] - cov[(1, 1)].sqrt()).abs() < 1e-9);
        assert!((fit.group_se.unwrap() - cov[(2, 2)].sqrt()).abs() < 1e-9);
        assert!((fit.intercept_se - cov[(3, 3)].sqrt()).abs() < 1e-9);
        let s2 = resid.norm_squared() / (n - 4) as f64;
        assert!((fit.residual_variance - s2).abs() < 1e-12);
    }

    #[test]
    fn inject_noise_properties() {
        let pop = fixtures::random_population(2, 6);
        let ds = sample_dataset(&pop, 100_000, Seed(6)).unwrap();
        let same = inject_noise(&ds, 0.0, Seed(1)).unwrap();
        assert_eq!(same.features(), ds.features());
        let noisy = inject_noise(&ds, 2.0, Seed(1)).unwrap();
        assert_eq!(noisy.group(), ds.group());
        assert_eq!(noisy.target(), ds.target());
        for j in 0..2 {
            let (_, a, _) = mean_and_sd(ds.features().column(j).iter().copied());
            let (_, b, _) = mean_and_sd(noisy.features().column(j).iter().copied());
            let grow = b * b - a * a;
            assert!((grow - 2.0).abs() < 0.1, "column {j}: {grow}");
        }
        assert!(inject_noise(&ds, -1.0, Seed(1)).is_err());
        let plain = Dataset::new(ds.features().clone(), ds.target().to_vec(), ds.group().to_vec()).unwrap();
        assert_eq!(inject_noise(&plain, 1.0, Seed(2)).unwrap().latent(), Some(ds.features()));
    }

    #[test]
    fn omit_features_properties() {
        let (ds, _, _) = noiseless(2000, 4);
        assert_eq!(omit_features(&ds, &[2, 0, 1], 0, Seed(1)).unwrap().features(), ds.features());
        let out = omit_features(&ds, &[2, 0, 1], 2, Seed(1)).unwrap();
        assert_eq!(out.features().column(1), ds.features().column(1));
        assert_ne!(out.features().column(0), ds.features().column(0));
        assert_ne!(out.features().column(2), ds.features().column(2));
        assert!(matches!(omit_features(&ds, &[0, 0, 1], 1, Seed(1)), Err(Error::InvalidPermutation(_))));
        assert!(matches!(omit_features(&ds, &[0, 1], 1, Seed(1)), Err(Error::InvalidPermutation(_))));
        assert!(matches!(omit_features(&ds, &[0, 1, 5], 1, Seed(1)), Err(Error::InvalidPermutation(_))));
    }

    #[test]
    fn omitting_everything_kills_slopes() {
        let pop = fixtures::random_population(3, 10);
        let ds = sample_dataset(&pop, 100_000, Seed(10)).unwrap();
        let out = omit_features(&ds, &[0, 1, 2], 3, Seed(3)).unwrap();
        let p = ols_fit(&out, false).unwrap();
        let full = ols_fit(&ds, false).unwrap();
        for j in 0..3 {
            assert!(p.beta_hat()[j].abs() < 0.02 * full.beta_hat().amax(), "{}", p.beta_hat()[j]);
        }
    }

    #[test]
    fn standardize_properties() {
        let pop = fixtures::random_population(3, 12);
        let ds = sample_dataset(&pop, 5000, Seed(12)).unwrap();
        let (train, test) = split_80_20(&ds, Seed(1)).unwrap();
        let (st, sa) = standardize(&train, &test).unwrap();
        assert!(st.is_standardized() && sa.is_standardized());
        for j in 0..3 {
            let (m, sd, _) = mean_and_sd(st.features().column(j).iter().copied());
            assert!(m.abs() < 1e-8 && (sd - 1.0).abs() < 1e-6);
            let s = st.standardization().unwrap();
            let direct = (test.features()[(7, j)] - s.feature_mean[j]) / s.feature_scale[j];
            assert!((sa.features()[(7, j)] - direct).abs() < 1e-14);
        }
        let (m, sd, _) = mean_and_sd(st.target().iter().copied());
        assert!(m.abs() < 1e-8 && (sd - 1.0).abs() < 1e-6);
        assert_eq!(st.group(), train.group());

        let (again, _) = standardize(&st, &st).unwrap();
        assert!((again.features() - st.features()).amax() < 1e-10);

        let mut f = ds.features().clone();
        f.column_mut(1).fill(3.5);
        let flat = Dataset::new(f, ds.target().to_vec(), ds.group().to_vec()).unwrap();
        assert_eq!(standardize(&flat, &flat).unwrap_err(), Error::ZeroVariance { column: "x1".into() });
    }

    #[test]
    fn split_properties() {
        let (train, test) = split_indices(10, Seed(3)).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, Seed(3)).unwrap(), (train, test));
        assert!(split_indices(4, Seed(3)).is_err());
    }

    #[test]
    fn report_on_true_model_is_zero() {
        let (ds, beta, alpha) = noiseless(500, 5);
        let r = empirical_report(&LinearPredictor::no_group(beta.clone(), alpha), &ds).unwrap();
        for (name, v) in r.metrics() {
            assert!(v.abs() < 1e-10, "{name} = {v}");
        }
        let r = empirical_report(&LinearPredictor::with_group(beta, 0.0, alpha), &ds).unwrap();
        assert!(r.sld_sq < 1e-10 && r.cld_sq < 1e-10);
    }

    #[test]
    fn report_on_fixture() {
        let pop = fixtures::two_group_1d();
        let ds = sample_dataset(&pop, 1_000_000, Seed(21)).unwrap();
        let r = empirical_report(&fit_population_no_group(&pop).unwrap(), &ds).unwrap();
        let se = r.std_errors.unwrap().sld_res;
        assert!((r.sld_res - 9.0 / 11.0).abs() < 3.0 * se, "{} ± {se}", r.sld_res);
        assert_eq!(r.cld_res, 0.0);
        assert_eq!(r.cld_sq, 0.0);
        let wp = fit_population_with_group(&pop).unwrap();
        let r = empirical_report(&wp, &ds).unwrap();
        assert_eq!(r.cld_res, wp.beta_g().unwrap().abs());
        assert_eq!(r.cld_basis, CldBasis::Latent);
        assert_eq!(r.mode, ObservationMode::WithGroup);
    }

    #[test]
    fn report_errors() {
        let ds = Dataset::new(Matrix::from_element(3, 1, 1.0), vec![1.0; 3], vec![0, 0, 0]).unwrap();
        let p = LinearPredictor::no_group(Vector::from_element(1, 1.0), 0.0);
        assert_eq!(empirical_report(&p, &ds), Err(Error::GroupEmpty { group: 1 }));
        assert!(matches!(
            Dataset::new(Matrix::zeros(2, 1), vec![0.0; 2], vec![0, 2]),
            Err(Error::MissingGroup(_))
        ));
        let _ = TrueLinearModel::new(Vector::zeros(1), 0.0);
    }

    #[test]
    fn csv_round_trip_and_mapping() {
        let text = "# comment line\nage,sex,income,score\n30,F,1.5,2\n40,M,2.5,3\n50,F,3.0,4\n";
        let schema = CsvSchema {
            group_column: "sex".into(),
            group_mapping: BTreeMap::from([("F".into(), 1), ("M".into(), 0)]),
            target_column: "score".into(),
            feature_columns: None,
        };
        let ds = Dataset::from_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(ds.group(), &[1, 0, 1]);
        assert_eq!(ds.feature_names().unwrap(), &["age".to_string(), "income".to_string()]);
        assert_eq!(ds.target(), &[2.0, 3.0, 4.0]);
        let mut buf = Vec::new();
        ds.to_csv(&mut buf).unwrap();
        let back = Dataset::from_csv(buf.as_slice(), &CsvSchema::round_trip(vec!["age".into(), "income".into()])).unwrap();
        assert_eq!(back, ds);

        let bad = "a,g,y\n1,X,2\n";
        let schema = CsvSchema {
            group_column: "g".into(),
            group_mapping: BTreeMap::from([("A".into(), 0)]),
            target_column: "y".into(),
            feature_columns: None,
        };
        assert!(matches!(Dataset::from_csv(bad.as_bytes(), &schema), Err(Error::MissingGroup(_))));
    }

    #[test]
    fn stack_and_select() {
        let (ds, _, _) = noiseless(20, 1);
        let a = ds.select_rows(&[0, 1, 2]);
        let b = ds.select_rows(&[3, 4]);
        let s = Dataset::stack(&[a, b]).unwrap();
        assert_eq!(s, ds.select_rows(&[0, 1, 2, 3, 4]));
    }
}
