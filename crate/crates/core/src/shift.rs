//! Persistence of the with-group residual discrepancy under covariate shift.
//!
//! Initially group 0 has latent mean `μ` and group 1 has `-μ`, both with covariance
//! `Σ` and equal size. After the shift both groups have mean `μ`. Training on the
//! mixture that puts weight `t` on the initial distribution leaves a residual
//! discrepancy on the shifted distribution that lies in `[t(c1 - |c2|), t(c1 + |c2|)]`.

use std::io::Write;

use crate::discrepancy::decomposed_residual_report;
use crate::error::{Error, Result};
use crate::estimators::ObservationMode;
use crate::numerics::{check_psd, quad_form, sherman_morrison_inverse, spd_inverse, spd_solve, spd_solve_vec, Matrix, Vector};
use crate::population::{mixture_population, GroupSpec, NoiseSpec, PopulationSpec, TrueLinearModel};

/// Slack allowed when checking the bracket, to absorb rounding.
pub const BRACKET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScenario {
    mu: Vector,
    sigma: Matrix,
    noise_cov: Matrix,
    model: TrueLinearModel,
}

impl ShiftScenario {
    pub fn new(mu: Vector, sigma: Matrix, noise_cov: Matrix, model: TrueLinearModel) -> Result<Self> {
        let d = mu.len();
        if sigma.shape() != (d, d) || noise_cov.shape() != (d, d) || model.beta.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "mu has {d} entries; sigma {:?}, noise {:?}, beta {}",
                sigma.shape(),
                noise_cov.shape(),
                model.beta.len()
            )));
        }
        check_psd(&sigma)?;
        check_psd(&noise_cov)?;
        Ok(Self { mu, sigma, noise_cov, model })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &Vector {
        &self.mu
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    pub fn model(&self) -> &TrueLinearModel {
        &self.model
    }

    fn population(&self, mean1: Vector) -> Result<PopulationSpec> {
        PopulationSpec::new(
            GroupSpec::new(self.mu.clone(), self.sigma.clone(), 0.5)?,
            GroupSpec::new(mean1, self.sigma.clone(), 0.5)?,
            self.model.clone(),
            NoiseSpec::gaussian(self.noise_cov.clone())?,
        )
    }

    /// Group means `μ` and `-μ`.
    pub fn initial_population(&self) -> Result<PopulationSpec> {
        self.population(-&self.mu)
    }

    /// Both group means at `μ`.
    pub fn shifted_population(&self) -> Result<PopulationSpec> {
        self.population(self.mu.clone())
    }

    /// Weight `t` on the initial distribution, `1 - t` on the shifted one.
    pub fn training_population(&self, t: f64) -> Result<PopulationSpec> {
        mixture_population(&self.initial_population()?, &self.shifted_population()?, t)
    }
}

/// `c1 = 2 a'μ` and `c2 = 2 (A^-1 μ μ' a)'μ` with `A = Σ + Σ_u`, `a = A^-1 Σ_u β`.
pub fn shift_constants(sc: &ShiftScenario) -> Result<(f64, f64)> {
    let a_mat = &sc.sigma + &sc.noise_cov;
    let a = spd_solve_vec(&a_mat, &(&sc.noise_cov * &sc.model.beta))?;
    let a_inv_mu = spd_solve_vec(&a_mat, &sc.mu)?;
    let c1 = 2.0 * a.dot(&sc.mu);
    let c2 = 2.0 * sc.mu.dot(&a) * a_inv_mu.dot(&sc.mu);
    Ok((c1, c2))
}

/// `Λ' = (Σ + 2t(1-t)μμ' + Σ_u)^-1 Σ_u`, through a rank-one update of `(Σ + Σ_u)^-1`.
pub fn lambda_prime(sc: &ShiftScenario, t: f64) -> Result<Matrix> {
    check_t(t)?;
    let base = spd_inverse(&(&sc.sigma + &sc.noise_cov))?;
    let inv = sherman_morrison_inverse(&base, &(&sc.mu * (2.0 * t * (1.0 - t))), &sc.mu)?;
    Ok(inv * &sc.noise_cov)
}

/// Direct solve of the same system, without the rank-one identity.
pub fn lambda_prime_direct(sc: &ShiftScenario, t: f64) -> Result<Matrix> {
    check_t(t)?;
    let a = &sc.sigma + &sc.noise_cov + &sc.mu * sc.mu.transpose() * (2.0 * t * (1.0 - t));
    spd_solve(&a, &sc.noise_cov)
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("mixture weight t must lie in [0, 1], got {t}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixturePoint {
    pub t: f64,
    /// `(Λ'β)'(μ_0 - μ_1)` on the training mixture, which is what the bracket bounds.
    pub signed: f64,
    /// `SLD(o+g, res) = CLD(o+g, res)` on the shifted distribution.
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub sld_no_group: f64,
}

/// Exact with-group residual discrepancy on the shifted distribution after training
/// on the `t`-mixture, together with the bracket `t(c1 ∓ |c2|)`.
///
/// Fails with `BoundViolation` if the exact value leaves the bracket by more than
/// [`BRACKET_TOL`].
pub fn sld_at_mixture(sc: &ShiftScenario, t: f64) -> Result<MixturePoint> {
    check_t(t)?;
    let (c1, c2) = shift_constants(sc)?;
    let train = sc.training_population(t)?;
    let test = sc.shifted_population()?;
    let with_group = decomposed_residual_report(&train, &test, ObservationMode::WithGroup)?;
    let no_group = decomposed_residual_report(&train, &test, ObservationMode::NoGroup)?;
    let signed = with_group.signed_sld_res;
    let (lower, upper) = (t * (c1 - c2.abs()), t * (c1 + c2.abs()));
    if signed < lower - BRACKET_TOL || signed > upper + BRACKET_TOL {
        return Err(Error::BoundViolation { t, value: signed, lower, upper });
    }
    Ok(MixturePoint { t, signed, value: with_group.sld_res, lower, upper, sld_no_group: no_group.sld_res })
}

/// `t c1 / (1 + 2t(1-t) μ'(Σ+Σ_u)^-1 μ)`: closed form of [`MixturePoint::signed`].
pub fn signed_sld_closed_form(sc: &ShiftScenario, t: f64) -> Result<f64> {
    check_t(t)?;
    let (c1, _) = shift_constants(sc)?;
    let q = quad_form(&sc.mu, &spd_inverse(&(&sc.sigma + &sc.noise_cov))?, &sc.mu);
    Ok(t * c1 / (1.0 + 2.0 * t * (1.0 - t) * q))
}

/// Mixture weight after accumulating `k` shifted batches on top of one initial batch.
pub fn batch_weight(k: usize) -> f64 {
    1.0 / (k as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PersistenceEntry {
    pub t: f64,
    pub k: usize,
    pub sld: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sld_no_group: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PersistenceCurve {
    pub entries: Vec<PersistenceEntry>,
}

pub const PERSISTENCE_HEADER: [&str; 6] = ["t", "K", "sld", "lower", "upper", "sld_no_group"];

impl PersistenceCurve {
    /// Writes `t,K,sld,lower,upper,sld_no_group`; missing bounds are left empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PERSISTENCE_HEADER)?;
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                format!("{:e}", e.t),
                e.k.to_string(),
                format!("{:e}", e.sld),
                fmt(e.lower),
                fmt(e.upper),
                format!("{:e}", e.sld_no_group),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `t = 1/(K+1)` for `K = 0..=max_k`.
pub fn persistence_curve(sc: &ShiftScenario, max_k: usize) -> Result<PersistenceCurve> {
    if max_k < 1 {
        return Err(Error::InvalidArgument("max_k must be at least 1".into()));
    }
    let entries = (0..=max_k)
        .map(|k| {
            let p = sld_at_mixture(sc, batch_weight(k))?;
            Ok(PersistenceEntry {
                t: p.t,
                k,
                sld: p.value,
                lower: Some(p.lower),
                upper: Some(p.upper),
                sld_no_group: p.sld_no_group,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PersistenceCurve { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn constants_examples() {
        let sc = fixtures::unit_shift_scenario();
        let (c1, c2) = shift_constants(&sc).unwrap();
        assert!((c1 - 1.0).abs() < 1e-15 && (c2 - 0.5).abs() < 1e-15);

        let zero_mu = ShiftScenario::new(Vector::zeros(2), Matrix::identity(2, 2), Matrix::identity(2, 2),
            TrueLinearModel::new(Vector::from_element(2, 1.0), 0.0)).unwrap();
        assert_eq!(shift_constants(&zero_mu).unwrap(), (0.0, 0.0));

        let noiseless = ShiftScenario::new(Vector::from_element(2, 1.0), Matrix::identity(2, 2), Matrix::zeros(2, 2),
            TrueLinearModel::new(Vector::from_element(2, 1.0), 0.0)).unwrap();
        assert_eq!(shift_constants(&noiseless).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn mixture_examples() {
        let sc = fixtures::unit_shift_scenario();
        let p = sld_at_mixture(&sc, 0.5).unwrap();
        assert!((p.value - 0.4).abs() < 1e-14);
        assert!((p.lower - 0.25).abs() < 1e-15 && (p.upper - 0.75).abs() < 1e-15);
        let p0 = sld_at_mixture(&sc, 0.0).unwrap();
        assert_eq!((p0.value, p0.lower, p0.upper), (0.0, 0.0, 0.0));
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            assert_eq!(sld_at_mixture(&sc, t).unwrap().sld_no_group, 0.0);
        }
        assert!(sld_at_mixture(&sc, -0.1).is_err());
    }

    #[test]
    fn bracket_on_random_scenarios() {
        for seed in 0..50 {
            let sc = fixtures::random_shift_scenario(1 + seed as usize % 3, seed);
            for i in 0..=20 {
                let t = i as f64 / 20.0;
                let p = sld_at_mixture(&sc, t).unwrap();
                assert!(p.lower - BRACKET_TOL <= p.signed && p.signed <= p.upper + BRACKET_TOL);
                let closed = signed_sld_closed_form(&sc, t).unwrap();
                assert!((closed - p.signed).abs() < 1e-10, "seed {seed} t {t}: {closed} vs {}", p.signed);
            }
        }
    }

    #[test]
    fn rank_one_lambda_prime() {
        for seed in 0..20 {
            let sc = fixtures::random_shift_scenario(1 + seed as usize % 4, seed);
            for t in [0.0, 0.1, 0.5, 0.9] {
                let a = lambda_prime(&sc, t).unwrap();
                let b = lambda_prime_direct(&sc, t).unwrap();
                assert!((a - b).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn curve_decay() {
        let sc = fixtures::unit_shift_scenario();
        let curve = persistence_curve(&sc, 20).unwrap();
        let base = curve.entries[0].sld;
        assert_eq!(curve.entries[0].t, 1.0);
        assert!((base - sld_at_mixture(&sc, 1.0).unwrap().value).abs() < 1e-15);
        for e in &curve.entries {
            let ratio = e.sld / base;
            let target = 1.0 / (e.k as f64 + 1.0);
            assert!((ratio - target).abs() <= 0.25 * target, "K={} ratio {ratio}", e.k);
            assert!(e.lower.unwrap() - BRACKET_TOL <= e.sld && e.sld <= e.upper.unwrap() + BRACKET_TOL);
            assert_eq!(e.sld_no_group, 0.0);
        }
        assert!(persistence_curve(&sc, 0).is_err());
    }

    #[test]
    fn curve_csv() {
        let sc = fixtures::unit_shift_scenario();
        let mut buf = Vec::new();
        persistence_curve(&sc, 2).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,K,sld,lower,upper,sld_no_group"));
        assert_eq!(lines.count(), 3);
    }
}
