//! Reference populations and seeded random generators used by tests and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discrepancy::{FinitePopulation, Individual};
use crate::numerics::{Matrix, Vector};
use crate::population::{GroupSpec, NoiseFamily, NoiseSpec, PopulationSpec, TrueLinearModel};
use crate::shift::ShiftScenario;

/// One-dimensional two-group example with `y = z` and `u ~ N(0, 1)`:
/// group 0 is `N(1, 0.5)` with probability 2/3, group 1 is `N(4, 1)` with probability 1/3.
///
/// Pooled variance 8/3, attenuated slope 8/11, intercept 6/11.
pub fn two_group_1d() -> PopulationSpec {
    PopulationSpec::new(
        GroupSpec::new(Vector::from_element(1, 1.0), Matrix::from_element(1, 1, 0.5), 2.0 / 3.0)
            .expect("valid group"),
        GroupSpec::new(Vector::from_element(1, 4.0), Matrix::from_element(1, 1, 1.0), 1.0 / 3.0)
            .expect("valid group"),
        TrueLinearModel::new(Vector::from_element(1, 1.0), 0.0),
        NoiseSpec::isotropic(1, 1.0).expect("valid noise"),
    )
    .expect("valid population")
}

/// `μ = Σ = Σ_u = β = 1` in one dimension.
pub fn unit_shift_scenario() -> ShiftScenario {
    ShiftScenario::new(
        Vector::from_element(1, 1.0),
        Matrix::identity(1, 1),
        Matrix::identity(1, 1),
        TrueLinearModel::new(Vector::from_element(1, 1.0), 0.0),
    )
    .expect("valid scenario")
}

fn random_spd(rng: &mut impl Rng, d: usize, ridge: f64) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + Matrix::identity(d, d) * ridge;
    (&m + m.transpose()) * 0.5
}

/// Random two-group population of dimension `d`, deterministic in `seed`.
///
/// Group means differ by O(1), covariances are well conditioned, group weights lie
/// in [0.25, 0.75] and the noise family cycles through Gaussian, Laplace and a
/// three-point discrete law.
pub fn random_population(d: usize, seed: u64) -> PopulationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_9a7e);
    let w1: f64 = rng.random_range(0.25..0.75);
    let m0 = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let m1 = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)) + Vector::from_element(d, 0.8);
    let c0 = random_spd(&mut rng, d, 0.3);
    let c1 = random_spd(&mut rng, d, 0.3);
    let beta = Vector::from_fn(d, |_, _| {
        let b: f64 = rng.random_range(0.5..1.5);
        if rng.random_bool(0.3) { -b } else { b }
    });
    let alpha = rng.random_range(-1.0..1.0);
    let noise_cov = Matrix::from_diagonal(&Vector::from_fn(d, |_, _| rng.random_range(0.2..1.5)));
    let family = match seed % 3 {
        0 => NoiseFamily::Gaussian,
        1 => NoiseFamily::Laplace,
        _ => NoiseFamily::Discrete { support: vec![-1.0, 0.0, 2.0], probs: vec![0.4, 0.4, 0.2] },
    };
    PopulationSpec::new(
        GroupSpec::new(m0, c0, 1.0 - w1).expect("valid group"),
        GroupSpec::new(m1, c1, w1).expect("valid group"),
        TrueLinearModel::new(beta, alpha),
        NoiseSpec::new(noise_cov, family).expect("valid noise"),
    )
    .expect("valid population")
}

/// Random shift scenario of dimension `d`, deterministic in `seed`.
pub fn random_shift_scenario(d: usize, seed: u64) -> ShiftScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b1f_7000);
    let mu = Vector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
    let sigma = random_spd(&mut rng, d, 0.2);
    let noise = random_spd(&mut rng, d, 0.1);
    let beta = Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let alpha = rng.random_range(-1.0..1.0);
    ShiftScenario::new(mu, sigma, noise, TrueLinearModel::new(beta, alpha)).expect("valid scenario")
}

fn two_type_population(losses_g1: (f64, f64)) -> FinitePopulation {
    // equal-sized groups; group 0 is 1/4 type 1, group 1 is 3/4 type 1
    let atom = |z_id, group, own: (f64, f64), probability| Individual {
        z_id,
        group,
        loss_g0: own.0,
        loss_g1: own.1,
        probability,
    };
    let (a, b) = losses_g1;
    FinitePopulation::new(vec![
        atom(1, 0, (1.0, a), 0.125),
        atom(2, 0, (2.0, b), 0.375),
        atom(1, 1, (1.0, a), 0.375),
        atom(2, 1, (2.0, b), 0.125),
    ])
    .expect("valid finite population")
}

/// Loss 1 on type 1 and 2 on type 2 regardless of group: CLD 0, SLD 0.5.
pub fn cld_zero_sld_positive() -> FinitePopulation {
    two_type_population((1.0, 2.0))
}

/// Same losses under `g = 0`, swapped under `g = 1`: SLD 0, CLD 1.
pub fn sld_zero_cld_positive() -> FinitePopulation {
    two_type_population((2.0, 1.0))
}
