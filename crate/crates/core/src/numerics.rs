//! Dense linear algebra and integration primitives.
//!
//! Covariances follow the population convention: the divisor is the total weight
//! (or `n`), never `n - 1`. Dataset tooling often defaults to the unbiased divisor,
//! so mixing the two silently shifts every attenuation factor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Absolute asymmetry tolerance (scaled by the largest entry when that exceeds 1).
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Denominators of a rank-one update below this magnitude are treated as singular.
pub const SINGULAR_UPDATE_TOL: f64 = 1e-12;
/// Maximum bisection depth for adaptive Simpson.
pub const SIMPSON_MAX_DEPTH: usize = 40;
/// Maximum number of accepted-or-split intervals before quadrature gives up.
pub const SIMPSON_INTERVAL_BUDGET: usize = 1 << 22;
const SIMPSON_MIN_DEPTH: usize = 4;

fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Checks squareness and symmetry within [`SYMMETRY_TOL`].
pub fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = max_abs(a).max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factors a symmetric matrix; fails on the first non-positive pivot.
    pub fn factor(a: &Matrix) -> Result<Self> {
        Self::factor_with_tolerance(a, 0.0)
    }

    /// Factors a symmetric matrix, rejecting pivots `<= rel_tol * max diag(A)`.
    ///
    /// A positive `rel_tol` turns near-singular Gram matrices into errors instead
    /// of returning a wildly amplified solve.
    pub fn factor_with_tolerance(a: &Matrix, rel_tol: f64) -> Result<Self> {
        check_symmetric(a)?;
        let a = symmetrize(a);
        let n = a.nrows();
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)]));
        let floor = rel_tol * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) || !d.is_finite() || d <= 0.0 {
                return Err(Error::NotSpd { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        let mut x = b.clone();
        for c in 0..x.ncols() {
            let mut col = x.column(c).clone_owned();
            self.solve_in_place(col.as_mut_slice());
            x.set_column(c, &col);
        }
        x
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let l = &self.lower;
        let n = l.nrows();
        // forward: L w = b
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        // backward: L' x = w
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
    }

    pub fn inverse(&self) -> Matrix {
        symmetrize(&self.solve(&Matrix::identity(self.dim(), self.dim())))
    }
}

/// Solves `A X = B` for symmetric positive-definite `A` through a Cholesky factor.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "spd_solve: a is {}x{}, b has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

pub fn spd_solve_vec(a: &Matrix, b: &Vector) -> Result<Vector> {
    if a.ncols() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "spd_solve: a is {}x{}, b has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    Ok(Cholesky::factor(a)?.solve_vec(b))
}

pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Cholesky::factor(a)?.inverse())
}

/// Inverse of `A + u v'` from `A^-1`:
/// `A^-1 - A^-1 u v' A^-1 / (1 + v' A^-1 u)`.
pub fn sherman_morrison_inverse(a_inv: &Matrix, u: &Vector, v: &Vector) -> Result<Matrix> {
    let n = a_inv.nrows();
    if a_inv.ncols() != n || u.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "sherman_morrison: A^-1 is {}x{}, u has {}, v has {}",
            n,
            a_inv.ncols(),
            u.len(),
            v.len()
        )));
    }
    let a_inv_u = a_inv * u;
    let v_a_inv = v.transpose() * a_inv;
    let denominator = 1.0 + v.dot(&a_inv_u);
    if denominator.abs() <= SINGULAR_UPDATE_TOL {
        return Err(Error::SingularUpdate { denominator });
    }
    Ok(a_inv - (a_inv_u * v_a_inv) / denominator)
}

/// Factor `F` with `F F' = A` for symmetric positive semi-definite `A`.
///
/// Uses an eigendecomposition so singular covariances (e.g. zero noise) are fine.
pub fn psd_factor(a: &Matrix) -> Result<Matrix> {
    check_symmetric(a)?;
    let a = symmetrize(a);
    let scale = max_abs(&a).max(1.0);
    let eig = SymmetricEigen::new(a);
    let mut sqrt_vals = eig.eigenvalues.clone();
    for v in sqrt_vals.iter_mut() {
        if *v < -1e-10 * scale {
            return Err(Error::NotPsd { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&sqrt_vals))
}

pub fn check_psd(a: &Matrix) -> Result<()> {
    psd_factor(a).map(|_| ())
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` with absolute tolerance `tol`.
///
/// Each accepted panel carries the Richardson correction, which makes the rule
/// exact for polynomials up to degree five.
pub fn integrate_1d<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "integration bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let eval = |x: f64| -> Result<f64> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonConvergence(format!("integrand is not finite at x = {x}")))
        }
    };

    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (eval(lo)?, eval(m)?, eval(hi)?);
    let mut stack = vec![Panel {
        a: lo,
        b: hi,
        fa,
        fm,
        fb,
        whole: simpson(lo, hi, fa, fm, fb),
        tol,
        depth: 0,
    }];
    let mut total = 0.0;
    let mut panels = 0usize;
    while let Some(p) = stack.pop() {
        panels += 1;
        if panels > SIMPSON_INTERVAL_BUDGET {
            return Err(Error::NonConvergence(format!(
                "exceeded {SIMPSON_INTERVAL_BUDGET} panels on [{lo}, {hi}]"
            )));
        }
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let (flm, frm) = (eval(lm)?, eval(rm)?);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if p.depth >= SIMPSON_MIN_DEPTH && delta.abs() <= 15.0 * p.tol {
            total += left + right + delta / 15.0;
            continue;
        }
        if p.depth + 1 > SIMPSON_MAX_DEPTH {
            return Err(Error::NonConvergence(format!(
                "reached depth {SIMPSON_MAX_DEPTH} near x = {m} with error estimate {:e}",
                delta.abs() / 15.0
            )));
        }
        let child_tol = 0.5 * p.tol;
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol: child_tol,
            depth: p.depth + 1,
        });
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol: child_tol,
            depth: p.depth + 1,
        });
    }
    Ok(total)
}

/// Weighted mean and population covariance (divisor = sum of weights).
///
/// Single pass with West's weighted update, so a caller can stream rows.
pub fn weighted_moments(points: &[Vector], weights: &[f64]) -> Result<(Vector, Matrix)> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "points have dimensions {d} and {}",
            p.len()
        )));
    }
    weighted_moments_by(points.len(), d, |i, buf| buf.copy_from_slice(points[i].as_slice()), weights)
}

/// [`weighted_moments`] over the rows of an `n x d` matrix.
pub fn weighted_row_moments(rows: &Matrix, weights: &[f64]) -> Result<(Vector, Matrix)> {
    if rows.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if rows.nrows() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} weights",
            rows.nrows(),
            weights.len()
        )));
    }
    weighted_moments_by(
        rows.nrows(),
        rows.ncols(),
        |i, buf| {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = rows[(i, j)];
            }
        },
        weights,
    )
}

fn weighted_moments_by<F>(n: usize, d: usize, fill: F, weights: &[f64]) -> Result<(Vector, Matrix)>
where
    F: Fn(usize, &mut [f64]),
{
    if let Some((index, &weight)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
        return Err(Error::NegativeWeight { index, weight });
    }
    let mut mean = vec![0.0; d];
    let mut comoment = Matrix::zeros(d, d);
    let mut delta = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut wsum = 0.0;
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        fill(i, &mut x);
        let new_wsum = wsum + w;
        for j in 0..d {
            delta[j] = x[j] - mean[j];
            mean[j] += delta[j] * w / new_wsum;
        }
        // C += w * delta * (x - new_mean)'
        for r in 0..d {
            for c in 0..d {
                comoment[(r, c)] += w * delta[r] * (x[c] - mean[c]);
            }
        }
        wsum = new_wsum;
    }
    if !(wsum > 0.0) {
        return Err(Error::EmptyInput);
    }
    Ok((Vector::from_vec(mean), symmetrize(&(comoment / wsum))))
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `E|X|` for `X ~ N(m, s^2)`.
pub fn folded_normal_mean(m: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return m.abs();
    }
    s * (2.0 / std::f64::consts::PI).sqrt() * (-m * m / (2.0 * s * s)).exp()
        + m * (1.0 - 2.0 * std_normal_cdf(-m / s))
}

/// Quadratic form `a' M b`.
pub fn quad_form(a: &Vector, m: &Matrix, b: &Vector) -> f64 {
    (a.transpose() * m * b)[(0, 0)]
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::EmptyInput);
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch("ragged or empty matrix rows".into()));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use rand::Rng;

    #[test]
    fn spd_solve_identity_returns_rhs() {
        let mut r = rng(1);
        let b = random_matrix(&mut r, 3, 4);
        let x = spd_solve(&Matrix::identity(3, 3), &b).unwrap();
        assert!(max_abs_diff(&x, &b) < 1e-15);
    }

    #[test]
    fn spd_solve_diagonal() {
        let a = Matrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let b = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let x = spd_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((x[(1, 0)] - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn spd_solve_residual_on_random_spd() {
        let mut r = rng(7);
        for n in 1..=20 {
            let a = random_spd(&mut r, n);
            let b = random_matrix(&mut r, n, 3);
            let x = spd_solve(&a, &b).unwrap();
            let resid = (&a * &x - &b).norm();
            assert!(resid <= 1e-9 * b.norm(), "n={n} resid={resid}");
            let inv = spd_solve(&a, &a).unwrap();
            assert!(max_abs_diff(&inv, &Matrix::identity(n, n)) < 1e-9);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite_and_mismatched() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(spd_solve(&a, &b), Err(Error::NotSpd { index: 1, .. })));
        let b3 = Matrix::zeros(3, 1);
        assert!(matches!(spd_solve(&Matrix::identity(2, 2), &b3), Err(Error::DimensionMismatch(_))));
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(spd_solve(&asym, &b), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn spd_solve_absorbs_rounding_asymmetry() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.5 + 1e-13, 0.5, 1.0]);
        assert!(spd_solve(&a, &Matrix::identity(2, 2)).is_ok());
    }

    #[test]
    fn sherman_morrison_trivial_cases() {
        let id = Matrix::identity(2, 2);
        let z = Vector::zeros(2);
        assert_eq!(sherman_morrison_inverse(&id, &z, &z).unwrap(), id);
        let one = Matrix::identity(1, 1);
        let u = Vector::from_element(1, 1.0);
        let out = sherman_morrison_inverse(&one, &u, &u).unwrap();
        assert!((out[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sherman_morrison_matches_direct_inverse() {
        // Oracle: LU-based general inverse of A + uv', independent of the update formula.
        let mut r = rng(11);
        for _ in 0..50 {
            let n = r.random_range(1..8);
            let a = random_matrix(&mut r, n, n) + Matrix::identity(n, n) * 3.0;
            let u = random_vector(&mut r, n);
            let v = random_vector(&mut r, n);
            let a_inv = a.clone().try_inverse().unwrap();
            let updated = &a + &u * v.transpose();
            let got = sherman_morrison_inverse(&a_inv, &u, &v).unwrap();
            let prod = &got * &updated;
            assert!(max_abs_diff(&prod, &Matrix::identity(n, n)) < 1e-9);
        }
    }

    #[test]
    fn sherman_morrison_agrees_with_spd_inverse() {
        let mut r = rng(12);
        for _ in 0..50 {
            let n = r.random_range(1..8);
            let a = random_spd(&mut r, n);
            let u = random_vector(&mut r, n);
            let a_inv = spd_inverse(&a).unwrap();
            let got = sherman_morrison_inverse(&a_inv, &u, &u).unwrap();
            let direct = spd_inverse(&(&a + &u * u.transpose())).unwrap();
            assert!(max_abs_diff(&got, &direct) < 1e-8);
        }
    }

    #[test]
    fn sherman_morrison_singular_update() {
        let id = Matrix::identity(1, 1);
        let u = Vector::from_element(1, 1.0);
        let v = Vector::from_element(1, -1.0);
        assert!(matches!(
            sherman_morrison_inverse(&id, &u, &v),
            Err(Error::SingularUpdate { .. })
        ));
    }

    #[test]
    fn integrate_trivial() {
        assert!((integrate_1d(|_| 1.0, 0.0, 1.0, 1e-12).unwrap() - 1.0).abs() < 1e-14);
        assert!((integrate_1d(|x| x, 0.0, 2.0, 1e-12).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn integrate_normal_pdf() {
        let tol = 1e-10;
        let v = integrate_1d(std_normal_pdf, -8.0, 8.0, tol).unwrap();
        // mass outside +-8 is ~1.2e-15
        assert!((v - 1.0).abs() <= tol, "{v}");
    }

    #[test]
    fn integrate_polynomials_up_to_degree_five() {
        let mut r = rng(3);
        for deg in 0..=5 {
            let coefs: Vec<f64> = (0..=deg).map(|_| r.random_range(-2.0..2.0)).collect();
            let (lo, hi) = (-1.3, 2.1);
            let p = |x: f64| coefs.iter().rev().fold(0.0, |acc, c| acc * x + c);
            let antideriv = |x: f64| {
                coefs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * x.powi(k as i32 + 1) / (k as f64 + 1.0))
                    .sum::<f64>()
            };
            let tol = 1e-9;
            let got = integrate_1d(p, lo, hi, tol).unwrap();
            assert!((got - (antideriv(hi) - antideriv(lo))).abs() <= tol, "deg {deg}");
        }
    }

    #[test]
    fn integrate_reports_errors() {
        assert!(matches!(integrate_1d(|x| x, 1.0, 0.0, 1e-6), Err(Error::InvalidArgument(_))));
        assert!(matches!(integrate_1d(|x| x, 0.0, 1.0, 0.0), Err(Error::InvalidArgument(_))));
        // 1/sqrt(x) near 0 with a vanishing tolerance cannot converge within depth 40
        let r = integrate_1d(|x: f64| 1.0 / x.abs().max(1e-300).sqrt(), 0.0, 1.0, 1e-15);
        assert!(matches!(r, Err(Error::NonConvergence(_))));
    }

    #[test]
    fn weighted_moments_trivial() {
        let pts = vec![Vector::from_element(1, 0.0), Vector::from_element(1, 2.0)];
        let (m, c) = weighted_moments(&pts, &[1.0, 1.0]).unwrap();
        assert_eq!(m[0], 1.0);
        assert_eq!(c[(0, 0)], 1.0);

        let one = vec![Vector::from_vec(vec![3.0, -1.0])];
        let (m, c) = weighted_moments(&one, &[1.0]).unwrap();
        assert_eq!(m, one[0]);
        assert_eq!(c, Matrix::zeros(2, 2));
    }

    #[test]
    fn weighted_moments_errors() {
        let pts = vec![Vector::from_element(1, 0.0)];
        assert!(matches!(weighted_moments(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(weighted_moments(&pts, &[0.0]), Err(Error::EmptyInput)));
        assert!(matches!(
            weighted_moments(&pts, &[-1.0]),
            Err(Error::NegativeWeight { index: 0, .. })
        ));
    }

    #[test]
    fn weighted_moments_match_two_pass_reference() {
        let mut r = rng(5);
        let d = 4;
        let pts: Vec<Vector> = (0..500).map(|_| random_vector(&mut r, d) * 3.0).collect();
        let w: Vec<f64> = (0..500).map(|_| r.random_range(0.0..2.0)).collect();
        let (m, c) = weighted_moments(&pts, &w).unwrap();

        let wsum: f64 = w.iter().sum();
        let mut ref_mean = Vector::zeros(d);
        for (p, wi) in pts.iter().zip(&w) {
            ref_mean += p * *wi;
        }
        ref_mean /= wsum;
        let mut ref_cov = Matrix::zeros(d, d);
        for (p, wi) in pts.iter().zip(&w) {
            let dv = p - &ref_mean;
            ref_cov += &dv * dv.transpose() * *wi;
        }
        ref_cov /= wsum;
        assert!((m - ref_mean).amax() < 1e-10);
        assert!(max_abs_diff(&c, &ref_cov) < 1e-10);
    }

    #[test]
    fn uniform_weights_equal_unweighted_population_moments() {
        let mut r = rng(6);
        let rows = random_matrix(&mut r, 200, 3);
        let (m, c) = weighted_row_moments(&rows, &vec![0.37; 200]).unwrap();
        let mean = rows.row_mean().transpose();
        let centered = Matrix::from_fn(200, 3, |i, j| rows[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / 200.0;
        assert!((m - mean).amax() < 1e-12);
        assert!(max_abs_diff(&c, &cov) < 1e-12);
    }

    #[test]
    fn psd_factor_reconstructs_and_handles_singular() {
        let mut r = rng(8);
        let a = random_spd(&mut r, 4);
        let f = psd_factor(&a).unwrap();
        assert!(max_abs_diff(&(&f * f.transpose()), &a) < 1e-10);
        let z = psd_factor(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z, Matrix::zeros(3, 3));
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_factor(&bad), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn folded_normal_mean_matches_quadrature() {
        for &(m, s) in &[(0.0, 1.0), (1.5, 0.7), (-2.0, 3.0), (0.3, 0.01)] {
            let f = |x: f64| x.abs() * std_normal_pdf((x - m) / s) / s;
            let (lo, hi) = (m - 12.0 * s, m + 12.0 * s);
            // split at the kink of |x| so each piece is smooth
            let q = if lo < 0.0 && hi > 0.0 {
                integrate_1d(f, lo, 0.0, 1e-12).unwrap() + integrate_1d(f, 0.0, hi, 1e-12).unwrap()
            } else {
                integrate_1d(f, lo, hi, 1e-12).unwrap()
            };
            assert!((folded_normal_mean(m, s) - q).abs() < 1e-9, "m={m} s={s}");
        }
        assert_eq!(folded_normal_mean(-2.5, 0.0), 2.5);
    }
}
