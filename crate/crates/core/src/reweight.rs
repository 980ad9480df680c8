//! Mean-equalising reweighting and the LP solver behind it.
//!
//! The reweighting program keeps as much mass as possible while making the weighted
//! feature and target means of the two groups coincide:
//!
//! ```text
//! max ‖p₁‖₁  s.t.  p₁'X₁ = p₂'X₂,  p₁'y₁ = p₂'y₂,  ‖p₁‖₁ = ‖p₂‖₁,  0 ≤ p ≤ 1
//! ```
//!
//! It is solved with a dense two-phase revised simplex over bounded variables.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::empirical::{stream, Dataset, Seed};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const PIVOT_TOL: f64 = 1e-10;
pub const OPTIMALITY_TOL: f64 = 1e-9;
pub const REFACTOR_EVERY: usize = 50;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
pub const DEGENERATE_SWITCH: usize = 50;

/// `max c'x  s.t.  A x = b,  lower ≤ x ≤ upper`. Lower bounds must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vector,
    pub eq_matrix: Matrix,
    pub eq_rhs: Vector,
    pub lower: Vector,
    pub upper: Vector,
}

impl LpProblem {
    pub fn new(objective: Vector, eq_matrix: Matrix, eq_rhs: Vector, lower: Vector, upper: Vector) -> Result<Self> {
        let n = objective.len();
        let m = eq_rhs.len();
        if eq_matrix.shape() != (m, n) || lower.len() != n || upper.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "objective {n}, matrix {:?}, rhs {m}, bounds {}/{}",
                eq_matrix.shape(),
                lower.len(),
                upper.len()
            )));
        }
        for j in 0..n {
            if !lower[j].is_finite() || upper[j].is_nan() || lower[j] > upper[j] {
                return Err(Error::InvalidArgument(format!(
                    "variable {j} has bounds [{}, {}]",
                    lower[j], upper[j]
                )));
            }
        }
        Ok(Self { objective, eq_matrix, eq_rhs, lower, upper })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rhs.len()
    }

    /// `max |A x - b|`.
    pub fn equality_residual(&self, x: &Vector) -> f64 {
        (&self.eq_matrix * x - &self.eq_rhs).amax()
    }

    /// Largest amount by which `x` leaves its box.
    pub fn bound_violation(&self, x: &Vector) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, &v)| (self.lower[j] - v).max(v - self.upper[j]).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: objective, one line per equality row, bounds.
    pub fn write_debug<W: Write>(&self, mut out: W) -> Result<()> {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        writeln!(out, "vars {} rows {}", self.num_vars(), self.num_rows())?;
        writeln!(out, "max {}", join(&mut self.objective.iter().copied()))?;
        for i in 0..self.num_rows() {
            writeln!(out, "row {i}: {} = {:e}", join(&mut self.eq_matrix.row(i).iter().copied()), self.eq_rhs[i])?;
        }
        writeln!(out, "lower {}", join(&mut self.lower.iter().copied()))?;
        writeln!(out, "upper {}", join(&mut self.upper.iter().copied()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Final point; for `Infeasible` the phase-1 minimiser of infeasibility.
    pub weights: Vector,
    pub objective_value: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Simplex<'a> {
    lp: &'a LpProblem,
    m: usize,
    n: usize,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    b_inv: Matrix,
    pivots_since_refactor: usize,
    iterations: usize,
    max_iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LpProblem) -> Self {
        let (m, n) = (lp.num_rows(), lp.num_vars());
        let mut x: Vec<f64> = lp.lower.iter().copied().collect();
        let resid = &lp.eq_rhs - &lp.eq_matrix * Vector::from_column_slice(&x);
        let art_sign: Vec<f64> = resid.iter().map(|&r| if r >= 0.0 { 1.0 } else { -1.0 }).collect();
        x.extend(resid.iter().map(|r| r.abs()));
        let mut lower: Vec<f64> = lp.lower.iter().copied().collect();
        lower.extend(std::iter::repeat_n(0.0, m));
        let mut upper: Vec<f64> = lp.upper.iter().copied().collect();
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        let mut state = vec![VarState::AtLower; n];
        state.extend(std::iter::repeat_n(VarState::Basic, m));
        let mut cost = vec![0.0; n];
        cost.extend(std::iter::repeat_n(-1.0, m));
        Self {
            lp,
            m,
            n,
            b_inv: Matrix::from_diagonal(&Vector::from_column_slice(&art_sign)),
            art_sign,
            lower,
            upper,
            cost,
            x,
            state,
            basis: (n..n + m).collect(),
            pivots_since_refactor: 0,
            iterations: 0,
            max_iterations: 50 * (n + m) + 1000,
        }
    }

    fn column(&self, j: usize) -> Vector {
        if j < self.n {
            self.lp.eq_matrix.column(j).into_owned()
        } else {
            let mut e = Vector::zeros(self.m);
            e[j - self.n] = self.art_sign[j - self.n];
            e
        }
    }

    fn objective(&self) -> f64 {
        self.x.iter().zip(&self.cost).map(|(x, c)| x * c).sum()
    }

    /// Rebuilds `B^-1` from the basis columns and recomputes the basic values.
    fn refactor(&mut self) -> Result<()> {
        let mut b = Matrix::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            b.set_column(k, &self.column(j));
        }
        self.b_inv = b.try_inverse().ok_or_else(|| Error::NonConvergence("simplex basis became singular".into()))?;
        self.pivots_since_refactor = 0;
        let mut rhs = self.lp.eq_rhs.clone();
        for j in 0..self.n + self.m {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                rhs -= self.column(j) * self.x[j];
            }
        }
        let xb = &self.b_inv * rhs;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
        Ok(())
    }

    fn step(&mut self, bland: bool) -> Result<(Step, bool)> {
        let cb = Vector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost[j]));
        let duals = self.b_inv.tr_mul(&cb);
        let reduced_structural = self.lp.eq_matrix.tr_mul(&duals);
        let mut entering: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            let dir = match self.state[j] {
                VarState::Basic => continue,
                _ if self.upper[j] - self.lower[j] <= 0.0 => continue,
                VarState::AtLower => 1.0,
                VarState::AtUpper => -1.0,
            };
            let d = if j < self.n {
                self.cost[j] - reduced_structural[j]
            } else {
                self.cost[j] - duals[j - self.n] * self.art_sign[j - self.n]
            };
            if d * dir > OPTIMALITY_TOL {
                if bland {
                    entering = Some((j, dir, d));
                    break;
                }
                if entering.is_none_or(|(_, _, best)| d.abs() > best.abs()) {
                    entering = Some((j, dir, d));
                }
            }
        }
        let Some((q, dir, _)) = entering else {
            return Ok((Step::Optimal, false));
        };
        let w = &self.b_inv * self.column(q);

        let mut theta = self.upper[q] - self.lower[q];
        let mut leave: Option<(usize, VarState)> = None;
        for (k, &j) in self.basis.iter().enumerate() {
            let rate = -dir * w[k];
            let (limit, bound) = if rate < -PIVOT_TOL {
                ((self.x[j] - self.lower[j]).max(0.0) / -rate, VarState::AtLower)
            } else if rate > PIVOT_TOL && self.upper[j].is_finite() {
                ((self.upper[j] - self.x[j]).max(0.0) / rate, VarState::AtUpper)
            } else {
                continue;
            };
            let better = if limit < theta - PIVOT_TOL {
                true
            } else if let Some((kk, _)) = leave {
                limit <= theta + PIVOT_TOL && if bland { j < self.basis[kk] } else { w[k].abs() > w[kk].abs() }
            } else {
                false
            };
            if better {
                theta = theta.min(limit);
                leave = Some((k, bound));
            }
        }
        if !theta.is_finite() {
            return Ok((Step::Unbounded, false));
        }
        let degenerate = theta <= FEASIBILITY_TOL;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] -= dir * theta * w[k];
        }
        match leave {
            None => {
                // bound flip of the entering variable
                self.state[q] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
            }
            Some((r, bound)) => {
                let out = self.basis[r];
                self.x[out] = if bound == VarState::AtLower { self.lower[out] } else { self.upper[out] };
                self.state[out] = bound;
                self.x[q] += dir * theta;
                self.state[q] = VarState::Basic;
                self.basis[r] = q;
                let pivot = w[r];
                let row = self.b_inv.row(r) / pivot;
                for i in 0..self.m {
                    if i != r && w[i] != 0.0 {
                        let scaled = &row * w[i];
                        let mut target = self.b_inv.row_mut(i);
                        target -= scaled;
                    }
                }
                self.b_inv.set_row(r, &row);
                self.pivots_since_refactor += 1;
                if self.pivots_since_refactor >= REFACTOR_EVERY {
                    self.refactor()?;
                }
            }
        }
        Ok((Step::Moved, degenerate))
    }

    fn run(&mut self) -> Result<Step> {
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(Error::IterationLimit { iterations: self.iterations });
            }
            self.iterations += 1;
            let (step, degenerate) = self.step(degenerate_run >= DEGENERATE_SWITCH)?;
            match step {
                Step::Moved => {
                    degenerate_run = if degenerate { degenerate_run + 1 } else { 0 };
                }
                other => return Ok(other),
            }
        }
    }

    fn point(&self) -> Vector {
        Vector::from_iterator(
            self.n,
            (0..self.n).map(|j| self.x[j].clamp(self.lp.lower[j], self.lp.upper[j])),
        )
    }
}

/// Two-phase bounded-variable revised simplex.
///
/// Phase 1 starts every variable at its lower bound with one artificial per row and
/// minimises total artificial mass. Phase 2 pins the artificials to zero. Pricing is
/// Dantzig's largest reduced cost, switching to Bland's smallest-index rule after a run
/// of degenerate pivots.
pub fn simplex_solve(lp: &LpProblem) -> Result<LpSolution> {
    let mut s = Simplex::new(lp);
    s.run()?;
    s.refactor()?;
    let infeasibility = -s.objective();
    if infeasibility > FEASIBILITY_TOL * (1.0 + lp.eq_rhs.amax()) {
        return Ok(LpSolution {
            weights: s.point(),
            objective_value: f64::NAN,
            status: LpStatus::Infeasible,
            iterations: s.iterations,
        });
    }
    for i in 0..s.m {
        let a = s.n + i;
        s.upper[a] = 0.0;
        s.cost[a] = 0.0;
        if s.state[a] != VarState::Basic {
            s.x[a] = 0.0;
        }
    }
    for j in 0..s.n {
        s.cost[j] = lp.objective[j];
    }
    let status = match s.run()? {
        Step::Unbounded => LpStatus::Unbounded,
        _ => LpStatus::Optimal,
    };
    s.refactor()?;
    let weights = s.point();
    let objective_value = if status == LpStatus::Optimal { lp.objective.dot(&weights) } else { f64::INFINITY };
    Ok(LpSolution { weights, objective_value, status, iterations: s.iterations })
}

/// The reweighting LP together with the dataset row behind each variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ReweightLp {
    pub problem: LpProblem,
    /// `row_index[v]` is the dataset row weighted by variable `v`.
    pub row_index: Vec<usize>,
    /// Number of group-0 rows; variables `0..n_group0` form `p₁`.
    pub n_group0: usize,
}

impl ReweightLp {
    /// Scatters variable values back to one weight per dataset row.
    pub fn dataset_weights(&self, solution: &LpSolution, n_rows: usize) -> Vec<f64> {
        let mut w = vec![0.0; n_rows];
        for (v, &row) in self.row_index.iter().enumerate() {
            w[row] = solution.weights[v];
        }
        w
    }
}

/// Variables `(p₁, p₂)` over the group-0 and group-1 rows; `d + 1` rows match weighted
/// feature and target sums, one more matches the masses; objective is the mass of `p₁`.
pub fn build_reweight_lp(ds: &Dataset) -> Result<ReweightLp> {
    let g0: Vec<usize> = (0..ds.n()).filter(|&i| ds.group()[i] == 0).collect();
    let g1: Vec<usize> = (0..ds.n()).filter(|&i| ds.group()[i] == 1).collect();
    if g0.is_empty() {
        return Err(Error::GroupEmpty { group: 0 });
    }
    if g1.is_empty() {
        return Err(Error::GroupEmpty { group: 1 });
    }
    let d = ds.dim();
    let row_index: Vec<usize> = g0.iter().chain(&g1).copied().collect();
    let nv = row_index.len();
    let mut a = Matrix::zeros(d + 2, nv);
    for (v, &row) in row_index.iter().enumerate() {
        let sign = if v < g0.len() { 1.0 } else { -1.0 };
        for j in 0..d {
            a[(j, v)] = sign * ds.features()[(row, j)];
        }
        a[(d, v)] = sign * ds.target()[row];
        a[(d + 1, v)] = sign;
    }
    let objective = Vector::from_fn(nv, |v, _| if v < g0.len() { 1.0 } else { 0.0 });
    let problem = LpProblem::new(objective, a, Vector::zeros(d + 2), Vector::zeros(nv), Vector::from_element(nv, 1.0))?;
    Ok(ReweightLp { problem, row_index, n_group0: g0.len() })
}

/// Weighted per-group feature means and target mean.
pub fn weighted_group_means(ds: &Dataset, weights: &[f64]) -> Result<[(Vector, f64); 2]> {
    if weights.len() != ds.n() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} rows", weights.len(), ds.n())));
    }
    let mut out = [(Vector::zeros(ds.dim()), 0.0), (Vector::zeros(ds.dim()), 0.0)];
    let mut mass = [0.0; 2];
    for i in 0..ds.n() {
        let g = usize::from(ds.group()[i]);
        mass[g] += weights[i];
        out[g].0 += ds.features().row(i).transpose() * weights[i];
        out[g].1 += ds.target()[i] * weights[i];
    }
    for g in 0..2 {
        if !(mass[g] > 0.0) {
            return Err(Error::ZeroMass { group: g as u8 });
        }
        out[g].0 /= mass[g];
        out[g].1 /= mass[g];
    }
    Ok(out)
}

/// Draws `m` rows with replacement. Each group gets a share of `m` proportional to its
/// weight mass and samples its own rows with probability proportional to weight.
pub fn resample_by_weights(ds: &Dataset, weights: &[f64], m: usize, seed: Seed) -> Result<Dataset> {
    if weights.len() != ds.n() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} rows", weights.len(), ds.n())));
    }
    if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::NegativeWeight { index: i, weight: weights[i] });
    }
    let mut rows = [Vec::new(), Vec::new()];
    let mut w = [Vec::new(), Vec::new()];
    let mut mass = [0.0; 2];
    for i in 0..ds.n() {
        let g = usize::from(ds.group()[i]);
        rows[g].push(i);
        w[g].push(weights[i]);
        mass[g] += weights[i];
    }
    for g in 0..2 {
        if !(mass[g] > 0.0) {
            return Err(Error::ZeroMass { group: g as u8 });
        }
    }
    let m0 = ((m as f64) * mass[0] / (mass[0] + mass[1])).round() as usize;
    let counts = [m0.min(m), m - m0.min(m)];
    let mut picked = Vec::with_capacity(m);
    for g in 0..2 {
        let dist = WeightedIndex::new(&w[g]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = seed.rng(stream::RESAMPLE, g as u64);
        picked.extend((0..counts[g]).map(|_| rows[g][dist.sample(&mut rng)]));
    }
    Ok(ds.select_rows(&picked))
}

/// CSV with header `row_index,weight`.
pub fn write_weights_csv<W: Write>(out: W, weights: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_index", "weight"])?;
    for (i, v) in weights.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
