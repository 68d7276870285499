//! Dense revised simplex for `maximize c·x  s.t.  A·x ≤ b`, `x` free.
//!
//! The inequality form is solved through its standard-form dual
//! `minimize b·y  s.t.  Aᵀy = c, y ≥ 0`: the dual has one row per primal
//! variable, so the basis stays `n × n` even when `A` has thousands of rows.
//! The primal point is read off the final simplex multipliers and every
//! answer is checked against the primal constraints before it is returned.
//!
//! Pricing is Dantzig's rule with a Bland fallback on degenerate stretches;
//! all ties break on the lowest index, so the pivot sequence (and therefore
//! the returned vertex) is a deterministic function of the input.

use nalgebra::{DMatrix, DVector};

use super::linalg::LuFactors;
use super::NumericPolicy;
use crate::error::{Error, Result};

const RHS_PERTURBATION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub constraint_matrix: DMatrix<f64>,
    pub constraint_rhs: DVector<f64>,
}

impl LinearProgram {
    pub fn new(
        objective: DVector<f64>,
        constraint_matrix: DMatrix<f64>,
        constraint_rhs: DVector<f64>,
    ) -> Result<Self> {
        Error::check_dim(
            "lp: objective length",
            constraint_matrix.ncols(),
            objective.len(),
        )?;
        Error::check_dim(
            "lp: rhs length",
            constraint_matrix.nrows(),
            constraint_rhs.len(),
        )?;
        if objective.is_empty() {
            return Err(Error::InvalidArgument(
                "lp needs at least one variable".into(),
            ));
        }
        let finite = objective.iter().all(|v| v.is_finite())
            && constraint_matrix.iter().all(|v| v.is_finite())
            && constraint_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("lp data must be finite".into()));
        }
        Ok(Self {
            objective,
            constraint_matrix,
            constraint_rhs,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint_rhs.len()
    }

    /// Largest violation `max_i (A x − b)_i`, or `−∞` with no constraints.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.constraint_matrix * x;
        (0..self.n_constraints())
            .map(|i| ax[i] - self.constraint_rhs[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub point: Option<DVector<f64>>,
    pub objective_value: Option<f64>,
    /// Nonnegative constraint multipliers `y` with `Aᵀy = c` (present iff optimal).
    pub multipliers: Option<DVector<f64>>,
    /// Basis changes over both phases.
    pub pivots: usize,
}

impl LpSolution {
    fn status_only(status: LpStatus, pivots: usize) -> Self {
        Self {
            status,
            point: None,
            objective_value: None,
            multipliers: None,
            pivots,
        }
    }
}

pub fn lp_solve(lp: &LinearProgram) -> Result<LpSolution> {
    lp_solve_with(lp, &NumericPolicy::default())
}

pub fn lp_solve_with(lp: &LinearProgram, policy: &NumericPolicy) -> Result<LpSolution> {
    let n = lp.n_vars();
    let m = lp.n_constraints();
    let columns = lp.constraint_matrix.transpose();
    let cost: Vec<f64> = lp.constraint_rhs.iter().copied().collect();

    let outcome = solve_standard(&columns, &lp.objective, &cost, policy)?;
    let mut pivots = outcome.pivots();
    match outcome {
        StandardOutcome::Optimal {
            basis,
            basic_values,
            multipliers,
            pivots: _,
        } => {
            let x = multipliers;
            let mut y = DVector::zeros(m);
            for (pos, &var) in basis.iter().enumerate() {
                if var < m {
                    y[var] = basic_values[pos].max(0.0);
                }
            }
            let value = lp.objective.dot(&x);
            let violation = lp.max_violation(&x);
            let b_scale = 1.0 + lp.constraint_rhs.amax();
            if m > 0 && violation > policy.feasibility * b_scale {
                return Err(Error::ContractViolation(format!(
                    "simplex returned a point violating a constraint by {violation:e}"
                )));
            }
            let dual_gap = (lp.constraint_matrix.transpose() * &y - &lp.objective).amax();
            if dual_gap > policy.feasibility * (1.0 + lp.objective.amax()) {
                return Err(Error::ContractViolation(format!(
                    "simplex multipliers fail stationarity by {dual_gap:e}"
                )));
            }
            debug_assert_eq!(x.len(), n);
            Ok(LpSolution {
                status: LpStatus::Optimal,
                point: Some(x),
                objective_value: Some(value),
                multipliers: Some(y),
                pivots,
            })
        }
        StandardOutcome::Unbounded { .. } => {
            // An unbounded dual certifies an empty primal feasible set.
            Ok(LpSolution::status_only(LpStatus::Infeasible, pivots))
        }
        StandardOutcome::Infeasible { .. } => {
            // Dual infeasible: the primal is unbounded or infeasible. Farkas:
            // {A x ≤ b} is empty iff some y ≥ 0 has Aᵀy = 0, 1ᵀy = 1, b·y < 0.
            let mut farkas_cols = DMatrix::zeros(n + 1, m);
            farkas_cols.view_mut((0, 0), (n, m)).copy_from(&columns);
            farkas_cols.row_mut(n).fill(1.0);
            let mut farkas_rhs = DVector::zeros(n + 1);
            farkas_rhs[n] = 1.0;
            let farkas = solve_standard(&farkas_cols, &farkas_rhs, &cost, policy)?;
            pivots += farkas.pivots();
            let certified_empty = match farkas {
                StandardOutcome::Optimal {
                    basis,
                    basic_values,
                    ..
                } => {
                    let value: f64 = basis
                        .iter()
                        .zip(basic_values.iter())
                        .filter(|(&var, _)| var < m)
                        .map(|(&var, &v)| cost[var] * v)
                        .sum();
                    value < -policy.feasibility * (1.0 + lp.constraint_rhs.amax())
                }
                // y lives in the simplex, so the Farkas program is bounded.
                StandardOutcome::Unbounded { .. } => true,
                StandardOutcome::Infeasible { .. } => false,
            };
            let status = if certified_empty {
                LpStatus::Infeasible
            } else {
                LpStatus::Unbounded
            };
            Ok(LpSolution::status_only(status, pivots))
        }
    }
}

enum StandardOutcome {
    Optimal {
        basis: Vec<usize>,
        basic_values: DVector<f64>,
        /// Simplex multipliers expressed in the caller's (unflipped) rows.
        multipliers: DVector<f64>,
        pivots: usize,
    },
    Infeasible {
        pivots: usize,
    },
    Unbounded {
        pivots: usize,
    },
}

impl StandardOutcome {
    fn pivots(&self) -> usize {
        match self {
            StandardOutcome::Optimal { pivots, .. }
            | StandardOutcome::Infeasible { pivots }
            | StandardOutcome::Unbounded { pivots } => *pivots,
        }
    }
}

/// Working state of a revised simplex over `minimize cost·y  s.t.  M y = rhs,
/// y ≥ 0`, with `k` artificial columns appended after the `N` real ones.
struct Tableau<'a> {
    cols: DMatrix<f64>,
    rhs: DVector<f64>,
    cost: &'a [f64],
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    policy: &'a NumericPolicy,
}

enum PhaseResult {
    Optimal,
    Unbounded,
}

struct Iterate {
    lu: LuFactors,
    values: DVector<f64>,
    multipliers: DVector<f64>,
}

impl<'a> Tableau<'a> {
    fn k(&self) -> usize {
        self.rhs.len()
    }

    fn n_real(&self) -> usize {
        self.cols.ncols()
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n_real() {
            self.cols.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.k());
            e[j - self.n_real()] = 1.0;
            e
        }
    }

    fn dot_column(&self, v: &DVector<f64>, j: usize) -> f64 {
        if j < self.n_real() {
            self.cols.column(j).dot(v)
        } else {
            v[j - self.n_real()]
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        let mut b = DMatrix::zeros(k, k);
        for (pos, &var) in self.basis.iter().enumerate() {
            if var < self.n_real() {
                b.set_column(pos, &self.cols.column(var));
            } else {
                b[(var - self.n_real(), pos)] = 1.0;
            }
        }
        b
    }

    fn iterate(&self, phase_cost: &dyn Fn(usize) -> f64) -> Result<Iterate> {
        let lu = LuFactors::factor(&self.basis_matrix(), self.policy.pivot)?;
        let values = lu.solve(&self.rhs);
        let c_b = DVector::from_iterator(self.k(), self.basis.iter().map(|&v| phase_cost(v)));
        let multipliers = lu.solve_transpose(&c_b);
        Ok(Iterate {
            lu,
            values,
            multipliers,
        })
    }

    fn set_basic(&mut self, pos: usize, var: usize) {
        let old = self.basis[pos];
        self.in_basis[old] = false;
        self.in_basis[var] = true;
        self.basis[pos] = var;
    }

    /// Runs pivots until optimal, unbounded, or the cap trips. Pricing is
    /// Dantzig's most negative reduced cost; after a run of degenerate pivots
    /// it falls back to Bland's rule until the objective moves again.
    fn run_phase(
        &mut self,
        phase: u8,
        phase_cost: &dyn Fn(usize) -> f64,
        may_enter: &dyn Fn(usize) -> bool,
        pivots: &mut usize,
    ) -> Result<PhaseResult> {
        let total = self.n_real() + self.k();
        let cap = self.policy.max_pivots(self.n_real(), self.k());
        let mut done = 0usize;
        let mut degenerate_run = 0usize;
        loop {
            let it = self.iterate(phase_cost)?;
            let bland = degenerate_run > self.k();

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                if self.in_basis[j] || !may_enter(j) {
                    continue;
                }
                let c = phase_cost(j);
                let reduced = c - self.dot_column(&it.multipliers, j);
                if reduced < -self.policy.optimality * (1.0 + c.abs())
                    && entering.map_or(true, |(_, best)| reduced < best)
                {
                    entering = Some((j, reduced));
                    if bland {
                        break;
                    }
                }
            }
            let Some((entering, _)) = entering else {
                return Ok(PhaseResult::Optimal);
            };

            let direction = it.lu.solve(&self.column(entering));
            let threshold = self.policy.pivot.max(1e-9 * direction.amax());
            let mut leave: Option<(usize, f64)> = None;
            for pos in 0..self.k() {
                let u = direction[pos];
                if u <= threshold {
                    continue;
                }
                let ratio = it.values[pos].max(0.0) / u;
                leave = match leave {
                    None => Some((pos, ratio)),
                    Some((best, best_ratio)) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if ratio < best_ratio && !tie || tie && self.basis[pos] < self.basis[best] {
                            Some((pos, ratio.min(best_ratio)))
                        } else {
                            Some((best, best_ratio))
                        }
                    }
                };
            }
            let Some((pos, step)) = leave else {
                return Ok(PhaseResult::Unbounded);
            };
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.set_basic(pos, entering);
            done += 1;
            *pivots += 1;
            if done > cap {
                return Err(Error::SolverStall {
                    phase,
                    iterations: done,
                });
            }
        }
    }

    /// Pivots zero-valued artificials out of the basis where some real column
    /// can replace them; rows with no such column are linearly redundant.
    fn drive_out_artificials(&mut self, pivots: &mut usize) -> Result<()> {
        let n_real = self.n_real();
        for pos in 0..self.k() {
            if self.basis[pos] < n_real {
                continue;
            }
            let lu = LuFactors::factor(&self.basis_matrix(), self.policy.pivot)?;
            let mut unit = DVector::zeros(self.k());
            unit[pos] = 1.0;
            let row = lu.solve_transpose(&unit);
            let replacement =
                (0..n_real).find(|&j| !self.in_basis[j] && self.dot_column(&row, j).abs() > 1e-9);
            if let Some(j) = replacement {
                self.set_basic(pos, j);
                *pivots += 1;
            }
        }
        Ok(())
    }
}

fn solve_standard(
    cols: &DMatrix<f64>,
    rhs: &DVector<f64>,
    cost: &[f64],
    policy: &NumericPolicy,
) -> Result<StandardOutcome> {
    let k = cols.nrows();
    let n_real = cols.ncols();
    debug_assert_eq!(cost.len(), n_real);

    // Flip rows so the artificial start basis is feasible.
    let signs: Vec<f64> = rhs
        .iter()
        .map(|&v| if v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut flipped = cols.clone();
    for (i, &s) in signs.iter().enumerate() {
        if s < 0.0 {
            flipped.row_mut(i).neg_mut();
        }
    }
    let flipped_rhs = DVector::from_fn(k, |i, _| rhs[i] * signs[i]);
    // Strictly positive perturbation breaks the degeneracy of sparse right-hand
    // sides; the multipliers (the primal point) do not depend on it.
    let scale = 1.0 + rhs.amax();
    let perturbed_rhs = DVector::from_fn(k, |i, _| {
        let golden = ((i as f64 + 1.0) * 0.618_033_988_749_895).fract();
        flipped_rhs[i] + RHS_PERTURBATION * scale * (1.0 + golden)
    });

    let mut in_basis = vec![false; n_real + k];
    for flag in in_basis.iter_mut().skip(n_real) {
        *flag = true;
    }
    let mut tableau = Tableau {
        cols: flipped,
        rhs: perturbed_rhs,
        cost,
        basis: (n_real..n_real + k).collect(),
        in_basis,
        policy,
    };
    let mut pivots = 0usize;

    let phase1_cost = |j: usize| if j >= n_real { 1.0 } else { 0.0 };
    match tableau.run_phase(1, &phase1_cost, &|j| j < n_real, &mut pivots)? {
        PhaseResult::Optimal => {}
        PhaseResult::Unbounded => {
            return Err(Error::ContractViolation(
                "phase-one objective is bounded below by zero".into(),
            ))
        }
    }
    let it = tableau.iterate(&phase1_cost)?;
    let infeasibility: f64 = tableau
        .basis
        .iter()
        .zip(it.values.iter())
        .filter(|(&var, _)| var >= n_real)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    if infeasibility > policy.feasibility * (1.0 + rhs.amax()) {
        return Ok(StandardOutcome::Infeasible { pivots });
    }
    tableau.drive_out_artificials(&mut pivots)?;

    let phase2_cost = |j: usize| if j < n_real { tableau.cost[j] } else { 0.0 };
    let phase2_cost_owned: Vec<f64> = (0..n_real + k).map(phase2_cost).collect();
    let cost_fn = |j: usize| phase2_cost_owned[j];
    match tableau.run_phase(2, &cost_fn, &|j| j < n_real, &mut pivots)? {
        PhaseResult::Unbounded => return Ok(StandardOutcome::Unbounded { pivots }),
        PhaseResult::Optimal => {}
    }
    tableau.rhs = flipped_rhs;
    let it = tableau.iterate(&cost_fn)?;
    let multipliers = DVector::from_fn(k, |i, _| it.multipliers[i] * signs[i]);
    Ok(StandardOutcome::Optimal {
        basis: tableau.basis,
        basic_values: it.values,
        multipliers,
        pivots,
    })
}
