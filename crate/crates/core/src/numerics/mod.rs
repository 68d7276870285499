//! Dense linear algebra and the linear-program solver behind policy evaluation.

mod linalg;
mod simplex;

pub use linalg::{least_squares, solve_linear_system, LuFactors};
pub use simplex::{lp_solve, lp_solve_with, LinearProgram, LpSolution, LpStatus};

use serde::{Deserialize, Serialize};

/// Numeric tolerances shared by the solvers and the tests that check them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericPolicy {
    /// Smallest acceptable elimination pivot (relative to the matrix scale).
    pub pivot: f64,
    /// Allowed constraint violation of a returned LP point (relative to `1 + ‖b‖∞`).
    pub feasibility: f64,
    /// Reduced-cost threshold for the simplex pricing step.
    pub optimality: f64,
    /// Basis changes allowed per phase, as a multiple of `rows + columns`.
    pub pivot_cap_factor: usize,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            pivot: 1e-12,
            feasibility: 1e-7,
            optimality: 1e-9,
            pivot_cap_factor: 10,
        }
    }
}

impl NumericPolicy {
    pub(crate) fn max_pivots(&self, n_cols: usize, n_rows: usize) -> usize {
        self.pivot_cap_factor * (n_cols + n_rows)
    }
}
