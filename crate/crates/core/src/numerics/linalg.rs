use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// LU factorization with partial pivoting, `P·A = L·U` packed into one matrix.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factors a square matrix. Fails when the largest available pivot in some
    /// column is below `pivot_tol · max(1, max|a_ij|)`.
    pub fn factor(a: &DMatrix<f64>, pivot_tol: f64) -> Result<Self> {
        let n = a.nrows();
        Error::check_dim("lu: square matrix", n, a.ncols())?;
        let scale = a.amax().max(1.0);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            let mut best = k;
            let mut best_abs = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best_abs {
                    best = i;
                    best_abs = v;
                }
            }
            if best_abs < pivot_tol * scale || !best_abs.is_finite() {
                return Err(Error::Singular {
                    column: k,
                    pivot: best_abs,
                });
            }
            if best != k {
                lu.swap_rows(k, best);
                perm.swap(k, best);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                if factor == 0.0 {
                    continue;
                }
                lu[(i, k)] = factor;
                for j in (k + 1)..n {
                    let ukj = lu[(k, j)];
                    lu[(i, j)] -= factor * ukj;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        // Uᵀ z = b
        let mut z = b.clone();
        for i in 0..n {
            let mut acc = z[i];
            for j in 0..i {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc / self.lu[(i, i)];
        }
        // Lᵀ w = z
        for i in (0..n).rev() {
            let mut acc = z[i];
            for j in (i + 1)..n {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }
}

/// Dense solve of `a·x = b` by partially pivoted elimination.
pub fn solve_linear_system(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Error::check_dim("solve_linear_system: rhs length", a.nrows(), b.len())?;
    let lu = LuFactors::factor(a, super::NumericPolicy::default().pivot)?;
    Ok(lu.solve(b))
}

/// Minimizes `‖a·θ − b‖₂` through a Householder QR factorization of `a`.
///
/// Rank deficiency is reported when a diagonal entry of `R` falls below the
/// pivot threshold relative to the largest one.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    Error::check_dim("least_squares: rhs length", m, b.len())?;
    if m < n {
        return Err(Error::InvalidArgument(format!(
            "least_squares needs at least as many rows as columns ({m} < {n})"
        )));
    }
    let tol = super::NumericPolicy::default().pivot;
    let qr = a.clone().qr();
    let r = qr.r();
    let r_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..n {
        let v = r[(i, i)].abs();
        if v <= tol * r_max.max(1.0) || !v.is_finite() {
            return Err(Error::RankDeficient {
                column: i,
                value: v,
            });
        }
    }
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let mut theta = DVector::zeros(n);
    for i in (0..n).rev() {
        let mut acc = qtb[i];
        for j in (i + 1)..n {
            acc -= r[(i, j)] * theta[j];
        }
        theta[i] = acc / r[(i, i)];
    }
    Ok(theta)
}
