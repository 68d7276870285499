#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rpi_core::mdp::{DeterministicPolicy, TabularMdp};

/// Random MDP with `2..=max_states` states and `2..=max_actions` actions.
pub fn random_mdp(
    rng: &mut ChaCha8Rng,
    max_states: usize,
    max_actions: usize,
    discount: f64,
) -> TabularMdp {
    let s = rng.gen_range(2..=max_states);
    let a = rng.gen_range(2..=max_actions);
    TabularMdp::random(rng, s, a, discount).unwrap()
}

pub fn random_policy(rng: &mut ChaCha8Rng, mdp: &TabularMdp) -> DeterministicPolicy {
    DeterministicPolicy::new(
        (0..mdp.n_states())
            .map(|_| rng.gen_range(0..mdp.n_actions()))
            .collect(),
        mdp.n_actions(),
    )
    .unwrap()
}

/// Gaussian elimination with partial pivoting; `None` when (near) singular.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = b.clone();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))?;
        if m[(pivot, col)].abs() < 1e-10 {
            return None;
        }
        m.swap_rows(col, pivot);
        v.swap_rows(col, pivot);
        for row in col + 1..n {
            let factor = m[(row, col)] / m[(col, col)];
            for k in col..n {
                m[(row, k)] -= factor * m[(col, k)];
            }
            v[row] -= factor * v[col];
        }
    }
    let mut x = DVector::zeros(n);
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[(row, k)] * x[k]).sum();
        x[row] = (v[row] - tail) / m[(row, row)];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if n < k {
        return Vec::new();
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Maximum of `c·x` over the basic feasible points of `{A x ≤ b}`.
pub fn vertex_enumeration(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Option<f64> {
    let n = a.ncols();
    combinations(a.nrows(), n)
        .into_iter()
        .filter_map(|rows| {
            let sub = DMatrix::from_fn(n, n, |i, j| a[(rows[i], j)]);
            let rhs = DVector::from_fn(n, |i, _| b[rows[i]]);
            let x = gauss_solve(&sub, &rhs)?;
            ((a * &x - b).max() <= 1e-9).then(|| c.dot(&x))
        })
        .reduce(f64::max)
}

/// Largest `c·d` over recession directions in the unit box; positive means
/// the objective is unbounded on a nonempty feasible set.
pub fn best_recession_gain(a: &DMatrix<f64>, c: &DVector<f64>) -> f64 {
    let n = a.ncols();
    let mut rows = a.clone().insert_rows(a.nrows(), 2 * n, 0.0);
    let mut rhs = DVector::zeros(a.nrows() + 2 * n);
    for j in 0..n {
        rows[(a.nrows() + 2 * j, j)] = 1.0;
        rows[(a.nrows() + 2 * j + 1, j)] = -1.0;
        rhs[a.nrows() + 2 * j] = 1.0;
        rhs[a.nrows() + 2 * j + 1] = 1.0;
    }
    vertex_enumeration(&rows, &rhs, c).expect("zero direction is feasible")
}

/// Random LP with `n ≤ 4` variables and `n ≤ m ≤ 8` rows.
pub fn random_lp(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(n..=8);
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = DVector::from_fn(m, |_, _| rng.gen_range(-0.5..1.0));
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    (a, b, c)
}
