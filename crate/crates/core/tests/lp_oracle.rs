mod common;

use common::{best_recession_gain, random_lp, vertex_enumeration};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpi_core::numerics::{lp_solve, LinearProgram, LpStatus};

#[test]
fn random_programs_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut counts = [0usize; 3];
    for case in 0..200 {
        let (a, b, c) = random_lp(&mut rng);
        let solution =
            lp_solve(&LinearProgram::new(c.clone(), a.clone(), b.clone()).unwrap()).unwrap();
        let oracle = vertex_enumeration(&a, &b, &c);
        match solution.status {
            LpStatus::Optimal => {
                counts[0] += 1;
                let x = solution.point.as_ref().unwrap();
                let y = solution.multipliers.as_ref().unwrap();
                let value = solution.objective_value.unwrap();
                let best = oracle.expect("optimal program has a vertex");
                assert!(
                    (value - best).abs() <= 1e-7,
                    "case {case}: {value} vs {best}"
                );
                assert!(
                    (&a * x - &b).max() <= 1e-7,
                    "case {case}: primal infeasible"
                );
                assert!(y.min() >= -1e-9, "case {case}: negative multiplier");
                assert!(
                    (a.transpose() * y - &c).amax() <= 1e-7,
                    "case {case}: dual residual"
                );
                assert!((b.dot(y) - value).abs() <= 1e-7, "case {case}: duality gap");
            }
            LpStatus::Infeasible => {
                counts[1] += 1;
                assert!(
                    oracle.is_none(),
                    "case {case}: oracle found a feasible vertex"
                );
            }
            LpStatus::Unbounded => {
                counts[2] += 1;
                assert!(oracle.is_some(), "case {case}: unbounded but empty");
                assert!(
                    best_recession_gain(&a, &c) > 1e-9,
                    "case {case}: no improving ray"
                );
            }
        }
    }
    assert!(counts.iter().all(|&n| n > 0), "status mix {counts:?}");
}

#[test]
fn bounded_boxes_are_always_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (a, b, c) = random_lp(&mut rng);
        let n = a.ncols();
        let mut rows = a.clone().insert_rows(a.nrows(), 2 * n, 0.0);
        let mut rhs = b.clone().insert_rows(b.len(), 2 * n, 3.0);
        for j in 0..n {
            rows[(a.nrows() + 2 * j, j)] = 1.0;
            rows[(a.nrows() + 2 * j + 1, j)] = -1.0;
        }
        // Keep the origin feasible.
        for i in 0..a.nrows() {
            rhs[i] = rhs[i].abs();
        }
        let solution =
            lp_solve(&LinearProgram::new(c.clone(), rows.clone(), rhs.clone()).unwrap()).unwrap();
        assert_eq!(solution.status, LpStatus::Optimal);
        let best = vertex_enumeration(&rows, &rhs, &c).unwrap();
        assert!((solution.objective_value.unwrap() - best).abs() <= 1e-7);
    }
}

#[test]
fn solver_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (a, b, c): (DMatrix<f64>, DVector<f64>, DVector<f64>) = random_lp(&mut rng);
    let lp = LinearProgram::new(c, a, b).unwrap();
    let first = lp_solve(&lp).unwrap();
    let second = lp_solve(&lp).unwrap();
    assert_eq!(first.status, second.status);
    assert_eq!(first.point, second.point);
    assert_eq!(first.pivots, second.pivots);
}
