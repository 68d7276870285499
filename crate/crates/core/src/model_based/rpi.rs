use nalgebra::{DMatrix, DVector};

use super::{bellman_gap_matrix, IterationRecord, PolicySnapshot, RunMetadata, RunTrace};
use crate::error::{Error, Result};
use crate::features::{evaluate, FeatureMap, ParamVector};
use crate::mdp::{bellman_apply, greedy_policy, DeterministicPolicy, QTable, TabularMdp};
use crate::numerics::{lp_solve_with, LinearProgram, LpSolution, LpStatus, NumericPolicy};

const FEASIBLE_START_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct RpiEvaluation {
    pub theta: ParamVector,
    pub solution: LpSolution,
}

/// The weighted-ℓ1 evaluation program over `θ`:
///
/// ```text
/// maximize   Σ w(s,a)·(Φθ)(s,a)
/// subject to (I − γ P Π_μ) Φθ ≤ r      (one row per pair)
///            −Φθ ≤ −f_k                (one row per pair)
/// ```
///
/// On the feasible set `Φθ ≥ f_k`, so this objective differs from
/// `‖Φθ − f_k‖_{w,1}` by the constant `Σ w·f_k`.
pub fn evaluation_program(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &DeterministicPolicy,
    floor: &QTable,
    weights: &QTable,
) -> Result<LinearProgram> {
    let n_pairs = mdp.n_pairs();
    Error::check_dim("rpi: feature rows", n_pairs, phi.n_pairs())?;
    Error::check_dim("rpi: floor length", n_pairs, floor.len())?;
    Error::check_dim("rpi: weight length", n_pairs, weights.len())?;
    if weights.as_slice().iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument(
            "evaluation weights must be strictly positive".into(),
        ));
    }
    let dim = phi.dim();
    let gap = bellman_gap_matrix(mdp, phi, policy);
    let mut a = DMatrix::zeros(2 * n_pairs, dim);
    a.view_mut((0, 0), (n_pairs, dim)).copy_from(&gap);
    a.view_mut((n_pairs, 0), (n_pairs, dim))
        .copy_from(&(-phi.matrix()));
    let mut b = DVector::zeros(2 * n_pairs);
    b.rows_mut(0, n_pairs).copy_from(mdp.reward());
    b.rows_mut(n_pairs, n_pairs).copy_from(&(-floor.values()));
    let c = phi.matrix().transpose() * weights.values();
    LinearProgram::new(c, a, b)
}

pub fn find_feasible_initial_theta(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    initial_policy: &DeterministicPolicy,
) -> Result<ParamVector> {
    find_feasible_initial_theta_with(mdp, phi, initial_policy, &NumericPolicy::default())
}

/// Finds `θ` with `T_μ Φθ ≥ Φθ` by solving
/// `minimize t  s.t.  (I − γ P Π_μ)Φθ − r ≤ t·1,  t ≥ 0` over `(θ, t)`.
///
/// The `t ≥ 0` row keeps the program bounded: positive features usually
/// admit directions along which every Bellman gap decreases without limit.
pub fn find_feasible_initial_theta_with(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    initial_policy: &DeterministicPolicy,
    numeric: &NumericPolicy,
) -> Result<ParamVector> {
    let n_pairs = mdp.n_pairs();
    Error::check_dim("feasible start: feature rows", n_pairs, phi.n_pairs())?;
    let dim = phi.dim();
    let gap = bellman_gap_matrix(mdp, phi, initial_policy);
    let mut a = DMatrix::zeros(n_pairs + 1, dim + 1);
    a.view_mut((0, 0), (n_pairs, dim)).copy_from(&gap);
    a.view_mut((0, dim), (n_pairs, 1)).fill(-1.0);
    a[(n_pairs, dim)] = -1.0;
    let mut b = DVector::zeros(n_pairs + 1);
    b.rows_mut(0, n_pairs).copy_from(mdp.reward());
    let mut c = DVector::zeros(dim + 1);
    c[dim] = -1.0;

    let solution = lp_solve_with(&LinearProgram::new(c, a, b)?, numeric)?;
    match solution.status {
        LpStatus::Optimal => {}
        other => {
            return Err(Error::ContractViolation(format!(
                "feasible-start program reported {other:?}"
            )))
        }
    }
    let point = solution.point.expect("optimal solutions carry a point");
    let t = point[dim];
    if t > FEASIBLE_START_TOL {
        return Err(Error::NoFeasibleStart { t });
    }
    Ok(ParamVector(point.rows(0, dim).into_owned()))
}

pub fn rpi_policy_evaluation(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &DeterministicPolicy,
    previous: &QTable,
    weights: &QTable,
) -> Result<RpiEvaluation> {
    rpi_policy_evaluation_with(
        mdp,
        phi,
        policy,
        previous,
        weights,
        &NumericPolicy::default(),
    )
}

/// One RPI evaluation step: the point of `{Φθ : T_μ Φθ ≥ Φθ ≥ f_k}` farthest
/// from `f_k` in weighted ℓ1.
pub fn rpi_policy_evaluation_with(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &DeterministicPolicy,
    previous: &QTable,
    weights: &QTable,
    numeric: &NumericPolicy,
) -> Result<RpiEvaluation> {
    let program = evaluation_program(mdp, phi, policy, previous, weights)?;
    let tol = numeric.feasibility;
    let image = bellman_apply(mdp, policy, previous)?;
    let subsolution_slack = image.min_slack_over(previous);
    if subsolution_slack < -tol {
        return Err(Error::ContractViolation(format!(
            "previous estimate is not a Bellman subsolution (slack {subsolution_slack:e})"
        )));
    }

    let solution = lp_solve_with(&program, numeric)?;
    match solution.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::ContractViolation(
                "evaluation program infeasible although the previous estimate is feasible".into(),
            ))
        }
        LpStatus::Unbounded => {
            return Err(Error::ContractViolation(
                "evaluation program unbounded although its feasible set lies below Q_μ".into(),
            ))
        }
    }
    let theta = ParamVector(
        solution
            .point
            .clone()
            .expect("optimal solutions carry a point"),
    );
    Ok(RpiEvaluation { theta, solution })
}

pub fn rpi_run(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    iterations: usize,
    weights: &QTable,
) -> Result<RunTrace> {
    rpi_run_with(mdp, phi, iterations, weights, &NumericPolicy::default())
}

/// Reliable policy iteration for `iterations` evaluation/improvement rounds.
///
/// The start is `θ_0` from [`find_feasible_initial_theta`] for the policy
/// that is greedy with respect to `Φ·0` (action 0 everywhere), and
/// `μ_0 = greedy(Φθ_0)`. Record `k` pairs `f_k = Φθ_k` with `μ_k`.
pub fn rpi_run_with(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    iterations: usize,
    weights: &QTable,
    numeric: &NumericPolicy,
) -> Result<RunTrace> {
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "rpi needs at least one iteration".into(),
        ));
    }
    let zero_greedy = greedy_policy(&QTable::zeros(mdp.n_pairs()), mdp)?;
    let theta0 = find_feasible_initial_theta_with(mdp, phi, &zero_greedy, numeric)?;
    let f0 = evaluate(phi, &theta0)?;
    let mut policy = greedy_policy(&f0, mdp)?;
    let mut records = vec![IterationRecord::build(
        mdp,
        phi,
        0,
        theta0,
        PolicySnapshot::Deterministic(policy.clone()),
        Some(LpStatus::Optimal),
    )?];

    for k in 0..iterations {
        let previous = &records[k].estimate;
        let step = rpi_policy_evaluation_with(mdp, phi, &policy, previous, weights, numeric)?;
        let estimate = evaluate(phi, &step.theta)?;
        policy = greedy_policy(&estimate, mdp)?;
        records.push(IterationRecord::build(
            mdp,
            phi,
            k + 1,
            step.theta,
            PolicySnapshot::Deterministic(policy.clone()),
            Some(step.solution.status),
        )?);
    }

    let uniform = weights.as_slice().windows(2).all(|w| w[0] == w[1]);
    let metadata = RunMetadata::new("RPI")
        .with("iterations", iterations)
        .with("weights", if uniform { "uniform" } else { "custom" })
        .with("initial_policy", "greedy(Phi*0)");
    Ok(RunTrace { records, metadata })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::identity_features;
    use crate::mdp::exact_q_value;

    fn single_state() -> TabularMdp {
        TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn single_state_start_is_feasible() {
        let mdp = single_state();
        let phi = identity_features(1, 1);
        let mu = DeterministicPolicy::constant(1, 1, 0).unwrap();
        let theta = find_feasible_initial_theta(&mdp, &phi, &mu).unwrap();
        assert!(theta.0[0] <= 10.0 + 1e-9);
    }

    #[test]
    fn single_state_evaluation_reaches_q() {
        let mdp = single_state();
        let phi = identity_features(1, 1);
        let mu = DeterministicPolicy::constant(1, 1, 0).unwrap();
        let floor = QTable::from_vec(vec![0.0]);
        let step =
            rpi_policy_evaluation(&mdp, &phi, &mu, &floor, &QTable::from_vec(vec![1.0])).unwrap();
        assert!((step.theta.0[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_positive_weights() {
        let mdp = single_state();
        let phi = identity_features(1, 1);
        let mu = DeterministicPolicy::constant(1, 1, 0).unwrap();
        let err = rpi_policy_evaluation(
            &mdp,
            &phi,
            &mu,
            &QTable::zeros(1),
            &QTable::from_vec(vec![0.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn infeasible_floor_is_a_contract_violation() {
        let mdp = single_state();
        let phi = identity_features(1, 1);
        let mu = DeterministicPolicy::constant(1, 1, 0).unwrap();
        // f = 11 > Q = 10 violates T_μ f ≥ f.
        let err = rpi_policy_evaluation(
            &mdp,
            &phi,
            &mu,
            &QTable::from_vec(vec![11.0]),
            &QTable::from_vec(vec![1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn fixed_point_stays_put() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(17);
        let mdp = TabularMdp::random(&mut rng, 4, 2, 0.8).unwrap();
        let phi = identity_features(4, 2);
        let mu = DeterministicPolicy::new(vec![0, 1, 1, 0], 2).unwrap();
        let q = exact_q_value(&mdp, &mu).unwrap();
        let step =
            rpi_policy_evaluation(&mdp, &phi, &mu, &q, &QTable::from_vec(vec![1.0; 8])).unwrap();
        assert!(evaluate(&phi, &step.theta).unwrap().sup_distance(&q) < 1e-9);
    }

    #[test]
    fn zero_iterations_rejected() {
        let mdp = single_state();
        let phi = identity_features(1, 1);
        assert!(rpi_run(&mdp, &phi, 0, &QTable::from_vec(vec![1.0])).is_err());
    }
}
