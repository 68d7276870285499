use super::{IterationRecord, PolicySnapshot, RunMetadata, RunTrace};
use crate::error::{Error, Result};
use crate::features::{evaluate, FeatureMap, ParamVector};
use crate::mdp::{bellman_apply, greedy_policy, TabularMdp};
use crate::numerics::least_squares;

/// Approximate modified policy iteration on Q-functions:
/// `μ_{k+1} = greedy(Φθ_k)`, `θ_{k+1} = argmin ‖Φθ − T^m_{μ_{k+1}} Φθ_k‖₂`.
///
/// `m = 1` is fitted Q-iteration. Record 0 pairs `θ_0` with `greedy(Φθ_0)`.
pub fn ampiq_run(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    theta0: &ParamVector,
    m: usize,
    iterations: usize,
) -> Result<RunTrace> {
    if m == 0 {
        return Err(Error::InvalidArgument("AMPI-Q needs m ≥ 1".into()));
    }
    let mut theta = theta0.clone();
    let mut estimate = evaluate(phi, &theta)?;
    let mut records = vec![IterationRecord::build(
        mdp,
        phi,
        0,
        theta.clone(),
        PolicySnapshot::Deterministic(greedy_policy(&estimate, mdp)?),
        None,
    )?];
    for k in 0..iterations {
        let policy = greedy_policy(&estimate, mdp)?;
        let mut target = estimate.clone();
        for _ in 0..m {
            target = bellman_apply(mdp, &policy, &target)?;
        }
        theta = ParamVector(least_squares(phi.matrix(), target.values())?);
        estimate = evaluate(phi, &theta)?;
        records.push(IterationRecord::build(
            mdp,
            phi,
            k + 1,
            theta.clone(),
            PolicySnapshot::Deterministic(policy),
            None,
        )?);
    }
    let metadata = RunMetadata::new("AMPI-Q")
        .with("m", m)
        .with("iterations", iterations);
    Ok(RunTrace { records, metadata })
}
