//! Model-based trust-region policy iteration with linear critics.
//!
//! The policy step maximizes the occupancy-weighted expected advantage subject
//! to `Σ_s ρ(s)·KL(μ_k(·|s) ‖ π(·|s)) ≤ δ`. For a Lagrange multiplier (the
//! temperature `η`) the problem separates per state into
//! `max_π Σ_a π_a A_a + η Σ_a μ_a ln π_a`, whose maximizer is
//! `π_a = η μ_a / (λ − A_a)` on the support of `μ_k`, with `λ` fixed by
//! normalization; any leftover mass goes to the best action outside the
//! support. `η` is then chosen by bisection so the aggregate constraint is
//! active.

use nalgebra::{DMatrix, DVector};

use super::{IterationRecord, PolicySnapshot, RunMetadata, RunTrace};
use crate::error::{Error, Result};
use crate::features::{evaluate, FeatureMap, ParamVector};
use crate::mdp::{
    exact_q_value, policy_kernel, state_values, Policy, QTable, StochasticPolicy, TabularMdp,
};
use crate::numerics::{least_squares, solve_linear_system};

const ETA_MIN: f64 = 1e-6;
const ETA_MAX: f64 = 1e6;
const ETA_WIDEN: f64 = 1e6;
const ETA_BISECTIONS: usize = 50;
const LAMBDA_BISECTIONS: usize = 100;

/// Unnormalized discounted state visitation `ρ = (I − γ P_μᵀ)⁻¹ ν`.
pub fn discounted_occupancy<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    initial: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = mdp.n_states();
    Error::check_dim("occupancy: initial distribution", n, initial.len())?;
    if initial.iter().any(|&p| !(p >= 0.0)) || (initial.sum() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "initial distribution must be a probability vector".into(),
        ));
    }
    let kernel = policy_kernel(mdp, policy);
    let system = DMatrix::identity(n, n) - kernel.transpose() * mdp.discount();
    solve_linear_system(&system, initial)
}

/// `A_θ(s, a) = φ(s, a)ᵀθ − Σ_b μ(b|s) φ(s, b)ᵀθ`.
pub fn linear_advantage<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &P,
    theta: &ParamVector,
) -> Result<QTable> {
    let q = evaluate(phi, theta)?;
    let v = state_values(mdp, policy, &q);
    let n_actions = mdp.n_actions();
    Ok(QTable(DVector::from_fn(mdp.n_pairs(), |i, _| {
        q.0[i] - v[i / n_actions]
    })))
}

/// Per-state maximizer of `Σ π_a A_a + η Σ μ_a ln π_a` over the simplex.
fn tilted_row(mu: &[f64], adv: &[f64], eta: f64) -> Vec<f64> {
    let n = mu.len();
    let mut best_in = f64::NEG_INFINITY;
    let mut best_out: Option<usize> = None;
    for a in 0..n {
        if mu[a] > 0.0 {
            best_in = best_in.max(adv[a]);
        } else if best_out.map_or(true, |b| adv[a] > adv[b]) {
            best_out = Some(a);
        }
    }
    let outside = best_out.filter(|&b| adv[b] > best_in);
    let floor = outside.map_or(best_in, |b| adv[b]);
    // Offsets λ − A_a = gap_a + u with u = λ − floor ≥ 0.
    let gaps: Vec<f64> = (0..n).map(|a| floor - adv[a]).collect();
    let mass = |u: f64| -> f64 {
        (0..n)
            .filter(|&a| mu[a] > 0.0)
            .map(|a| eta * mu[a] / (gaps[a] + u))
            .sum()
    };

    let mut pi = vec![0.0; n];
    if let Some(b) = outside {
        let at_floor = mass(0.0);
        if at_floor <= 1.0 {
            for a in (0..n).filter(|&a| mu[a] > 0.0) {
                pi[a] = eta * mu[a] / gaps[a];
            }
            pi[b] = (1.0 - at_floor).max(0.0);
            return pi;
        }
    }

    // mass(u) is decreasing with mass(η) ≤ 1; bisect on ln u.
    let mut hi = eta;
    let mut lo = if outside.is_some() {
        eta * 1e-300
    } else {
        let mu_top: f64 = (0..n)
            .filter(|&a| mu[a] > 0.0 && gaps[a] == 0.0)
            .map(|a| mu[a])
            .sum();
        (eta * mu_top).min(hi)
    };
    if mass(lo) < 1.0 {
        lo = f64::MIN_POSITIVE;
    }
    for _ in 0..LAMBDA_BISECTIONS {
        let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = hi;
    let mut total = 0.0;
    for a in (0..n).filter(|&a| mu[a] > 0.0) {
        pi[a] = eta * mu[a] / (gaps[a] + u);
        total += pi[a];
    }
    for p in pi.iter_mut() {
        *p /= total;
    }
    pi
}

/// `KL(μ ‖ π)` with `0·ln 0 = 0`.
fn kl(mu: &[f64], pi: &[f64]) -> f64 {
    mu.iter()
        .zip(pi)
        .filter(|(&m, _)| m > 0.0)
        .map(|(&m, &p)| m * (m / p).ln())
        .sum()
}

struct Tilted {
    rows: Vec<Vec<f64>>,
    divergence: f64,
}

fn tilt_all(mu: &[Vec<f64>], adv: &[Vec<f64>], rho: &DVector<f64>, eta: f64) -> Tilted {
    let rows: Vec<Vec<f64>> = mu
        .iter()
        .zip(adv)
        .map(|(m, a)| tilted_row(m, a, eta))
        .collect();
    let divergence = rows
        .iter()
        .zip(mu)
        .enumerate()
        .map(|(s, (p, m))| rho[s] * kl(m, p))
        .sum();
    Tilted { rows, divergence }
}

fn rows_to_policy(rows: Vec<Vec<f64>>, n_actions: usize) -> Result<StochasticPolicy> {
    let n_states = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    StochasticPolicy::new(DMatrix::from_row_slice(n_states, n_actions, &flat))
}

/// Trust-region step from `μ_k` given per-pair advantages and state weights.
pub fn trpo_policy_update(
    mdp: &TabularMdp,
    current: &StochasticPolicy,
    advantage: &QTable,
    rho: &DVector<f64>,
    delta: f64,
) -> Result<StochasticPolicy> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "trust-region radius {delta} must be positive"
        )));
    }
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    Error::check_dim("trpo: advantage length", mdp.n_pairs(), advantage.len())?;
    Error::check_dim("trpo: state weights", n_states, rho.len())?;
    Error::check_dim("trpo: policy states", n_states, current.n_states())?;

    let mu: Vec<Vec<f64>> = (0..n_states).map(|s| current.row(s)).collect();
    let adv: Vec<Vec<f64>> = (0..n_states)
        .map(|s| advantage.as_slice()[s * n_actions..(s + 1) * n_actions].to_vec())
        .collect();

    // η → 0⁺ keeps μ_k restricted to the per-state argmax; when μ_k already
    // lives there the step costs no divergence and μ_k is optimal.
    let settled = mu.iter().zip(&adv).all(|(m, a)| {
        let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m.iter().zip(a).all(|(&p, &v)| p == 0.0 || v == top)
    });
    if settled {
        return Ok(current.clone());
    }

    let greedy_end = tilt_all(&mu, &adv, rho, ETA_MIN);
    if greedy_end.divergence <= delta {
        return rows_to_policy(greedy_end.rows, n_actions);
    }
    let mut hi = ETA_MAX;
    if tilt_all(&mu, &adv, rho, hi).divergence > delta {
        hi *= ETA_WIDEN;
        let widened = tilt_all(&mu, &adv, rho, hi);
        if widened.divergence > delta {
            return Err(Error::ContractViolation(format!(
                "trust region {delta:e} unreachable even at temperature {hi:e} (KL {:e})",
                widened.divergence
            )));
        }
    }
    let mut lo = ETA_MIN;
    for _ in 0..ETA_BISECTIONS {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if tilt_all(&mu, &adv, rho, mid).divergence > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    rows_to_policy(tilt_all(&mu, &adv, rho, hi).rows, n_actions)
}

/// Trust-region policy iteration from the uniform policy. The critic is the
/// least-squares projection of the exact `Q_{μ_{k+1}}` onto the features.
pub fn trpo_run(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    theta0: &ParamVector,
    delta: f64,
    iterations: usize,
    initial: &DVector<f64>,
) -> Result<RunTrace> {
    let mut policy = StochasticPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let mut theta = theta0.clone();
    let mut records = vec![IterationRecord::build(
        mdp,
        phi,
        0,
        theta.clone(),
        PolicySnapshot::Stochastic(policy.clone()),
        None,
    )?];
    for k in 0..iterations {
        let advantage = linear_advantage(mdp, phi, &policy, &theta)?;
        let rho = discounted_occupancy(mdp, &policy, initial)?;
        policy = trpo_policy_update(mdp, &policy, &advantage, &rho, delta)?;
        let q = exact_q_value(mdp, &policy)?;
        theta = ParamVector(least_squares(phi.matrix(), q.values())?);
        records.push(IterationRecord::build(
            mdp,
            phi,
            k + 1,
            theta.clone(),
            PolicySnapshot::Stochastic(policy.clone()),
            None,
        )?);
    }
    let metadata = RunMetadata::new("TRPO")
        .with("delta", delta)
        .with("iterations", iterations)
        .with("initial_policy", "uniform");
    Ok(RunTrace { records, metadata })
}
