//! Model-based policy iteration over a linear function class: reliable policy
//! iteration (RPI) with its Bellman-constrained evaluation LP, and the AMPI-Q
//! and trust-region baselines.

mod ampi;
mod rpi;
mod trpo;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

pub use ampi::ampiq_run;
pub use rpi::{
    evaluation_program, find_feasible_initial_theta, find_feasible_initial_theta_with,
    rpi_policy_evaluation, rpi_policy_evaluation_with, rpi_run, rpi_run_with, RpiEvaluation,
};
pub use trpo::{discounted_occupancy, linear_advantage, trpo_policy_update, trpo_run};

use crate::error::Result;
use crate::features::{FeatureMap, ParamVector};
use crate::mdp::{
    bellman_apply, exact_q_value, state_values, DeterministicPolicy, Policy, QTable,
    StochasticPolicy, TabularMdp,
};
use crate::numerics::LpStatus;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySnapshot {
    Deterministic(DeterministicPolicy),
    Stochastic(StochasticPolicy),
}

impl PolicySnapshot {
    pub fn as_policy(&self) -> &dyn Policy {
        match self {
            PolicySnapshot::Deterministic(p) => p,
            PolicySnapshot::Stochastic(p) => p,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub index: usize,
    pub theta: ParamVector,
    pub policy: PolicySnapshot,
    /// `Φθ_k`.
    pub estimate: QTable,
    /// Exact Q-value of `policy`.
    pub true_q: QTable,
    /// `‖T_μ f − f‖∞` at this iterate, with `μ = policy`.
    pub bellman_residual: f64,
    /// Status of the LP that produced `theta`, for LP-based algorithms.
    pub lp_status: Option<LpStatus>,
}

impl IterationRecord {
    pub(crate) fn build(
        mdp: &TabularMdp,
        phi: &FeatureMap,
        index: usize,
        theta: ParamVector,
        policy: PolicySnapshot,
        lp_status: Option<LpStatus>,
    ) -> Result<Self> {
        let estimate = crate::features::evaluate(phi, &theta)?;
        let true_q = exact_q_value(mdp, policy.as_policy())?;
        let bellman_residual =
            bellman_apply(mdp, policy.as_policy(), &estimate)?.sup_distance(&estimate);
        Ok(Self {
            index,
            theta,
            policy,
            estimate,
            true_q,
            bellman_residual,
            lp_status,
        })
    }

    /// `E_{s∼uniform, a∼μ}[estimate(s, a)]`.
    pub fn mean_estimate(&self, mdp: &TabularMdp) -> f64 {
        state_values(mdp, self.policy.as_policy(), &self.estimate).mean()
    }

    /// `E_{s∼uniform, a∼μ}[Q_μ(s, a)]`.
    pub fn mean_true_value(&self, mdp: &TabularMdp) -> f64 {
        state_values(mdp, self.policy.as_policy(), &self.true_q).mean()
    }

    /// `min (Q_μ − f)`; nonnegative when the estimate is a lower bound.
    pub fn lower_bound_slack(&self) -> f64 {
        self.true_q.min_slack_over(&self.estimate)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetadata {
    pub algorithm: String,
    pub entries: BTreeMap<String, String>,
}

impl RunMetadata {
    pub fn new(algorithm: &str) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub metadata: RunMetadata,
}

impl RunTrace {
    pub fn last(&self) -> &IterationRecord {
        self.records
            .last()
            .expect("traces hold at least the initial record")
    }

    /// `min (f_k − f_{k−1})` for `k ≥ 1`; `+∞` at `k = 0`.
    pub fn monotonicity_slack(&self, k: usize) -> f64 {
        if k == 0 {
            f64::INFINITY
        } else {
            self.records[k]
                .estimate
                .min_slack_over(&self.records[k - 1].estimate)
        }
    }
}

/// Rows `Σ_a μ(a|s) φ(s, a)` for each state.
pub(crate) fn policy_features<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &P,
) -> DMatrix<f64> {
    let (n_states, n_actions, dim) = (mdp.n_states(), mdp.n_actions(), phi.dim());
    let mut out = DMatrix::zeros(n_states, dim);
    for s in 0..n_states {
        for a in 0..n_actions {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let pair = mdp.index(s, a);
            for j in 0..dim {
                out[(s, j)] += p * phi.matrix()[(pair, j)];
            }
        }
    }
    out
}

/// `(I − γ P Π_μ) Φ`: the linear part of `f − T_μ f` over the function class.
pub fn bellman_gap_matrix<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    phi: &FeatureMap,
    policy: &P,
) -> DMatrix<f64> {
    let next = mdp.transition() * policy_features(mdp, phi, policy);
    phi.matrix() - next * mdp.discount()
}
