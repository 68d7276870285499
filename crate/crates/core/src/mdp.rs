//! Finite MDPs, Bellman operators, and exact reference solvers.
//!
//! Every vector over state-action pairs uses the flat index `s·A + a`, so a
//! [`QTable`], a row of a feature matrix and a row of the evaluation LP refer
//! to the same pair.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::solve_linear_system;

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Row `s·A + a` holds `P(·|s, a)`.
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument(
                "mdp needs at least one state and action".into(),
            ));
        }
        let n_pairs = n_states * n_actions;
        Error::check_dim("mdp: transition rows", n_pairs, transition.nrows())?;
        Error::check_dim("mdp: transition columns", n_states, transition.ncols())?;
        Error::check_dim("mdp: reward length", n_pairs, reward.len())?;
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidArgument(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("rewards must be finite".into()));
        }
        for row in 0..n_pairs {
            let mut total = 0.0;
            for s_next in 0..n_states {
                let p = transition[(row, s_next)];
                if !(p >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "negative or NaN transition probability at pair {row}"
                    )));
                }
                total += p;
            }
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidArgument(format!(
                    "transition row {row} sums to {total}"
                )));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            discount,
        })
    }

    /// Random MDP with uniform-then-normalized transition rows and rewards in `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self> {
        let n_pairs = n_states * n_actions;
        let mut transition = DMatrix::from_fn(n_pairs, n_states, |_, _| rng.gen::<f64>());
        for mut row in transition.row_iter_mut() {
            let total = row.sum();
            row /= total;
            // Push the rounding residue into the largest entry.
            let residue = 1.0 - row.sum();
            let imax = row.iamax_full().1;
            row[imax] += residue;
        }
        let reward = DVector::from_fn(n_pairs, |_, _| rng.gen::<f64>());
        Self::new(n_states, n_actions, transition, reward, discount)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    #[inline]
    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(self.index(s, a), s_next)]
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        Error::check_dim("q-table length", self.n_pairs(), q.len())
    }

    fn check_policy<P: Policy + ?Sized>(&self, policy: &P) -> Result<()> {
        Error::check_dim("policy states", self.n_states, policy.n_states())?;
        Error::check_dim("policy actions", self.n_actions, policy.n_actions())
    }
}

/// A vector over state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable(pub DVector<f64>);

impl QTable {
    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(DVector::from_vec(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    /// `min_i (self_i − other_i)`: nonnegative iff `self ≥ other` coordinate-wise.
    pub fn min_slack_over(&self, other: &QTable) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        (&self.0 - &other.0).amax()
    }

    /// `Σ w·|self − other|`.
    pub fn weighted_l1_distance(&self, other: &QTable, weights: &QTable) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .zip(weights.0.iter())
            .map(|((a, b), w)| w * (a - b).abs())
            .sum()
    }
}

impl From<DVector<f64>> for QTable {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// Anything that assigns action probabilities per state.
pub trait Policy {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn prob(&self, s: usize, a: usize) -> f64;

    /// `Σ_a μ(a|s)·row[a]`.
    fn expect(&self, s: usize, row: &[f64]) -> f64 {
        row.iter()
            .enumerate()
            .map(|(a, v)| self.prob(s, a) * v)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    actions: Vec<usize>,
    n_actions: usize,
}

impl DeterministicPolicy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::InvalidArgument(format!(
                "action {bad} outside [0, {n_actions})"
            )));
        }
        Ok(Self { actions, n_actions })
    }

    pub fn constant(n_states: usize, n_actions: usize, action: usize) -> Result<Self> {
        Self::new(vec![action; n_states], n_actions)
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn to_stochastic(&self) -> StochasticPolicy {
        let mut probs = DMatrix::zeros(self.actions.len(), self.n_actions);
        for (s, &a) in self.actions.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        StochasticPolicy { probs }
    }
}

impl Policy for DeterministicPolicy {
    fn n_states(&self) -> usize {
        self.actions.len()
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn prob(&self, s: usize, a: usize) -> f64 {
        if self.actions[s] == a {
            1.0
        } else {
            0.0
        }
    }

    fn expect(&self, s: usize, row: &[f64]) -> f64 {
        row[self.actions[s]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    /// `probs[(s, a)] = π(a|s)`.
    probs: DMatrix<f64>,
}

impl StochasticPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::InvalidArgument("empty policy table".into()));
        }
        for (s, row) in probs.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "negative probability in state {s}"
                )));
            }
            let total = row.sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidArgument(format!(
                    "state {s} row sums to {total}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.probs.row(s).iter().copied().collect()
    }
}

impl Policy for StochasticPolicy {
    fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }
}

/// `V(s) = Σ_a μ(a|s) q(s, a)`.
pub fn state_values<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P, q: &QTable) -> DVector<f64> {
    let n_actions = mdp.n_actions();
    DVector::from_fn(mdp.n_states(), |s, _| {
        policy.expect(s, &q.as_slice()[s * n_actions..(s + 1) * n_actions])
    })
}

/// Per-state maximum `max_a q(s, a)`.
pub fn max_values(mdp: &TabularMdp, q: &QTable) -> DVector<f64> {
    let n_actions = mdp.n_actions();
    DVector::from_fn(mdp.n_states(), |s, _| {
        q.as_slice()[s * n_actions..(s + 1) * n_actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// `(T_μ q)(s, a) = r(s, a) + γ Σ_{s'} P(s'|s, a) Σ_{a'} μ(a'|s') q(s', a')`.
pub fn bellman_apply<P: Policy + ?Sized>(
    mdp: &TabularMdp,
    policy: &P,
    q: &QTable,
) -> Result<QTable> {
    mdp.check_q(q)?;
    mdp.check_policy(policy)?;
    let v = state_values(mdp, policy, q);
    Ok(QTable(mdp.reward() + mdp.transition() * v * mdp.discount()))
}

/// `(T q)(s, a) = r(s, a) + γ Σ_{s'} P(s'|s, a) max_{a'} q(s', a')`.
pub fn bellman_optimality_apply(mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
    mdp.check_q(q)?;
    let v = max_values(mdp, q);
    Ok(QTable(mdp.reward() + mdp.transition() * v * mdp.discount()))
}

/// State-to-state kernel `P_μ(s'|s) = Σ_a μ(a|s) P(s'|s, a)`.
pub fn policy_kernel<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> DMatrix<f64> {
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let mut kernel = DMatrix::zeros(n_states, n_states);
    for s in 0..n_states {
        for a in 0..n_actions {
            let p = policy.prob(s, a);
            if p == 0.0 {
                continue;
            }
            let row = mdp.transition().row(mdp.index(s, a));
            for s_next in 0..n_states {
                kernel[(s, s_next)] += p * row[s_next];
            }
        }
    }
    kernel
}

/// Exact `Q_μ`, the fixed point of `T_μ`.
///
/// `Q = r + γ P Π_μ Q` is solved through its state-value reduction
/// `(I − γ P_μ) V = r_μ`, `Q = r + γ P V`, which is the same linear system
/// restricted to the `S`-dimensional range of `Π_μ`.
pub fn exact_q_value<P: Policy + ?Sized>(mdp: &TabularMdp, policy: &P) -> Result<QTable> {
    mdp.check_policy(policy)?;
    let n_states = mdp.n_states();
    let kernel = policy_kernel(mdp, policy);
    let r_mu = state_values(mdp, policy, &QTable(mdp.reward().clone()));
    let system = DMatrix::identity(n_states, n_states) - kernel * mdp.discount();
    let v = solve_linear_system(&system, &r_mu).map_err(|e| {
        Error::ContractViolation(format!("policy evaluation system is singular: {e}"))
    })?;
    Ok(QTable(mdp.reward() + mdp.transition() * v * mdp.discount()))
}

/// Per-state argmax with ties going to the lowest action index.
pub fn greedy_policy(q: &QTable, mdp: &TabularMdp) -> Result<DeterministicPolicy> {
    mdp.check_q(q)?;
    let n_actions = mdp.n_actions();
    let actions = (0..mdp.n_states())
        .map(|s| argmax_first(&q.as_slice()[s * n_actions..(s + 1) * n_actions]))
        .collect();
    DeterministicPolicy::new(actions, n_actions)
}

/// Index of the first maximal entry.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Value iteration until `‖q_{t+1} − q_t‖∞ ≤ tol·(1 − γ)/(2γ)`, which
/// guarantees `‖q − Q_*‖∞ ≤ tol`.
pub fn optimal_q(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let gamma = mdp.discount();
    if gamma == 0.0 {
        return Ok(QTable(mdp.reward().clone()));
    }
    let threshold = tol * (1.0 - gamma) / (2.0 * gamma);
    let mut q = QTable::zeros(mdp.n_pairs());
    loop {
        let next = bellman_optimality_apply(mdp, &q)?;
        let step = next.sup_distance(&q);
        q = next;
        if step <= threshold {
            return Ok(q);
        }
    }
}

/// Classical policy iteration from `initial`; returns the visited policies and
/// their exact Q-values, stopping once the greedy policy repeats.
pub fn policy_iteration(
    mdp: &TabularMdp,
    initial: DeterministicPolicy,
    max_iterations: usize,
) -> Result<(Vec<DeterministicPolicy>, Vec<QTable>)> {
    let mut policies = vec![initial];
    let mut values = Vec::new();
    for _ in 0..max_iterations {
        let current = policies.last().expect("non-empty");
        let q = exact_q_value(mdp, current)?;
        let next = greedy_policy(&q, mdp)?;
        values.push(q);
        if &next == current {
            break;
        }
        policies.push(next);
    }
    if values.len() < policies.len() {
        let last = policies.last().expect("non-empty");
        values.push(exact_q_value(mdp, last)?);
    }
    Ok((policies, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> TabularMdp {
        // P rows for (s,a) = (0,0), (0,1), (1,0), (1,1).
        let p = DMatrix::from_row_slice(4, 2, &[0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0]);
        let r = DVector::from_vec(vec![1.0, 0.0, -1.0, 2.0]);
        TabularMdp::new(2, 2, p, r, 0.5).unwrap()
    }

    fn random_q(rng: &mut ChaCha8Rng, n: usize) -> QTable {
        QTable(DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0)))
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        let err = TabularMdp::new(2, 1, p, DVector::from_element(2, 0.0), 0.9).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn zero_discount_bellman_is_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = TabularMdp::random(&mut rng, 4, 3, 0.0).unwrap();
        let q = random_q(&mut rng, 12);
        let mu = StochasticPolicy::uniform(4, 3);
        assert_eq!(bellman_apply(&mdp, &mu, &q).unwrap().0, *mdp.reward());
        assert_eq!(bellman_optimality_apply(&mdp, &q).unwrap().0, *mdp.reward());
        assert_eq!(exact_q_value(&mdp, &mu).unwrap().0, *mdp.reward());
        assert_eq!(optimal_q(&mdp, 1e-6).unwrap().0, *mdp.reward());
    }

    #[test]
    fn hand_computed_two_state_bellman() {
        let mdp = two_state();
        let mu = DeterministicPolicy::new(vec![0, 1], 2).unwrap();
        let q1 = bellman_apply(&mdp, &mu, &QTable::zeros(4)).unwrap();
        assert_eq!(q1.0, *mdp.reward());
        // V(0) = q1(0,0) = 1, V(1) = q1(1,1) = 2.
        // (0,0): 1 + 0.5(0.9·1 + 0.1·2) = 1.55
        // (0,1): 0 + 0.5(0.2·1 + 0.8·2) = 0.9
        // (1,0): -1 + 0.5(0.5·1 + 0.5·2) = -0.25
        // (1,1): 2 + 0.5(0·1 + 1·2) = 3
        let q2 = bellman_apply(&mdp, &mu, &q1).unwrap();
        let expected = [1.55, 0.9, -0.25, 3.0];
        for (got, want) in q2.as_slice().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn exact_q_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(&mut rng, 6, 3, 0.9).unwrap();
        let mu = StochasticPolicy::uniform(6, 3);
        let q = exact_q_value(&mdp, &mu).unwrap();
        assert!(bellman_apply(&mdp, &mu, &q).unwrap().sup_distance(&q) <= 1e-9);
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = TabularMdp::new(
            1,
            1,
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            0.9,
        )
        .unwrap();
        let q = exact_q_value(&mdp, &DeterministicPolicy::constant(1, 1, 0).unwrap()).unwrap();
        assert!((q.0[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn exact_q_matches_fixed_point_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(&mut rng, 8, 3, 0.9).unwrap();
        let mu = DeterministicPolicy::new((0..8).map(|s| s % 3).collect(), 3).unwrap();
        let mut q = QTable::zeros(24);
        for _ in 0..10_000 {
            q = bellman_apply(&mdp, &mu, &q).unwrap();
        }
        let exact = exact_q_value(&mdp, &mu).unwrap();
        assert!(exact.sup_distance(&q) < 1e-6);
        assert!(
            bellman_apply(&mdp, &mu, &exact)
                .unwrap()
                .sup_distance(&exact)
                <= 1e-8
        );
    }

    #[test]
    fn greedy_tie_rules() {
        let mdp = TabularMdp::random(&mut ChaCha8Rng::seed_from_u64(4), 3, 4, 0.5).unwrap();
        let increasing = QTable::from_vec((0..12).map(|i| (i % 4) as f64).collect());
        assert_eq!(
            greedy_policy(&increasing, &mdp).unwrap().actions(),
            &[3, 3, 3]
        );
        let flat = QTable::from_vec(vec![2.0; 12]);
        assert_eq!(greedy_policy(&flat, &mdp).unwrap().actions(), &[0, 0, 0]);
    }

    #[test]
    fn greedy_on_optimal_values_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(&mut rng, 5, 3, 0.9).unwrap();
        let (policies, values) =
            policy_iteration(&mdp, DeterministicPolicy::constant(5, 3, 0).unwrap(), 100).unwrap();
        let q_star = values.last().unwrap();
        let greedy = greedy_policy(q_star, &mdp).unwrap();
        let q_greedy = exact_q_value(&mdp, &greedy).unwrap();
        assert!(q_greedy.sup_distance(q_star) < 1e-9);
        assert_eq!(&greedy, policies.last().unwrap());
    }

    #[test]
    fn optimal_q_single_state_two_actions() {
        let mdp = TabularMdp::new(
            1,
            2,
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![0.0, 1.0]),
            0.9,
        )
        .unwrap();
        let q = optimal_q(&mdp, 1e-9).unwrap();
        assert!((q.0[0] - 9.0).abs() < 1e-9 && (q.0[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn optimal_q_agrees_with_exact_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMdp::random(&mut rng, 6, 3, 0.9).unwrap();
        let tol = 1e-6;
        let q = optimal_q(&mdp, tol).unwrap();
        let greedy = greedy_policy(&q, &mdp).unwrap();
        let exact = exact_q_value(&mdp, &greedy).unwrap();
        assert!(q.sup_distance(&exact) <= 2.0 * tol);
        // Constant inputs shift by γ·v.
        let shifted = bellman_optimality_apply(&mdp, &QTable::from_vec(vec![3.0; 18])).unwrap();
        let expected = mdp.reward().add_scalar(0.9 * 3.0);
        assert!((shifted.0 - expected).amax() < 1e-12);
        // T fixes Q_* up to the value-iteration accuracy.
        assert!(bellman_optimality_apply(&mdp, &q).unwrap().sup_distance(&q) <= 2.0 * tol);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let mdp = two_state();
        let err = bellman_optimality_apply(&mdp, &QTable::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let wrong = DeterministicPolicy::constant(3, 2, 0).unwrap();
        assert!(bellman_apply(&mdp, &wrong, &QTable::zeros(4)).is_err());
    }
}
