//! Single-item inventory control with stochastic demand, built as an exact
//! tabular MDP.
//!
//! State `s ∈ {0..M}` is the stock on hand and action `a ∈ {0..M}` the
//! quantity ordered. Orders are clipped at capacity, `ŝ = min(s + a, M)`,
//! demand `d` is served from `ŝ`, and the next state is `max(ŝ − d, 0)`.
//! The stored reward is the expectation over demand of
//! `p·min(ŝ, d) − c·a − h·max(ŝ − d, 0)`; procurement is charged on the full
//! order even when part of it does not fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryParams {
    pub capacity: usize,
    pub unit_cost: f64,
    pub holding_cost: f64,
    pub price: f64,
    /// Probability of each demand level `0..=capacity`.
    pub demand: Vec<f64>,
    pub discount: f64,
}

impl InventoryParams {
    /// `M = 49`, `c = 5`, `h = 1`, `p = 10`, uniform demand, `γ = 0.9`.
    pub fn benchmark() -> Self {
        Self {
            capacity: 49,
            unit_cost: 5.0,
            holding_cost: 1.0,
            price: 10.0,
            demand: uniform_demand(49).expect("capacity is positive"),
            discount: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity < 1 {
            return Err(Error::InvalidArgument(
                "inventory capacity must be at least 1".into(),
            ));
        }
        Error::check_dim(
            "inventory: demand support",
            self.capacity + 1,
            self.demand.len(),
        )?;
        if self.demand.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "demand probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = self.demand.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("demand sums to {total}")));
        }
        for (name, v) in [
            ("unit_cost", self.unit_cost),
            ("holding_cost", self.holding_cost),
            ("price", self.price),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Post-order stock level `min(s + a, M)`.
    pub fn post_order_level(&self, stock: usize, order: usize) -> usize {
        (stock + order).min(self.capacity)
    }

    /// One-day reward for a realized demand.
    pub fn realized_reward(&self, order: usize, post_order: usize, demand: usize) -> f64 {
        let sold = post_order.min(demand) as f64;
        let left = post_order.saturating_sub(demand) as f64;
        self.price * sold - self.unit_cost * order as f64 - self.holding_cost * left
    }
}

impl Default for InventoryParams {
    fn default() -> Self {
        Self::benchmark()
    }
}

/// Uniform demand over `{0, …, M}`.
pub fn uniform_demand(capacity: usize) -> Result<Vec<f64>> {
    if capacity < 1 {
        return Err(Error::InvalidArgument(
            "inventory capacity must be at least 1".into(),
        ));
    }
    Ok(vec![1.0 / (capacity + 1) as f64; capacity + 1])
}

pub fn build_inventory_mdp(params: &InventoryParams) -> Result<TabularMdp> {
    params.validate()?;
    let n = params.capacity + 1;
    let mut transition = DMatrix::zeros(n * n, n);
    let mut reward = DVector::zeros(n * n);
    for stock in 0..n {
        for order in 0..n {
            let pair = stock * n + order;
            let level = params.post_order_level(stock, order);
            let mut expected = 0.0;
            for (demand, &prob) in params.demand.iter().enumerate() {
                if prob == 0.0 {
                    continue;
                }
                transition[(pair, level.saturating_sub(demand))] += prob;
                expected += prob * params.realized_reward(order, level, demand);
            }
            reward[pair] = expected;
        }
    }
    TabularMdp::new(n, n, transition, reward, params.discount)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_clip() {
        let params = InventoryParams::benchmark();
        assert_eq!(params.post_order_level(40, 20), 49);
        assert_eq!(params.post_order_level(10, 5), 15);
    }

    #[test]
    fn realized_reward_by_hand() {
        let params = InventoryParams {
            capacity: 10,
            unit_cost: 5.0,
            holding_cost: 1.0,
            price: 10.0,
            demand: uniform_demand(10).unwrap(),
            discount: 0.9,
        };
        // s = 0, a = 5, d = 3: sell 3, keep 2.
        let level = params.post_order_level(0, 5);
        assert_eq!(
            params.realized_reward(5, level, 3),
            10.0 * 3.0 - 5.0 * 5.0 - 1.0 * 2.0
        );
    }

    #[test]
    fn uniform_demand_values() {
        assert_eq!(uniform_demand(1).unwrap(), vec![0.5, 0.5]);
        let d = uniform_demand(49).unwrap();
        assert_eq!(d.len(), 50);
        assert!(d.iter().all(|&p| p == 0.02));
        for m in 1..=200 {
            let total: f64 = uniform_demand(m).unwrap().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(uniform_demand(0).is_err());
    }

    #[test]
    fn benchmark_instance_shape() {
        let mdp = build_inventory_mdp(&InventoryParams::benchmark()).unwrap();
        assert_eq!(mdp.n_states(), 50);
        assert_eq!(mdp.n_actions(), 50);
        assert_eq!(mdp.reward()[0], 0.0);
        for row in mdp.transition().row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn support_and_stockout_mass() {
        let params = InventoryParams::benchmark();
        let mdp = build_inventory_mdp(&params).unwrap();
        for (stock, order) in [(0, 0), (3, 7), (20, 45), (49, 49)] {
            let level = params.post_order_level(stock, order);
            for s_next in (level + 1)..50 {
                assert_eq!(mdp.prob(stock, order, s_next), 0.0);
            }
            let tail: f64 = params.demand[level..].iter().sum();
            assert!((mdp.prob(stock, order, 0) - tail).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let mut params = InventoryParams::benchmark();
        params.demand[0] += 0.1;
        assert!(build_inventory_mdp(&params).is_err());
        params.demand = vec![1.0];
        assert!(build_inventory_mdp(&params).is_err());
    }
}
