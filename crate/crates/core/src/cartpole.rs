//! Cart-pole balancing with the classic constants and a semi-implicit Euler
//! integrator.

use rand::Rng;

use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
pub const HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_STEPS: usize = 500;
pub const N_ACTIONS: usize = 2;
pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn is_terminal(&self) -> bool {
        self.theta.abs() > THETA_LIMIT || self.x.abs() > X_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next_state: CartPoleState,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Each coordinate uniform on `[−0.05, 0.05]`.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> CartPoleState {
    let mut draw = || rng.gen_range(-0.05..=0.05);
    CartPoleState {
        x: draw(),
        x_dot: draw(),
        theta: draw(),
        theta_dot: draw(),
    }
}

/// One integration step under an arbitrary horizontal force.
pub fn integrate(state: &CartPoleState, force: f64) -> CartPoleState {
    let total_mass = CART_MASS + POLE_MASS;
    let pole_moment = POLE_MASS * HALF_LENGTH;
    let (sin, cos) = state.theta.sin_cos();
    let temp = (force + pole_moment * state.theta_dot * state.theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - pole_moment * theta_acc * cos / total_mass;

    let x_dot = state.x_dot + TAU * x_acc;
    let theta_dot = state.theta_dot + TAU * theta_acc;
    CartPoleState {
        x: state.x + TAU * x_dot,
        x_dot,
        theta: state.theta + TAU * theta_dot,
        theta_dot,
    }
}

/// Applies action `0` (push left) or `1` (push right) at step index `t`.
pub fn step(state: &CartPoleState, action: usize, t: usize) -> Result<StepResult> {
    if action >= N_ACTIONS {
        return Err(Error::InvalidArgument(format!(
            "cart-pole action {action} is not 0 or 1"
        )));
    }
    if t >= MAX_STEPS {
        return Err(Error::InvalidArgument(format!(
            "step index {t} past the {MAX_STEPS}-step horizon"
        )));
    }
    let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
    let next_state = integrate(state, force);
    let terminated = next_state.is_terminal();
    Ok(StepResult {
        next_state,
        reward: 1.0,
        terminated,
        truncated: !terminated && t + 1 == MAX_STEPS,
    })
}

/// Runs one episode from `reset(rng)` and returns `(Σ γᵗ r_t, Σ r_t)`.
pub fn rollout_return<R, F>(
    policy: F,
    discount: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: FnMut(&CartPoleState) -> usize,
{
    let start = reset(rng);
    rollout_from(start, policy, discount, max_steps)
}

/// Runs one episode from `start` and returns `(Σ γᵗ r_t, Σ r_t)`.
pub fn rollout_from<F>(
    start: CartPoleState,
    mut policy: F,
    discount: f64,
    max_steps: usize,
) -> Result<(f64, f64)>
where
    F: FnMut(&CartPoleState) -> usize,
{
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::InvalidArgument(format!(
            "discount {discount} outside [0, 1]"
        )));
    }
    let horizon = max_steps.min(MAX_STEPS);
    let mut state = start;
    let (mut discounted, mut undiscounted, mut weight) = (0.0, 0.0, 1.0);
    for t in 0..horizon {
        let result = step(&state, policy(&state), t)?;
        discounted += weight * result.reward;
        undiscounted += result.reward;
        weight *= discount;
        if result.terminated || result.truncated {
            break;
        }
        state = result.next_state;
    }
    Ok((discounted, undiscounted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_range_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let s = reset(&mut rng);
            assert!(s.to_array().iter().all(|v| v.abs() <= 0.05));
        }
        let a = reset(&mut ChaCha8Rng::seed_from_u64(3));
        let b = reset(&mut ChaCha8Rng::seed_from_u64(3));
        let c = reset(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_step_from_rest_by_hand() {
        let result = step(&CartPoleState::default(), 0, 0).unwrap();
        // θ = 0, F = −10: temp = −10/1.1, θ̈ = −temp / (0.5·(4/3 − 0.1/1.1)).
        let temp = -10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let s = result.next_state;
        assert!((s.theta_dot - 0.02 * theta_acc).abs() < 1e-15);
        assert!((s.theta - 0.02 * 0.02 * theta_acc).abs() < 1e-15);
        assert!((s.x_dot - 0.02 * x_acc).abs() < 1e-15);
        assert!((s.x - 0.02 * 0.02 * x_acc).abs() < 1e-15);
        // Pushing the cart left swings the pole toward positive angles.
        assert!(s.theta > 0.0 && s.theta.abs() < THETA_LIMIT);
        assert!(!result.terminated && !result.truncated);
        assert_eq!(result.reward, 1.0);
    }

    #[test]
    fn thresholds() {
        let tilted = CartPoleState {
            theta: 13f64.to_radians(),
            ..Default::default()
        };
        assert!(step(&tilted, 1, 0).unwrap().terminated);
        let far = CartPoleState {
            x: 2.5,
            ..Default::default()
        };
        assert!(step(&far, 0, 0).unwrap().terminated);
        assert!(step(&CartPoleState::default(), 2, 0).is_err());
        assert!(step(&CartPoleState::default(), 0, MAX_STEPS).is_err());
    }

    #[test]
    fn truncation_at_horizon() {
        let r = step(&CartPoleState::default(), 0, MAX_STEPS - 1).unwrap();
        assert!(r.truncated && !r.terminated);
        let tilted = CartPoleState {
            theta: 0.5,
            ..Default::default()
        };
        let r = step(&tilted, 0, MAX_STEPS - 1).unwrap();
        assert!(r.terminated && !r.truncated);
    }

    #[test]
    fn unforced_pole_falls() {
        let mut s = CartPoleState {
            theta: 0.01,
            ..Default::default()
        };
        for _ in 0..10 {
            let next = integrate(&s, 0.0);
            assert!(next.theta.abs() >= s.theta.abs());
            s = next;
        }
    }

    #[test]
    fn rollout_returns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, u) = rollout_return(|_| 0, 1.0, 500, &mut rng).unwrap();
        assert_eq!(d, u);
        let (d, _) = rollout_return(|_| 0, 0.0, 500, &mut rng).unwrap();
        assert_eq!(d, 1.0);
        assert!(rollout_return(|_| 0, 1.5, 500, &mut rng).is_err());
    }
}
