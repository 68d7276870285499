//! Policy iteration with Bellman-constrained linear critics, its model-based
//! baselines, and a small model-free deep Q-learning stack.

pub mod cartpole;
pub mod error;
pub mod features;
pub mod harness;
pub mod inventory;
pub mod mdp;
pub mod model_based;
pub mod model_free;
pub mod nn;
pub mod numerics;

pub use error::{Error, Result};
