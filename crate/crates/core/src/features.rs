//! Linear function class `{Φθ}` over state-action pairs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::QTable;

/// Feature matrix `Φ` of shape `(S·A) × d`; row `s·A + a` is `φ(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    features: DMatrix<f64>,
}

/// Coefficients `θ` of a linear Q-function.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub DVector<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FeatureMap {
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        if features.ncols() == 0 || features.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "feature matrix must be non-empty".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("features must be finite".into()));
        }
        Ok(Self { features })
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_pairs(&self) -> usize {
        self.features.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn row(&self, pair: usize) -> DVector<f64> {
        self.features.row(pair).transpose()
    }
}

/// I.i.d. `U[low, high]` features drawn from a ChaCha stream seeded with `seed`.
pub fn sample_features(
    n_states: usize,
    n_actions: usize,
    dim: usize,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<FeatureMap> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "feature dimension must be at least 1".into(),
        ));
    }
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "feature interval [{low}, {high}] is empty or degenerate"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = n_states * n_actions;
    // Fill row by row so the stream order follows the flat pair index.
    let mut values = Vec::with_capacity(n_pairs * dim);
    for _ in 0..n_pairs * dim {
        values.push(rng.gen_range(low..=high));
    }
    FeatureMap::new(DMatrix::from_row_slice(n_pairs, dim, &values))
}

/// `Φθ`.
pub fn evaluate(phi: &FeatureMap, theta: &ParamVector) -> Result<QTable> {
    Error::check_dim("evaluate: parameter length", phi.dim(), theta.len())?;
    Ok(QTable(phi.matrix() * &theta.0))
}

/// Tabular embedding: `Φ = I` of size `S·A`.
pub fn identity_features(n_states: usize, n_actions: usize) -> FeatureMap {
    let n = n_states * n_actions;
    FeatureMap {
        features: DMatrix::identity(n, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_interval_rejected() {
        assert!(sample_features(2, 2, 3, 1.0, 1.0, 0).is_err());
        assert!(sample_features(2, 2, 0, 1.0, 5.0, 0).is_err());
    }

    #[test]
    fn single_entry_in_range() {
        let phi = sample_features(1, 1, 1, 1.0, 5.0, 42).unwrap();
        let v = phi.matrix()[(0, 0)];
        assert!((1.0..=5.0).contains(&v));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let a = sample_features(5, 4, 6, 1.0, 5.0, 9).unwrap();
        let b = sample_features(5, 4, 6, 1.0, 5.0, 9).unwrap();
        let c = sample_features(5, 4, 6, 1.0, 5.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.matrix().iter().all(|v| (1.0..=5.0).contains(v)));
    }

    #[test]
    fn evaluate_basics() {
        let phi = sample_features(3, 2, 4, 1.0, 5.0, 1).unwrap();
        assert_eq!(
            evaluate(&phi, &ParamVector::zeros(4)).unwrap(),
            QTable::zeros(6)
        );
        let theta = ParamVector(DVector::from_vec(vec![0.5, -1.0, 2.0, 0.25]));
        let q = evaluate(&phi, &theta).unwrap();
        for pair in 0..6 {
            let direct: f64 = (0..4).map(|j| phi.matrix()[(pair, j)] * theta.0[j]).sum();
            assert!((q.0[pair] - direct).abs() < 1e-12);
        }
        assert!(evaluate(&phi, &ParamVector::zeros(3)).is_err());
    }

    #[test]
    fn identity_returns_theta() {
        let phi = identity_features(1, 1);
        assert_eq!(phi.matrix(), &DMatrix::identity(1, 1));
        let phi = identity_features(3, 2);
        let theta = ParamVector(DVector::from_fn(6, |i, _| i as f64 * 1.5 - 2.0));
        assert_eq!(evaluate(&phi, &theta).unwrap().0, theta.0);
    }
}
