//! Random forest regression: bagged CART trees with per-split feature
//! subsampling, aggregated by the mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_cart, CartParams, Tree};
use super::LearnError;
use crate::features::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// `ceil(sqrt(d))` candidates per split.
    Sqrt,
    All,
    Fixed(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            FeatureSubsample::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            FeatureSubsample::All => n_features,
            FeatureSubsample::Fixed(m) => m.min(n_features),
        }
        .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: Some(16),
            min_samples_leaf: 2,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.n_trees == 0 {
            return Err(LearnError::InvalidParams("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(LearnError::InvalidParams(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(LearnError::InvalidParams("max_depth must be >= 1".into()));
        }
        if self.feature_subsample == FeatureSubsample::Fixed(0) {
            return Err(LearnError::InvalidParams(
                "feature_subsample must select at least one feature".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn fit(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<Self, LearnError> {
        params.validate()?;
        super::check_xy(x, y)?;
        let n = x.n_rows();
        let cart = CartParams {
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            max_features: params.feature_subsample.resolve(x.n_cols()),
        };
        // One RNG stream per tree keeps results independent of scheduling.
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(i as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                fit_cart(x, y, rows, cart, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        sum / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Matrix, Vec<f64>) {
        let rows: Vec<[f64; 2]> = (0..40)
            .map(|i| [i as f64, ((i * 7) % 11) as f64])
            .collect();
        let y = rows.iter().map(|r| r[0] * 0.5 + r[1]).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn constant_target() {
        let (x, _) = toy();
        let y = vec![42.0; x.n_rows()];
        let m = ForestModel::fit(&x, &y, &ForestParams::default()).unwrap();
        for r in x.rows() {
            assert!((m.predict_row(r) - 42.0).abs() < 1e-9);
        }
    }

    #[test]
    fn seed_determinism() {
        let (x, y) = toy();
        let p = ForestParams {
            n_trees: 8,
            seed: 3,
            ..ForestParams::default()
        };
        let a = ForestModel::fit(&x, &y, &p).unwrap();
        let b = ForestModel::fit(&x, &y, &p).unwrap();
        assert_eq!(a, b);
        let c = ForestModel::fit(&x, &y, &ForestParams { seed: 4, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_params() {
        let (x, y) = toy();
        for p in [
            ForestParams {
                n_trees: 0,
                ..Default::default()
            },
            ForestParams {
                min_samples_leaf: 0,
                ..Default::default()
            },
            ForestParams {
                max_depth: Some(0),
                ..Default::default()
            },
        ] {
            assert!(matches!(
                ForestModel::fit(&x, &y, &p),
                Err(LearnError::InvalidParams(_))
            ));
        }
        assert!(matches!(
            ForestModel::fit(&Matrix::with_cols(2), &[], &ForestParams::default()),
            Err(LearnError::EmptyData)
        ));
    }

    #[test]
    fn sqrt_subsample() {
        assert_eq!(FeatureSubsample::Sqrt.resolve(4), 2);
        assert_eq!(FeatureSubsample::Sqrt.resolve(3), 2);
        assert_eq!(FeatureSubsample::Sqrt.resolve(1), 1);
        assert_eq!(FeatureSubsample::Fixed(9).resolve(4), 4);
    }
}
