//! Regression learners for SOC and SOH: random forest, histogram gradient
//! boosting, and a feed-forward network, behind the common [`Regressor`].

mod boost;
mod cv;
mod forest;
mod metrics;
mod mlp;
mod model;
mod scaler;
mod tree;

pub use boost::{BoostParams, BoostedModel};
pub use cv::{kfold_assignments, kfold_cv, CvReport, DEFAULT_FOLDS};
pub use forest::{FeatureSubsample, ForestModel, ForestParams};
pub use metrics::EvalReport;
pub use mlp::{DenseLayer, MlpModel, MlpParams, Network, Optimizer};
pub use model::{
    LearnerConfig, LearnerKind, ModelPayload, Regressor, Scaling, ARTIFACT_SCHEMA_VERSION,
};
pub use scaler::MinMaxScaler;
pub use tree::{Node, Tree};

use crate::features::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("no training rows")]
    EmptyData,
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in training data at row {row}")]
    NonFiniteInput { row: usize },
    #[error("prediction for row {row} is not finite")]
    NonFinitePrediction { row: usize },
    #[error("scaler used before fitting")]
    ScalerNotFitted,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("malformed model artifact: {0}")]
    Artifact(String),
    #[error("artifact schema version {found} is not supported (expected {expected})")]
    SchemaVersion { expected: u32, found: u64 },
}

pub(crate) fn check_xy(x: &Matrix, y: &[f64]) -> Result<(), LearnError> {
    if x.n_rows() == 0 || x.n_cols() == 0 {
        return Err(LearnError::EmptyData);
    }
    if x.n_rows() != y.len() {
        return Err(LearnError::LengthMismatch {
            rows: x.n_rows(),
            targets: y.len(),
        });
    }
    for (i, (row, t)) in x.rows().zip(y).enumerate() {
        if !t.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFiniteInput { row: i });
        }
    }
    Ok(())
}
