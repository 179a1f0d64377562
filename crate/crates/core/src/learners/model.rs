//! The unified [`Regressor`] and its JSON artifact document.
//!
//! An artifact is a single JSON object:
//!
//! ```text
//! { schema_version, kind, hyperparameters, trained_at_soh, version, seed,
//!   n_features, features, scaler: {min[], max[]} | null, payload }
//! ```
//!
//! Tree payloads are `{ "trees": [ { "nodes": [ {feature, threshold, left,
//! right, leaf_value}, ... ] } ] }` (boosted models add `base_score` and
//! `learning_rate`); MLP payloads hold row-major layer weights and biases.
//! Floats are written in shortest round-trip form, so a reloaded model
//! predicts bit-identically.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::boost::{BoostParams, BoostedModel};
use super::forest::{ForestModel, ForestParams};
use super::metrics::EvalReport;
use super::mlp::{MlpModel, MlpParams};
use super::scaler::MinMaxScaler;
use super::LearnError;
use crate::features::{Feature, Matrix};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RandomForest,
    GradientBoosted,
    Mlp,
}

impl LearnerKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rf" | "random_forest" => Some(Self::RandomForest),
            "gbt" | "lgb" | "gradient_boosted" => Some(Self::GradientBoosted),
            "mlp" | "dnn" => Some(Self::Mlp),
            _ => None,
        }
    }
}

/// Learner choice with its hyperparameters, e.g.
/// `{"kind": "random_forest", "n_trees": 50}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerConfig {
    RandomForest(ForestParams),
    GradientBoosted(BoostParams),
    Mlp(MlpParams),
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::RandomForest(ForestParams::default())
    }
}

impl LearnerConfig {
    pub fn default_for(kind: LearnerKind) -> Self {
        match kind {
            LearnerKind::RandomForest => Self::RandomForest(ForestParams::default()),
            LearnerKind::GradientBoosted => Self::GradientBoosted(BoostParams::default()),
            LearnerKind::Mlp => Self::Mlp(MlpParams::default()),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Self::RandomForest(_) => LearnerKind::RandomForest,
            Self::GradientBoosted(_) => LearnerKind::GradientBoosted,
            Self::Mlp(_) => LearnerKind::Mlp,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::RandomForest(p) => p.seed,
            Self::GradientBoosted(p) => p.seed,
            Self::Mlp(p) => p.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            Self::RandomForest(p) => p.seed = seed,
            Self::GradientBoosted(p) => p.seed = seed,
            Self::Mlp(p) => p.seed = seed,
        }
        self
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        match self {
            Self::RandomForest(p) => p.validate(),
            Self::GradientBoosted(p) => p.validate(),
            Self::Mlp(p) => p.validate(),
        }
    }

    /// Applies `key=value` overrides; values parse as JSON where possible
    /// and fall back to strings (`max_depth=null`, `feature_subsample=all`).
    pub fn with_overrides<'a>(
        &self,
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, LearnError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let obj = doc.as_object_mut().expect("config is an object");
        for (k, v) in pairs {
            if k == "kind" {
                return Err(LearnError::InvalidParams(
                    "the learner kind cannot be overridden".into(),
                ));
            }
            let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            obj.insert(k.to_string(), parsed);
        }
        let cfg: Self = serde_json::from_value(doc)
            .map_err(|e| LearnError::InvalidParams(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn params_value(&self) -> Value {
        match self {
            Self::RandomForest(p) => serde_json::to_value(p),
            Self::GradientBoosted(p) => serde_json::to_value(p),
            Self::Mlp(p) => serde_json::to_value(p),
        }
        .expect("params serialize")
    }

    fn from_parts(kind: LearnerKind, params: Value) -> Result<Self, serde_json::Error> {
        Ok(match kind {
            LearnerKind::RandomForest => Self::RandomForest(serde_json::from_value(params)?),
            LearnerKind::GradientBoosted => Self::GradientBoosted(serde_json::from_value(params)?),
            LearnerKind::Mlp => Self::Mlp(serde_json::from_value(params)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelPayload {
    Forest(ForestModel),
    Boosted(BoostedModel),
    Mlp(MlpModel),
}

/// A trained estimator of a percent-valued target. Immutable once trained;
/// `predict` is deterministic and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub config: LearnerConfig,
    /// SOH band the training data came from, when known.
    pub trained_at_soh: Option<f64>,
    pub version: u64,
    pub n_features: usize,
    /// Names of the input columns, in order. May be empty for anonymous
    /// matrices.
    pub features: Vec<Feature>,
    pub scaler: Option<MinMaxScaler>,
    pub payload: ModelPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    /// Fit a Min-Max scaler on the training inputs and store it in the model.
    MinMax,
    #[default]
    None,
}

impl Regressor {
    /// Trains the configured learner. MLPs always get a Min-Max scaler,
    /// since logistic units saturate on raw inputs.
    pub fn fit(
        config: &LearnerConfig,
        x: &Matrix,
        y: &[f64],
        scaling: Scaling,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        super::check_xy(x, y)?;
        let scale = scaling == Scaling::MinMax || config.kind() == LearnerKind::Mlp;
        let scaler = if scale {
            Some(MinMaxScaler::fit(x)?)
        } else {
            None
        };
        let scaled;
        let xin = match &scaler {
            Some(s) => {
                scaled = s.transform(x)?;
                &scaled
            }
            None => x,
        };
        let payload = match config {
            LearnerConfig::RandomForest(p) => ModelPayload::Forest(ForestModel::fit(xin, y, p)?),
            LearnerConfig::GradientBoosted(p) => {
                ModelPayload::Boosted(BoostedModel::fit(xin, y, p)?)
            }
            LearnerConfig::Mlp(p) => ModelPayload::Mlp(MlpModel::fit(xin, y, p)?),
        };
        Ok(Self {
            config: config.clone(),
            trained_at_soh: None,
            version: 0,
            n_features: x.n_cols(),
            features: Vec::new(),
            scaler,
            payload,
        })
    }

    pub fn kind(&self) -> LearnerKind {
        self.config.kind()
    }

    pub fn seed(&self) -> u64 {
        self.config.seed()
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn with_band(mut self, soh: f64) -> Self {
        self.trained_at_soh = Some(soh);
        self
    }

    pub fn with_features(mut self, features: &[Feature]) -> Self {
        self.features = features.to_vec();
        self
    }

    fn predict_raw(&self, x: &[f64]) -> f64 {
        match &self.payload {
            ModelPayload::Forest(m) => m.predict_row(x),
            ModelPayload::Boosted(m) => m.predict_row(x),
            ModelPayload::Mlp(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, LearnError> {
        if x.n_cols() != self.n_features {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features,
                found: x.n_cols(),
            });
        }
        let mut buf = vec![0.0; self.n_features];
        let mut out = Vec::with_capacity(x.n_rows());
        for (i, row) in x.rows().enumerate() {
            let y = match &self.scaler {
                Some(s) => {
                    s.transform_row(row, &mut buf)?;
                    self.predict_raw(&buf)
                }
                None => self.predict_raw(row),
            };
            if !y.is_finite() {
                return Err(LearnError::NonFinitePrediction { row: i });
            }
            out.push(y);
        }
        Ok(out)
    }

    /// Per-tree predictions for tree ensembles (one vector per tree, in
    /// tree order); `None` for MLPs.
    pub fn tree_predictions(&self, x: &Matrix) -> Option<Vec<Vec<f64>>> {
        let trees = match &self.payload {
            ModelPayload::Forest(m) => &m.trees,
            ModelPayload::Boosted(m) => &m.trees,
            ModelPayload::Mlp(_) => return None,
        };
        let mut buf = vec![0.0; self.n_features];
        Some(
            trees
                .iter()
                .map(|t| {
                    x.rows()
                        .map(|r| match &self.scaler {
                            Some(s) => {
                                s.transform_row(r, &mut buf).expect("dimension checked");
                                t.predict_row(&buf)
                            }
                            None => t.predict_row(r),
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Error metrics on `(x, y_true)`; `infer_time_s` is measured here,
    /// `train_time_s` is left for the caller.
    pub fn evaluate(&self, x: &Matrix, y_true: &[f64]) -> Result<EvalReport, LearnError> {
        if x.n_rows() == 0 {
            return Err(LearnError::EmptyData);
        }
        let t0 = Instant::now();
        let pred = self.predict(x)?;
        let infer = t0.elapsed().as_secs_f64();
        let mut r = EvalReport::from_errors(&pred, y_true)?;
        r.infer_time_s = infer;
        Ok(r)
    }

    pub fn to_document(&self) -> Value {
        let payload = match &self.payload {
            ModelPayload::Forest(m) => serde_json::to_value(m),
            ModelPayload::Boosted(m) => serde_json::to_value(m),
            ModelPayload::Mlp(m) => serde_json::to_value(m),
        }
        .expect("payload serializes");
        serde_json::to_value(ArtifactDoc {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            kind: self.kind(),
            hyperparameters: self.config.params_value(),
            trained_at_soh: self.trained_at_soh,
            version: self.version,
            seed: self.seed(),
            n_features: self.n_features,
            features: self.features.clone(),
            scaler: self.scaler.clone(),
            payload,
        })
        .expect("artifact serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| LearnError::Artifact(e.to_string()))?;
        Self::from_document(&doc)
    }

    /// Parses and structurally validates an artifact. Never yields a model
    /// that could panic or read out of bounds at prediction time.
    pub fn from_document(doc: &Value) -> Result<Self, LearnError> {
        let bad = |m: String| LearnError::Artifact(m);
        let version = doc
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing schema_version".into()))?;
        if version != ARTIFACT_SCHEMA_VERSION as u64 {
            return Err(LearnError::SchemaVersion {
                expected: ARTIFACT_SCHEMA_VERSION,
                found: version,
            });
        }
        let a: ArtifactDoc =
            serde_json::from_value(doc.clone()).map_err(|e| bad(e.to_string()))?;
        let config = LearnerConfig::from_parts(a.kind, a.hyperparameters)
            .map_err(|e| bad(format!("hyperparameters: {e}")))?;
        if config.seed() != a.seed {
            return Err(bad("seed disagrees with hyperparameters".into()));
        }
        let payload = match a.kind {
            LearnerKind::RandomForest => {
                ModelPayload::Forest(serde_json::from_value(a.payload).map_err(|e| bad(e.to_string()))?)
            }
            LearnerKind::GradientBoosted => {
                ModelPayload::Boosted(serde_json::from_value(a.payload).map_err(|e| bad(e.to_string()))?)
            }
            LearnerKind::Mlp => {
                ModelPayload::Mlp(serde_json::from_value(a.payload).map_err(|e| bad(e.to_string()))?)
            }
        };
        let m = Self {
            config,
            trained_at_soh: a.trained_at_soh,
            version: a.version,
            n_features: a.n_features,
            features: a.features,
            scaler: a.scaler,
            payload,
        };
        m.validate().map_err(bad)?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), String> {
        if self.n_features == 0 {
            return Err("model has no input features".into());
        }
        if !self.features.is_empty() && self.features.len() != self.n_features {
            return Err("feature names disagree with n_features".into());
        }
        if let Some(s) = &self.scaler {
            s.validate()?;
            if s.n_features() != self.n_features {
                return Err("scaler width disagrees with n_features".into());
            }
        }
        match &self.payload {
            ModelPayload::Forest(m) => {
                if m.trees.is_empty() {
                    return Err("forest has no trees".into());
                }
                m.trees.iter().try_for_each(|t| t.validate(self.n_features))
            }
            ModelPayload::Boosted(m) => {
                if !m.base_score.is_finite() || !m.learning_rate.is_finite() {
                    return Err("non-finite boosting constants".into());
                }
                m.trees.iter().try_for_each(|t| t.validate(self.n_features))
            }
            ModelPayload::Mlp(m) => {
                m.network.validate()?;
                if m.network.n_inputs() != self.n_features {
                    return Err("network width disagrees with n_features".into());
                }
                if self.scaler.is_none() {
                    return Err("mlp artifact lacks its scaler".into());
                }
                if !m.target_offset.is_finite() || !(m.target_scale.is_finite()) {
                    return Err("non-finite target normalization".into());
                }
                Ok(())
            }
        }
    }

    /// SHA-256 of the serialized artifact, hex encoded.
    pub fn fingerprint(&self) -> String {
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut w = HashWriter(Sha256::new());
        serde_json::to_writer(&mut w, &self.to_document()).expect("hashing cannot fail");
        hex::encode(w.0.finalize())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactDoc {
    schema_version: u32,
    kind: LearnerKind,
    hyperparameters: Value,
    trained_at_soh: Option<f64>,
    version: u64,
    seed: u64,
    n_features: usize,
    #[serde(default)]
    features: Vec<Feature>,
    scaler: Option<MinMaxScaler>,
    payload: Value,
}
