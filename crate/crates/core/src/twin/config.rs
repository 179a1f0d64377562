use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::features::Feature;
use crate::learners::{ForestParams, LearnerConfig};

/// How per-sample SOH predictions collapse into one estimate per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SohReducer {
    #[default]
    Mean,
    Median,
}

impl SohReducer {
    pub fn reduce(self, values: &[f64]) -> f64 {
        match self {
            SohReducer::Mean => values.iter().sum::<f64>() / values.len() as f64,
            SohReducer::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Retrain once the SOH estimate has fallen this many points below the
    /// SOH the current SOC model was trained at. `None` disables the
    /// trigger.
    pub soh_trigger_delta: Option<f64>,
    /// Retrain after this many uploads since the previous retrain.
    pub period_trigger: Option<usize>,
    pub soc_learner: LearnerConfig,
    pub soh_learner: LearnerConfig,
    pub soc_features: Vec<Feature>,
    pub soh_features: Vec<Feature>,
    /// Most recent uploaded cycles used for each SOC retrain.
    pub retrain_window: usize,
    pub soh_reducer: SohReducer,
    /// Battery replayed through the edge; defaults to the first by id.
    pub vehicle_battery: Option<String>,
    /// Batteries used for the SOH model; defaults to every other battery,
    /// or the vehicle itself when it is the only one.
    pub historical_batteries: Option<Vec<String>>,
    /// Leading cycles of each historical battery used for the initial SOC
    /// model.
    pub nominal_cycles: usize,
    pub seed: u64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        let rf = LearnerConfig::RandomForest(ForestParams::default());
        // The SOH boundary is oblique in (voltage, time); a depth cap leaves
        // early-discharge samples underfit.
        let deep_rf = LearnerConfig::RandomForest(ForestParams {
            max_depth: None,
            ..ForestParams::default()
        });
        Self {
            soh_trigger_delta: Some(1.0),
            period_trigger: None,
            soc_learner: rf,
            soh_learner: deep_rf,
            soc_features: Feature::ALL.to_vec(),
            soh_features: Feature::ALL.to_vec(),
            retrain_window: 3,
            soh_reducer: SohReducer::Mean,
            vehicle_battery: None,
            historical_batteries: None,
            nominal_cycles: 1,
            seed: 0,
        }
    }
}

impl TwinConfig {
    /// Configuration with retraining effectively off: a delta trigger no
    /// battery can reach and no period trigger.
    pub fn without_retraining(mut self) -> Self {
        self.soh_trigger_delta = Some(f64::MAX);
        self.period_trigger = None;
        self
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let bad = |m: &str| Err(TwinError::Config(m.to_string()));
        if self.soh_trigger_delta.is_none() && self.period_trigger.is_none() {
            return bad("at least one retrain trigger must be enabled");
        }
        if let Some(d) = self.soh_trigger_delta {
            if !(d > 0.0) {
                return bad("soh_trigger_delta must be > 0");
            }
        }
        if self.period_trigger == Some(0) {
            return bad("period_trigger must be >= 1");
        }
        if self.retrain_window == 0 {
            return bad("retrain_window must be >= 1");
        }
        if self.nominal_cycles == 0 {
            return bad("nominal_cycles must be >= 1");
        }
        if self.soc_features.is_empty() || self.soh_features.is_empty() {
            return bad("feature lists must not be empty");
        }
        self.soc_learner.validate()?;
        self.soh_learner.validate()?;
        Ok(())
    }
}
