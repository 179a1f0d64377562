//! Cloud actor: estimates SOH from uploaded cycles with the frozen SOH model
//! and retrains the SOC model when a trigger fires.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::TwinConfig;
use super::log::{Actor, Event, EventKind};
use super::message::{Body, Envelope, MsgIds, SohEstimate};
use super::registry::ModelRegistry;
use super::TwinError;
use crate::features::{cycle_matrix, training_set, Target};
use crate::ingest::Cycle;
use crate::labeling::LabeledCycle;
use crate::learners::{Regressor, Scaling};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerReason {
    SohDelta,
    Period,
}

/// Pure trigger rule. `baseline` is the SOH the installed SOC model was
/// trained at: the estimate at the last retrain, or the labeled SOH of the
/// nominal cycles before any retrain.
pub fn trigger_decision(
    cfg: &TwinConfig,
    estimate: f64,
    baseline: f64,
    uploads_since_retrain: usize,
) -> Option<TriggerReason> {
    if cfg
        .soh_trigger_delta
        .is_some_and(|d| estimate <= baseline - d)
    {
        return Some(TriggerReason::SohDelta);
    }
    if cfg
        .period_trigger
        .is_some_and(|p| uploads_since_retrain >= p)
    {
        return Some(TriggerReason::Period);
    }
    None
}

#[derive(Debug)]
pub struct CloudActor {
    cfg: TwinConfig,
    registry: ModelRegistry,
    rated_capacity: f64,
    window: VecDeque<LabeledCycle>,
    baseline: f64,
    uploads_since_retrain: usize,
    ids: MsgIds,
    step: u64,
    initial_update: Option<Envelope>,
    rejected_updates: Vec<u64>,
    log: Vec<Event>,
}

impl CloudActor {
    /// Offline training: the SOH model on the aged history (frozen as v0),
    /// the first SOC model on nominal cycles (v1, shipped by [`start`]).
    ///
    /// [`start`]: CloudActor::start
    pub fn bootstrap(
        historical: &[LabeledCycle],
        nominal: &[LabeledCycle],
        rated_capacity: f64,
        cfg: &TwinConfig,
    ) -> Result<Self, TwinError> {
        cfg.validate()?;
        if nominal.is_empty() {
            return Err(TwinError::InsufficientData("no nominal cycles for the initial SOC model".into()));
        }
        let lo = historical.iter().map(|c| c.soh).fold(f64::INFINITY, f64::min);
        let hi = historical.iter().map(|c| c.soh).fold(f64::NEG_INFINITY, f64::max);
        if historical.len() < 2 || !(hi > lo) {
            return Err(TwinError::InsufficientData(
                "historical data must span more than one SOH level".into(),
            ));
        }
        let (x, y) = training_set(historical, &cfg.soh_features, Target::Soh);
        let soh = Regressor::fit(&cfg.soh_learner.clone().with_seed(cfg.seed), &x, &y, Scaling::None)?
            .with_features(&cfg.soh_features);
        let mut registry = ModelRegistry::new(soh);

        let (x, y) = training_set(nominal, &cfg.soc_features, Target::Soc);
        let band = nominal.iter().map(|c| c.soh).sum::<f64>() / nominal.len() as f64;
        let soc = Regressor::fit(&cfg.soc_learner.clone().with_seed(cfg.seed.wrapping_add(1)), &x, &y, Scaling::MinMax)?
            .with_features(&cfg.soc_features)
            .with_band(band);
        let (version, doc) = registry.register_soc(soc);

        let mut cloud = Self {
            cfg: cfg.clone(),
            registry,
            rated_capacity,
            window: VecDeque::new(),
            baseline: band,
            uploads_since_retrain: 0,
            ids: MsgIds::default(),
            step: 0,
            initial_update: None,
            rejected_updates: Vec::new(),
            log: Vec::new(),
        };
        cloud.record(
            EventKind::Bootstrap,
            json!({
                "soh_model_version": 0,
                "soh_model_sha256": cloud.registry.soh_fingerprint_at_bootstrap(),
                "n_historical_cycles": historical.len(),
                "n_nominal_cycles": nominal.len(),
                "soc_version": version,
                "soc_trained_at_soh": band,
            }),
        );
        cloud.initial_update = Some(cloud.ship(version, doc));
        Ok(cloud)
    }

    /// The initial SOC model update; the first message the edge receives.
    pub fn start(&mut self) -> Result<Envelope, TwinError> {
        self.initial_update
            .take()
            .ok_or_else(|| TwinError::Protocol("cloud already started".into()))
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn config(&self) -> &TwinConfig {
        &self.cfg
    }

    /// Message ids of model updates the edge refused.
    pub fn rejected_updates(&self) -> &[u64] {
        &self.rejected_updates
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    pub fn into_log(self) -> Vec<Event> {
        self.log
    }

    fn record(&mut self, kind: EventKind, details: serde_json::Value) {
        self.log.push(Event {
            event_time: self.step,
            actor: Actor::Cloud,
            kind,
            details,
        });
    }

    fn ship(&mut self, version: u64, doc: serde_json::Value) -> Envelope {
        let msg_id = self.ids.next_id();
        self.record(
            EventKind::ModelShipped,
            json!({"msg_id": msg_id, "version": version}),
        );
        Envelope::new(msg_id, Body::ModelUpdate(doc))
    }

    /// SOH estimate of one uploaded cycle: the reduced per-sample outputs of
    /// the frozen SOH model.
    pub fn estimate_soh(&self, cycle: &Cycle) -> Result<f64, TwinError> {
        let model = self.registry.soh_model();
        let preds = model.predict(&cycle_matrix(cycle, &model.features))?;
        if preds.is_empty() {
            return Err(TwinError::Protocol("measurement batch has no samples".into()));
        }
        Ok(self.cfg.soh_reducer.reduce(&preds))
    }

    /// Processes one uploaded cycle: estimate SOH, evaluate the triggers and
    /// retrain if one fires. Returns the estimate message and, when a
    /// trigger fired, the model update that follows it.
    pub fn cloud_step(&mut self, cycle: &Cycle) -> Result<(Envelope, Option<Envelope>), TwinError> {
        let labeled = LabeledCycle::label(cycle.clone(), self.rated_capacity)?;
        let estimate = self.estimate_soh(cycle)?;
        self.step += 1;
        self.window.push_back(labeled);
        while self.window.len() > self.cfg.retrain_window {
            self.window.pop_front();
        }
        self.uploads_since_retrain += 1;
        let baseline = self.baseline;
        self.record(
            EventKind::SohEstimate,
            json!({
                "cycle_index": cycle.cycle_index,
                "soh_pct": estimate,
                "baseline_pct": baseline,
            }),
        );

        let reason = trigger_decision(&self.cfg, estimate, baseline, self.uploads_since_retrain);
        let est = Envelope::new(
            self.ids.next_id(),
            Body::SohEstimate(SohEstimate {
                soh_pct: estimate,
                cycle_index: cycle.cycle_index,
                model_update_pending: reason.is_some(),
            }),
        );
        let update = match reason {
            None => None,
            Some(reason) => {
                self.record(
                    EventKind::TriggerFired,
                    json!({"reason": reason, "soh_pct": estimate, "baseline_pct": baseline}),
                );
                Some(self.retrain(estimate)?)
            }
        };
        Ok((est, update))
    }

    fn retrain(&mut self, estimate: f64) -> Result<Envelope, TwinError> {
        let version = self.registry.latest_soc_version() + 1;
        let cycles: Vec<u32> = self.window.iter().map(LabeledCycle::cycle_index).collect();
        self.record(
            EventKind::RetrainStarted,
            json!({"version": version, "cycles": cycles}),
        );
        let (x, y) = training_set(self.window.iter(), &self.cfg.soc_features, Target::Soc);
        let learner = self.cfg.soc_learner.clone().with_seed(self.cfg.seed.wrapping_add(version));
        let model = Regressor::fit(&learner, &x, &y, Scaling::MinMax)?
            .with_features(&self.cfg.soc_features)
            .with_band(estimate);
        let (registered, doc) = self.registry.register_soc(model);
        debug_assert_eq!(registered, version);
        self.record(
            EventKind::RetrainDone,
            json!({"version": version, "n_rows": x.n_rows(), "trained_at_soh": estimate}),
        );
        self.baseline = estimate;
        self.uploads_since_retrain = 0;
        Ok(self.ship(version, doc))
    }

    /// Handles one message from the edge and returns the replies in send
    /// order. `close` yields no replies.
    pub fn handle(&mut self, env: &Envelope) -> Result<Vec<Envelope>, TwinError> {
        match env.body()? {
            Body::MeasurementBatch(cycle) => {
                let (est, update) = self.cloud_step(&cycle)?;
                Ok(std::iter::once(est).chain(update).collect())
            }
            Body::Ack(ack) => {
                if !ack.accepted {
                    log::warn!("edge rejected update {}: {:?}", ack.msg_id, ack.reason);
                    self.rejected_updates.push(ack.msg_id);
                }
                Ok(Vec::new())
            }
            Body::Close => Ok(Vec::new()),
            other => Err(TwinError::Protocol(format!(
                "cloud cannot handle {:?} message {}",
                other.kind(),
                env.msg_id
            ))),
        }
    }
}
