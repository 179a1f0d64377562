//! Edge actor: serves SOC inference from the installed model, forwards raw
//! cycles to the cloud, and hot-swaps models shipped back.

use std::sync::{Arc, RwLock};

use serde_json::json;

use super::log::{Actor, Event, EventKind};
use super::message::{Ack, Body, Envelope, MessageKind, MsgIds, SohEstimate};
use super::TwinError;
use crate::features::cycle_matrix;
use crate::ingest::Cycle;
use crate::learners::Regressor;

#[derive(Debug)]
pub struct InstalledModel {
    pub version: u64,
    pub model: Regressor,
}

/// The edge's current SOC model. Readers take a snapshot of the whole
/// installed model, so a swap can never be observed half-applied.
#[derive(Debug, Default)]
pub struct ModelSlot {
    current: RwLock<Option<Arc<InstalledModel>>>,
}

impl ModelSlot {
    pub fn snapshot(&self) -> Option<Arc<InstalledModel>> {
        self.current.read().expect("slot lock poisoned").clone()
    }

    pub fn version(&self) -> Option<u64> {
        self.snapshot().map(|m| m.version)
    }

    /// Installs `model` iff `version` is newer than the installed one.
    /// Returns the previous version.
    pub fn install(&self, version: u64, model: Regressor) -> Result<Option<u64>, String> {
        let mut cur = self.current.write().expect("slot lock poisoned");
        let prev = cur.as_ref().map(|m| m.version);
        if let Some(p) = prev {
            if version <= p {
                return Err(format!("stale version {version}, v{p} is installed"));
            }
        }
        *cur = Some(Arc::new(InstalledModel { version, model }));
        Ok(prev)
    }

    /// Predicts a whole cycle with one model and reports which version did it.
    pub fn predict_cycle(&self, cycle: &Cycle) -> Result<(u64, Vec<f64>), TwinError> {
        let m = self.snapshot().ok_or(TwinError::NoModel)?;
        let x = cycle_matrix(cycle, &m.model.features);
        Ok((m.version, m.model.predict(&x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocPrediction {
    pub model_version: u64,
    pub soc: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct EdgeActor {
    slot: Arc<ModelSlot>,
    ids: MsgIds,
    step: u64,
    last_estimate: Option<SohEstimate>,
    log: Vec<Event>,
}

impl EdgeActor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Shared handle to the model slot, e.g. for concurrent readers.
    pub fn slot(&self) -> Arc<ModelSlot> {
        Arc::clone(&self.slot)
    }

    pub fn installed_version(&self) -> Option<u64> {
        self.slot.version()
    }

    pub fn last_estimate(&self) -> Option<&SohEstimate> {
        self.last_estimate.as_ref()
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
            actor: Actor::Edge,
            kind,
            details,
        });
    }

    /// Runs SOC inference on a fresh cycle and packages it for upload.
    pub fn edge_step(&mut self, cycle: &Cycle) -> Result<(SocPrediction, Envelope), TwinError> {
        let (model_version, soc) = self.slot.predict_cycle(cycle)?;
        self.step += 1;
        self.record(
            EventKind::SocInference,
            json!({
                "cycle_index": cycle.cycle_index,
                "model_version": model_version,
                "n_samples": soc.len(),
            }),
        );
        let msg_id = self.ids.next_id();
        self.record(
            EventKind::Upload,
            json!({"msg_id": msg_id, "cycle_index": cycle.cycle_index}),
        );
        let batch = Envelope::new(msg_id, Body::MeasurementBatch(cycle.clone()));
        Ok((SocPrediction { model_version, soc }, batch))
    }

    /// Validates and installs a shipped model. Always answers with an Ack;
    /// on rejection the installed model keeps serving.
    pub fn apply_model_update(&mut self, update: &Envelope) -> Envelope {
        let claimed = update.payload.get("version").and_then(|v| v.as_u64());
        let outcome = if update.kind != MessageKind::ModelUpdate {
            Err(format!("expected a model update, got {:?}", update.kind))
        } else {
            Regressor::from_document(&update.payload)
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    if m.features.is_empty() {
                        return Err("artifact names no input features".to_string());
                    }
                    let v = m.version;
                    self.slot.install(v, m).map(|prev| (prev, v))
                })
        };
        let ack = match outcome {
            Ok((from, to)) => {
                self.record(
                    EventKind::ModelSwapped,
                    json!({"msg_id": update.msg_id, "from": from, "to": to}),
                );
                Ack {
                    msg_id: update.msg_id,
                    accepted: true,
                    reason: None,
                }
            }
            Err(reason) => {
                log::warn!("rejected model update {}: {reason}", update.msg_id);
                self.record(
                    EventKind::UpdateRejected,
                    json!({"msg_id": update.msg_id, "version": claimed, "reason": reason}),
                );
                Ack {
                    msg_id: update.msg_id,
                    accepted: false,
                    reason: Some(reason),
                }
            }
        };
        Envelope::new(self.ids.next_id(), Body::Ack(ack))
    }

    /// Handles one message from the cloud, returning the reply if any.
    pub fn handle(&mut self, env: &Envelope) -> Result<Option<Envelope>, TwinError> {
        match env.kind {
            MessageKind::ModelUpdate => Ok(Some(self.apply_model_update(env))),
            MessageKind::SohEstimate => match env.body()? {
                Body::SohEstimate(e) => {
                    self.last_estimate = Some(e);
                    Ok(None)
                }
                _ => unreachable!("kind checked"),
            },
            other => Err(TwinError::Protocol(format!(
                "edge cannot handle {other:?} message {}",
                env.msg_id
            ))),
        }
    }
}
