//! Wire messages between the edge and cloud actors.
//!
//! On the wire every message is `{"msg_id": n, "kind": "...", "payload": {...}}`,
//! one JSON object per line. A `model_update` payload is the model artifact
//! document itself, embedded verbatim.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TwinError;
use crate::ingest::Cycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    MeasurementBatch,
    SohEstimate,
    ModelUpdate,
    Ack,
    /// Sent by the edge once its trace is exhausted.
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub msg_id: u64,
    pub kind: MessageKind,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SohEstimate {
    pub soh_pct: f64,
    pub cycle_index: u32,
    /// A `model_update` follows this estimate.
    pub model_update_pending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub msg_id: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Typed view of an envelope's payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    MeasurementBatch(Cycle),
    SohEstimate(SohEstimate),
    /// Artifact document, not yet validated.
    ModelUpdate(Value),
    Ack(Ack),
    Close,
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::MeasurementBatch(_) => MessageKind::MeasurementBatch,
            Body::SohEstimate(_) => MessageKind::SohEstimate,
            Body::ModelUpdate(_) => MessageKind::ModelUpdate,
            Body::Ack(_) => MessageKind::Ack,
            Body::Close => MessageKind::Close,
        }
    }
}

impl Envelope {
    pub fn new(msg_id: u64, body: Body) -> Self {
        let kind = body.kind();
        let payload = match body {
            Body::MeasurementBatch(c) => serde_json::to_value(c),
            Body::SohEstimate(e) => serde_json::to_value(e),
            Body::ModelUpdate(doc) => Ok(doc),
            Body::Ack(a) => serde_json::to_value(a),
            Body::Close => Ok(Value::Object(Default::default())),
        }
        .expect("message payloads serialize");
        Self {
            msg_id,
            kind,
            payload,
        }
    }

    /// Decodes the payload according to `kind`. A `model_update` payload is
    /// passed through untouched; its validation belongs to the receiver.
    pub fn body(&self) -> Result<Body, TwinError> {
        let p = self.payload.clone();
        let err = |e: serde_json::Error| {
            TwinError::Protocol(format!("message {} ({:?}): {e}", self.msg_id, self.kind))
        };
        Ok(match self.kind {
            MessageKind::MeasurementBatch => Body::MeasurementBatch(serde_json::from_value(p).map_err(err)?),
            MessageKind::SohEstimate => Body::SohEstimate(serde_json::from_value(p).map_err(err)?),
            MessageKind::ModelUpdate => Body::ModelUpdate(p),
            MessageKind::Ack => Body::Ack(serde_json::from_value(p).map_err(err)?),
            MessageKind::Close => Body::Close,
        })
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, TwinError> {
        serde_json::from_str(line).map_err(|e| TwinError::Protocol(format!("bad message line: {e}")))
    }
}

/// Monotone message id source for one sender.
#[derive(Debug, Clone, Default)]
pub struct MsgIds {
    last: u64,
}

impl MsgIds {
    pub fn next_id(&mut self) -> u64 {
        self.last += 1;
        self.last
    }
}
