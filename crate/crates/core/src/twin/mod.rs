//! The digital twin: an edge actor running SOC inference on live cycles and
//! a cloud actor that estimates SOH and retrains the SOC model as the
//! battery ages.
//!
//! Per cycle the exchange is:
//!
//! 1. edge predicts SOC with its installed model and uploads the raw cycle;
//! 2. cloud estimates SOH with the frozen SOH model and replies;
//! 3. if a trigger fired, cloud retrains on recent uploads and ships the new
//!    model right after the estimate;
//! 4. edge validates and hot-swaps it, then acknowledges.

mod cloud;
mod config;
mod edge;
mod log;
mod message;
mod registry;
mod run;
mod staleness;
mod transport;

pub use cloud::{trigger_decision, CloudActor, TriggerReason};
pub use config::{SohReducer, TwinConfig};
pub use edge::{EdgeActor, InstalledModel, ModelSlot, SocPrediction};
pub use log::{Actor, Event, EventKind, TwinRunLog};
pub use message::{Ack, Body, Envelope, MessageKind, MsgIds, SohEstimate};
pub use registry::ModelRegistry;
pub use run::{
    bootstrap, drive_edge, resolve_roles, run_twin, serve_cloud, CycleReport, Roles, TwinRun,
    TwinSummary,
};
pub use staleness::{
    evaluate_staleness, SocCurves, StalenessOptions, StalenessRow, StalenessTable,
};
pub use transport::{channel_pair, ChannelLink, Link, TcpLink, Transport};

use crate::labeling::LabelError;
use crate::learners::LearnError;

#[derive(Debug, thiserror::Error)]
pub enum TwinError {
    #[error("invalid twin configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("unknown battery {0}")]
    UnknownBattery(String),
    #[error("no cycle near SOH band {band}% (nearest: {nearest:?})")]
    NoCycleNearBand { band: f64, nearest: Option<f64> },
    #[error("edge has no installed SOC model")]
    NoModel,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
