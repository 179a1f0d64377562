//! Full twin runs: bootstrap, then replay a battery's cycles through the
//! edge/cloud loop over a chosen transport.

use std::net::TcpListener;

use serde::{Deserialize, Serialize};

use super::cloud::CloudActor;
use super::config::TwinConfig;
use super::edge::EdgeActor;
use super::log::{EventKind, TwinRunLog};
use super::message::{Body, Envelope, MessageKind};
use super::transport::{channel_pair, Link, TcpLink, Transport};
use super::TwinError;
use crate::labeling::{LabeledCycle, LabeledDataset};
use crate::learners::EvalReport;

/// Outcome of one replayed cycle as seen from the edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub ordinal: u64,
    pub cycle_index: u32,
    pub true_soh_pct: f64,
    pub estimated_soh_pct: f64,
    pub model_version: u64,
    pub soc: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinSummary {
    pub vehicle_battery: String,
    pub historical_batteries: Vec<String>,
    pub n_cycles: usize,
    pub n_retrains: usize,
    pub final_soc_version: u64,
    pub mean_soc_mae_pct: f64,
    pub mean_soc_rmse_pct: f64,
    pub max_soc_err_pct: f64,
    pub soh_estimate_mae_pct: f64,
    pub rejected_updates: usize,
    pub soh_model_sha256_bootstrap: String,
    pub soh_model_sha256_end: String,
}

impl TwinSummary {
    pub fn soh_model_unchanged(&self) -> bool {
        self.soh_model_sha256_bootstrap == self.soh_model_sha256_end
    }
}

#[derive(Debug, Clone)]
pub struct TwinRun {
    pub log: TwinRunLog,
    pub cycles: Vec<CycleReport>,
    pub summary: TwinSummary,
}

/// Which batteries play which role, resolved from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Roles {
    pub vehicle: String,
    pub historical: Vec<String>,
}

pub fn resolve_roles(ds: &LabeledDataset, cfg: &TwinConfig) -> Result<Roles, TwinError> {
    let known = |id: &String| {
        if ds.batteries.contains_key(id) {
            Ok(())
        } else {
            Err(TwinError::UnknownBattery(id.clone()))
        }
    };
    let vehicle = match &cfg.vehicle_battery {
        Some(v) => {
            known(v)?;
            v.clone()
        }
        None => ds
            .batteries
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| TwinError::InsufficientData("dataset has no batteries".into()))?,
    };
    let historical = match &cfg.historical_batteries {
        Some(h) => {
            h.iter().try_for_each(known)?;
            h.clone()
        }
        None => {
            let others: Vec<String> = ds.batteries.keys().filter(|k| **k != vehicle).cloned().collect();
            if others.is_empty() {
                vec![vehicle.clone()]
            } else {
                others
            }
        }
    };
    Ok(Roles { vehicle, historical })
}

/// Cloud side of a run: ship the initial model, then answer until `close`.
pub fn serve_cloud(cloud: &mut CloudActor, link: &mut dyn Link) -> Result<(), TwinError> {
    link.send(&cloud.start()?)?;
    loop {
        let msg = link.recv()?;
        if msg.kind == MessageKind::Close {
            return Ok(());
        }
        for reply in cloud.handle(&msg)? {
            link.send(&reply)?;
        }
    }
}

fn expect_kind(msg: Envelope, kind: MessageKind) -> Result<Envelope, TwinError> {
    if msg.kind == kind {
        Ok(msg)
    } else {
        Err(TwinError::Protocol(format!(
            "expected {kind:?}, got {:?} (msg {})",
            msg.kind, msg.msg_id
        )))
    }
}

/// Edge side of a run: install the initial model, then for every cycle
/// infer, upload, and apply whatever the cloud sends back.
pub fn drive_edge(
    edge: &mut EdgeActor,
    mut link: impl Link,
    cycles: &[LabeledCycle],
) -> Result<Vec<CycleReport>, TwinError> {
    let first = expect_kind(link.recv()?, MessageKind::ModelUpdate)?;
    let ack = edge.apply_model_update(&first);
    link.send(&ack)?;
    let mut reports = Vec::with_capacity(cycles.len());
    for (k, lc) in cycles.iter().enumerate() {
        let (pred, batch) = edge.edge_step(&lc.cycle)?;
        link.send(&batch)?;
        let est_msg = expect_kind(link.recv()?, MessageKind::SohEstimate)?;
        let Body::SohEstimate(est) = est_msg.body()? else {
            unreachable!("kind checked")
        };
        edge.handle(&est_msg)?;
        if est.model_update_pending {
            let update = expect_kind(link.recv()?, MessageKind::ModelUpdate)?;
            let ack = edge.apply_model_update(&update);
            link.send(&ack)?;
        }
        reports.push(CycleReport {
            ordinal: k as u64 + 1,
            cycle_index: lc.cycle_index(),
            true_soh_pct: lc.soh,
            estimated_soh_pct: est.soh_pct,
            model_version: pred.model_version,
            soc: EvalReport::from_errors(&pred.soc, &lc.soc_per_sample)?,
        });
    }
    link.send(&Envelope::new(0, Body::Close))?;
    Ok(reports)
}

/// Bootstraps both actors and replays the vehicle battery's cycles in order.
pub fn run_twin(ds: &LabeledDataset, cfg: &TwinConfig, transport: Transport) -> Result<TwinRun, TwinError> {
    cfg.validate()?;
    let roles = resolve_roles(ds, cfg)?;
    let historical: Vec<LabeledCycle> = roles
        .historical
        .iter()
        .flat_map(|id| ds.batteries[id].iter().cloned())
        .collect();
    let nominal: Vec<LabeledCycle> = roles
        .historical
        .iter()
        .flat_map(|id| ds.batteries[id].iter().take(cfg.nominal_cycles).cloned())
        .collect();
    let vehicle = &ds.batteries[&roles.vehicle];
    if vehicle.is_empty() {
        return Err(TwinError::InsufficientData(format!("battery {} has no cycles", roles.vehicle)));
    }

    let mut cloud = CloudActor::bootstrap(&historical, &nominal, ds.rated_capacity, cfg)?;
    let mut edge = EdgeActor::new();

    let (cloud_result, edge_result) = match transport {
        Transport::Inproc => {
            let (mut cloud_end, edge_end) = channel_pair();
            let cloud_ref = &mut cloud;
            std::thread::scope(|s| {
                // The cloud's link end moves into its thread so that a cloud
                // failure disconnects the edge instead of stalling it.
                let c = s.spawn(move || serve_cloud(cloud_ref, &mut cloud_end));
                let e = drive_edge(&mut edge, edge_end, vehicle);
                (c.join().expect("cloud thread panicked"), e)
            })
        }
        Transport::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let cloud_ref = &mut cloud;
            let listener = &listener;
            std::thread::scope(|s| {
                let c = s.spawn(move || -> Result<(), TwinError> {
                    let (stream, _) = listener.accept()?;
                    serve_cloud(cloud_ref, &mut TcpLink::new(stream)?)
                });
                let e = TcpLink::connect(addr).and_then(|link| drive_edge(&mut edge, link, vehicle));
                (c.join().expect("cloud thread panicked"), e)
            })
        }
    };
    // A failure on one side reaches the other as a disconnect; report the
    // side that actually failed.
    let cycles = match (edge_result, cloud_result) {
        (Ok(c), Ok(())) => c,
        (Err(TwinError::Disconnected), Err(e)) | (Err(e), _) | (Ok(_), Err(e)) => return Err(e),
    };

    let n = cycles.len() as f64;
    let summary = TwinSummary {
        vehicle_battery: roles.vehicle,
        historical_batteries: roles.historical,
        n_cycles: cycles.len(),
        n_retrains: 0,
        final_soc_version: edge.installed_version().unwrap_or(0),
        mean_soc_mae_pct: cycles.iter().map(|c| c.soc.mae_pct).sum::<f64>() / n,
        mean_soc_rmse_pct: cycles.iter().map(|c| c.soc.rmse_pct).sum::<f64>() / n,
        max_soc_err_pct: cycles.iter().map(|c| c.soc.max_err_pct).fold(0.0, f64::max),
        soh_estimate_mae_pct: cycles
            .iter()
            .map(|c| (c.estimated_soh_pct - c.true_soh_pct).abs())
            .sum::<f64>()
            / n,
        rejected_updates: cloud.rejected_updates().len(),
        soh_model_sha256_bootstrap: cloud.registry().soh_fingerprint_at_bootstrap().to_string(),
        soh_model_sha256_end: cloud.registry().soh_fingerprint(),
    };
    let log = TwinRunLog::merge(edge.into_log(), cloud.into_log());
    let summary = TwinSummary {
        n_retrains: log.count(EventKind::RetrainDone),
        ..summary
    };
    Ok(TwinRun { log, cycles, summary })
}

/// Convenience for callers that want both actors ready without a transport:
/// the edge already serves SOC inference with the initial model.
pub fn bootstrap(
    historical: &[LabeledCycle],
    nominal: &[LabeledCycle],
    rated_capacity: f64,
    cfg: &TwinConfig,
) -> Result<(CloudActor, EdgeActor), TwinError> {
    let mut cloud = CloudActor::bootstrap(historical, nominal, rated_capacity, cfg)?;
    let mut edge = EdgeActor::new();
    let ack = edge.apply_model_update(&cloud.start()?);
    cloud.handle(&ack)?;
    if edge.installed_version().is_none() {
        return Err(TwinError::Protocol("edge refused the initial model".into()));
    }
    Ok((cloud, edge))
}
