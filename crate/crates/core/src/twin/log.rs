//! Run log: per-actor event records merged into one ordered stream.
//!
//! `event_time` is a logical step, not wall-clock time: 0 for bootstrap,
//! then the 1-based ordinal of the cycle being processed. Within one step
//! events are ordered by their position in the edge/cloud exchange, so the
//! merged log is the same whatever transport carried the messages.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Bootstrap,
    SocInference,
    Upload,
    SohEstimate,
    TriggerFired,
    RetrainStarted,
    RetrainDone,
    ModelShipped,
    ModelSwapped,
    UpdateRejected,
}

impl EventKind {
    fn phase(self) -> u8 {
        match self {
            EventKind::Bootstrap => 0,
            EventKind::SocInference => 1,
            EventKind::Upload => 2,
            EventKind::SohEstimate => 3,
            EventKind::TriggerFired => 4,
            EventKind::RetrainStarted => 5,
            EventKind::RetrainDone => 6,
            EventKind::ModelShipped => 7,
            EventKind::ModelSwapped | EventKind::UpdateRejected => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_time: u64,
    pub actor: Actor,
    pub kind: EventKind,
    pub details: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinRunLog {
    pub events: Vec<Event>,
}

impl TwinRunLog {
    /// Interleaves the two actors' logs by (step, phase). The sort is
    /// stable, so each actor's own order is preserved.
    pub fn merge(edge: Vec<Event>, cloud: Vec<Event>) -> Self {
        let mut events: Vec<Event> = edge.into_iter().chain(cloud).collect();
        events.sort_by_key(|e| (e.event_time, e.kind.phase()));
        Self { events }
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(io::Error::other)?);
        }
        Ok(Self { events })
    }

    /// Event kinds in order, the transport-independent skeleton of a run.
    pub fn kind_sequence(&self) -> Vec<(u64, Actor, EventKind)> {
        self.events
            .iter()
            .map(|e| (e.event_time, e.actor, e.kind))
            .collect()
    }

    /// Checks the structural guarantees of a run:
    ///
    /// * every `trigger_fired` is followed by exactly one `retrain_done` and
    ///   one `model_swapped` before the next `trigger_fired` (or log end);
    /// * installed SOC versions strictly increase;
    /// * every `soc_inference` names the version installed at that point;
    /// * shipped and swapped versions agree.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut open_trigger: Option<(usize, usize, usize)> = None;
        let close = |t: Option<(usize, usize, usize)>| match t {
            Some((at, done, swapped)) if done != 1 || swapped != 1 => Err(format!(
                "trigger at event {at} saw {done} retrain_done and {swapped} model_swapped"
            )),
            _ => Ok(()),
        };
        let mut installed: Option<u64> = None;
        let mut shipped: Vec<u64> = Vec::new();
        for (i, e) in self.events.iter().enumerate() {
            match e.kind {
                EventKind::TriggerFired => {
                    close(open_trigger)?;
                    open_trigger = Some((i, 0, 0));
                }
                EventKind::RetrainDone => {
                    if let Some(t) = open_trigger.as_mut() {
                        t.1 += 1;
                    }
                }
                EventKind::ModelShipped => shipped.push(version_of(e, "version")?),
                EventKind::ModelSwapped => {
                    let to = version_of(e, "to")?;
                    if installed.is_some_and(|v| to <= v) {
                        return Err(format!("event {i}: swap to v{to} over v{installed:?}"));
                    }
                    if !shipped.contains(&to) {
                        return Err(format!("event {i}: swapped to v{to}, which was never shipped"));
                    }
                    installed = Some(to);
                    if let Some(t) = open_trigger.as_mut() {
                        t.2 += 1;
                    }
                }
                EventKind::SocInference => {
                    let v = version_of(e, "model_version")?;
                    if installed != Some(v) {
                        return Err(format!(
                            "event {i}: inference with v{v} while v{installed:?} installed"
                        ));
                    }
                }
                _ => {}
            }
        }
        close(open_trigger)
    }
}

fn version_of(e: &Event, key: &str) -> Result<u64, String> {
    e.details
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| format!("{:?} event lacks `{key}`", e.kind))
}
