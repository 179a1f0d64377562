//! SOC/SOH labels for reference discharges.
//!
//! Each cycle's available capacity is the trapezoidal integral of its
//! discharge current. SOH is that capacity relative to the rated capacity,
//! and per-sample SOC is the residual charge relative to the cycle's own
//! available capacity (Coulomb counting). Cycles whose SOH rises above the
//! last retained value are measurement glitches and are dropped.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{io_err, read_rows, Cycle, Dataset, DatasetBuilder, IngestError, ParseOptions, Sample};

/// Negative current of smaller magnitude than this is sensor noise and is
/// integrated as zero.
pub const CURRENT_NOISE_FLOOR_A: f64 = 0.01;

pub const LABELED_HEADER: [&str; 8] = [
    "battery_id",
    "cycle_index",
    "relative_time_s",
    "voltage_v",
    "current_a",
    "temperature_c",
    "soc_pct",
    "soh_pct",
];

pub const REASON_SOH_MONOTONICITY: &str = "soh_monotonicity";

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("cycle {battery_id}/{cycle_index} has no samples")]
    EmptyCycle { battery_id: String, cycle_index: u32 },
    #[error("available capacity must be positive, got {0} Ah")]
    NonPositiveCapacity(f64),
    #[error("rated capacity must be positive, got {0} Ah")]
    NonPositiveRated(f64),
    #[error(
        "cycle {battery_id}/{cycle_index} sample {sample} draws {current} A of charging current"
    )]
    NotADischarge {
        battery_id: String,
        cycle_index: u32,
        sample: usize,
        current: f64,
    },
    #[error("battery {0} has no cycles")]
    EmptyBattery(String),
    #[error("labeled cycle {battery_id}/{cycle_index}: {reason}")]
    Inconsistent {
        battery_id: String,
        cycle_index: u32,
        reason: String,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

fn effective_current(cycle: &Cycle, k: usize) -> Result<f64, LabelError> {
    let i = cycle.samples[k].current;
    if i >= 0.0 {
        Ok(i)
    } else if i > -CURRENT_NOISE_FLOOR_A {
        Ok(0.0)
    } else {
        Err(LabelError::NotADischarge {
            battery_id: cycle.battery_id.clone(),
            cycle_index: cycle.cycle_index,
            sample: k,
            current: i,
        })
    }
}

/// Cumulative discharged charge in Ah at every sample, trapezoidal over the
/// (possibly non-uniform) time grid. The first entry is 0.
fn cumulative_charge(cycle: &Cycle) -> Result<Vec<f64>, LabelError> {
    if cycle.samples.is_empty() {
        return Err(LabelError::EmptyCycle {
            battery_id: cycle.battery_id.clone(),
            cycle_index: cycle.cycle_index,
        });
    }
    let mut out = Vec::with_capacity(cycle.samples.len());
    let mut acc = 0.0;
    let mut prev_i = effective_current(cycle, 0)?;
    out.push(0.0);
    for k in 1..cycle.samples.len() {
        let i = effective_current(cycle, k)?;
        let dt = cycle.samples[k].relative_time - cycle.samples[k - 1].relative_time;
        acc += 0.5 * (prev_i + i) * dt;
        out.push(acc / 3600.0);
        prev_i = i;
    }
    Ok(out)
}

/// Per-sample SOC in percent, clamped to `[0, 100]`.
pub fn coulomb_count(cycle: &Cycle, available_capacity: f64) -> Result<Vec<f64>, LabelError> {
    if !(available_capacity > 0.0) {
        return Err(LabelError::NonPositiveCapacity(available_capacity));
    }
    Ok(cumulative_charge(cycle)?
        .into_iter()
        .map(|q| (100.0 * (1.0 - q / available_capacity)).clamp(0.0, 100.0))
        .collect())
}

/// Total charge delivered over the cycle, in Ah.
pub fn cycle_capacity(cycle: &Cycle) -> Result<f64, LabelError> {
    Ok(*cumulative_charge(cycle)?.last().expect("non-empty"))
}

/// SOH in percent. Not clamped: values above 100 survive for the cleaning
/// pass to judge.
pub fn compute_soh(available_capacity: f64, rated_capacity: f64) -> Result<f64, LabelError> {
    if !(available_capacity > 0.0) {
        return Err(LabelError::NonPositiveCapacity(available_capacity));
    }
    if !(rated_capacity > 0.0) {
        return Err(LabelError::NonPositiveRated(rated_capacity));
    }
    Ok(100.0 * available_capacity / rated_capacity)
}

/// Greedy forward pass over a chronological SOH sequence. A cycle is kept
/// iff its SOH does not exceed the last kept SOH by more than `epsilon`.
/// Returns `(retained, removed)` positions into `soh`.
pub fn clean_monotonic(soh: &[f64], epsilon: f64) -> (Vec<usize>, Vec<usize>) {
    let mut retained = Vec::with_capacity(soh.len());
    let mut removed = Vec::new();
    let mut last: Option<f64> = None;
    for (k, &s) in soh.iter().enumerate() {
        match last {
            Some(l) if s > l + epsilon => removed.push(k),
            _ => {
                retained.push(k);
                last = Some(s);
            }
        }
    }
    (retained, removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCycle {
    pub cycle: Cycle,
    pub soc_per_sample: Vec<f64>,
    pub soh: f64,
    pub available_capacity: f64,
}

impl LabeledCycle {
    pub fn label(cycle: Cycle, rated_capacity: f64) -> Result<Self, LabelError> {
        let available_capacity = cycle_capacity(&cycle)?;
        let soh = compute_soh(available_capacity, rated_capacity)?;
        let soc_per_sample = coulomb_count(&cycle, available_capacity)?;
        Ok(Self {
            cycle,
            soc_per_sample,
            soh,
            available_capacity,
        })
    }

    pub fn cycle_index(&self) -> u32 {
        self.cycle.cycle_index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedCycle {
    pub battery_id: String,
    pub cycle_index: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub batteries: BTreeMap<String, Vec<LabeledCycle>>,
    pub rated_capacity: f64,
    pub removed_cycles: Vec<RemovedCycle>,
}

impl LabeledDataset {
    pub fn n_cycles(&self) -> usize {
        self.batteries.values().map(Vec::len).sum()
    }

    pub fn soh_profile(&self, battery_id: &str) -> Vec<(u32, f64)> {
        self.batteries
            .get(battery_id)
            .map(|cs| cs.iter().map(|c| (c.cycle_index(), c.soh)).collect())
            .unwrap_or_default()
    }
}

fn label_battery(
    id: &str,
    cycles: &[Cycle],
    rated: f64,
    epsilon: f64,
) -> Result<(Vec<LabeledCycle>, Vec<RemovedCycle>), LabelError> {
    if cycles.is_empty() {
        return Err(LabelError::EmptyBattery(id.to_string()));
    }
    let capacities = cycles
        .iter()
        .map(cycle_capacity)
        .collect::<Result<Vec<_>, _>>()?;
    let soh = capacities
        .iter()
        .map(|&q| compute_soh(q, rated))
        .collect::<Result<Vec<_>, _>>()?;
    let (retained, removed) = clean_monotonic(&soh, epsilon);
    let labeled = retained
        .into_iter()
        .map(|k| {
            Ok(LabeledCycle {
                cycle: cycles[k].clone(),
                soc_per_sample: coulomb_count(&cycles[k], capacities[k])?,
                soh: soh[k],
                available_capacity: capacities[k],
            })
        })
        .collect::<Result<Vec<_>, LabelError>>()?;
    let removed = removed
        .into_iter()
        .map(|k| RemovedCycle {
            battery_id: id.to_string(),
            cycle_index: cycles[k].cycle_index,
            reason: REASON_SOH_MONOTONICITY.to_string(),
        })
        .collect();
    Ok((labeled, removed))
}

/// Capacity, SOH, cleaning and SOC labels for every battery. Batteries are
/// labeled in parallel; output order follows battery id.
pub fn build_labeled_dataset(d: &Dataset, epsilon: f64) -> Result<LabeledDataset, LabelError> {
    if !(d.rated_capacity > 0.0) {
        return Err(LabelError::NonPositiveRated(d.rated_capacity));
    }
    let per_battery = d
        .batteries
        .par_iter()
        .map(|(id, cycles)| label_battery(id, cycles, d.rated_capacity, epsilon).map(|r| (id, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = LabeledDataset {
        batteries: BTreeMap::new(),
        rated_capacity: d.rated_capacity,
        removed_cycles: Vec::new(),
    };
    for (id, (labeled, removed)) in per_battery {
        out.batteries.insert(id.clone(), labeled);
        out.removed_cycles.extend(removed);
    }
    Ok(out)
}

pub fn write_labeled_dataset(d: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_labeled_to(d, file).map_err(io_err(path))?;
    Ok(())
}

pub fn write_labeled_to<W: Write>(d: &LabeledDataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABELED_HEADER)?;
    for lc in d.batteries.values().flatten() {
        let c = &lc.cycle;
        for (s, soc) in c.samples.iter().zip(&lc.soc_per_sample) {
            w.serialize((
                &c.battery_id,
                c.cycle_index,
                s.relative_time,
                s.voltage,
                s.current,
                s.temperature,
                soc,
                lc.soh,
            ))?;
        }
    }
    w.flush()
}

#[derive(Debug, Deserialize)]
struct LabeledRow {
    battery_id: String,
    cycle_index: u32,
    relative_time_s: f64,
    voltage_v: f64,
    current_a: f64,
    temperature_c: f64,
    soc_pct: f64,
    soh_pct: f64,
}

/// Reads a labeled CSV. The available capacity of each cycle is recovered
/// from its SOH column and `rated_capacity`.
pub fn read_labeled_dataset(
    path: impl AsRef<Path>,
    rated_capacity: f64,
) -> Result<LabeledDataset, LabelError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    parse_labeled_str(&text, &path.display().to_string(), rated_capacity)
}

pub fn parse_labeled_str(
    text: &str,
    origin: &str,
    rated_capacity: f64,
) -> Result<LabeledDataset, LabelError> {
    let rows = read_rows::<LabeledRow>(text, origin, &LABELED_HEADER)?;
    let opts = ParseOptions {
        rated_capacity,
        ..ParseOptions::default()
    };
    let mut builder = DatasetBuilder::new(origin, &opts)?;
    let mut labels: BTreeMap<(String, u32), (Vec<f64>, f64)> = BTreeMap::new();
    for (line, row) in rows {
        let key = (row.battery_id.clone(), row.cycle_index);
        builder.push(
            line,
            row.battery_id,
            row.cycle_index,
            Sample {
                relative_time: row.relative_time_s,
                voltage: row.voltage_v,
                current: row.current_a,
                temperature: row.temperature_c,
            },
        )?;
        let entry = labels
            .entry(key.clone())
            .or_insert_with(|| (Vec::new(), row.soh_pct));
        if entry.1 != row.soh_pct {
            return Err(LabelError::Inconsistent {
                battery_id: key.0,
                cycle_index: key.1,
                reason: format!("line {line}: soh changes within the cycle"),
            });
        }
        entry.0.push(row.soc_pct);
    }
    let dataset = builder.finish();
    let mut out = LabeledDataset {
        batteries: BTreeMap::new(),
        rated_capacity,
        removed_cycles: Vec::new(),
    };
    for (id, cycles) in dataset.batteries {
        let labeled = cycles
            .into_iter()
            .map(|cycle| {
                let (soc, soh) = labels
                    .remove(&(id.clone(), cycle.cycle_index))
                    .expect("labels recorded for every cycle");
                LabeledCycle {
                    available_capacity: soh * rated_capacity / 100.0,
                    soh,
                    soc_per_sample: soc,
                    cycle,
                }
            })
            .collect();
        out.batteries.insert(id, labeled);
    }
    Ok(out)
}

pub fn write_removed_log(removed: &[RemovedCycle], path: impl AsRef<Path>) -> Result<(), LabelError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(removed).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))?;
    Ok(())
}

pub fn read_removed_log(path: impl AsRef<Path>) -> Result<Vec<RemovedCycle>, LabelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| {
        LabelError::Ingest(IngestError::MalformedRow {
            path: path.display().to_string(),
            line: e.line() as u64,
            reason: e.to_string(),
        })
    })
}
