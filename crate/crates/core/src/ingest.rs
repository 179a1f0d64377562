//! Canonical trace model and CSV interchange.
//!
//! Trace files are flat CSV with one row per sample:
//!
//! ```text
//! battery_id,cycle_index,relative_time_s,voltage_v,current_a,temperature_c
//! ```
//!
//! Cycle boundaries are inferred from `(battery_id, cycle_index)`. Rows of
//! different cycles may interleave freely; within one cycle, samples must
//! appear with strictly increasing `relative_time_s`. Discharge current is
//! positive.
//!
//! Labeled datasets use the same layout with two extra columns,
//! `soc_pct,soh_pct` (see [`crate::labeling`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Nominal capacity of the reference cells, in ampere-hours.
pub const DEFAULT_RATED_CAPACITY_AH: f64 = 2.1;
/// Rated (full-charge) voltage of the reference cells.
pub const DEFAULT_RATED_VOLTAGE_V: f64 = 4.2;

pub const TRACE_HEADER: [&str; 6] = [
    "battery_id",
    "cycle_index",
    "relative_time_s",
    "voltage_v",
    "current_a",
    "temperature_c",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is empty")]
    Empty { path: String },
    #[error("{path}: bad header, expected `{expected}`, found `{found}`")]
    Header {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: String,
        line: u64,
        reason: String,
    },
    #[error(
        "{path}:{line}: non-monotonic time in battery {battery_id} cycle {cycle_index} \
         ({previous} s followed by {current} s)"
    )]
    NonMonotonicTime {
        path: String,
        line: u64,
        battery_id: String,
        cycle_index: u32,
        previous: f64,
        current: f64,
    },
    #[error("rated capacity must be positive, got {0}")]
    RatedCapacity(f64),
}

/// One measurement inside a discharge cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds since cycle start.
    pub relative_time: f64,
    pub voltage: f64,
    /// Amperes, positive while discharging.
    pub current: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleType {
    #[default]
    ReferenceDischarge,
}

/// One reference discharge of one battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub battery_id: String,
    pub cycle_index: u32,
    #[serde(default)]
    pub cycle_type: CycleType,
    pub samples: Vec<Sample>,
}

impl Cycle {
    pub fn new(battery_id: impl Into<String>, cycle_index: u32, samples: Vec<Sample>) -> Self {
        Self {
            battery_id: battery_id.into(),
            cycle_index,
            cycle_type: CycleType::ReferenceDischarge,
            samples,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.relative_time - a.relative_time,
            _ => 0.0,
        }
    }
}

/// Traces of several batteries, each an ordered list of cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub batteries: BTreeMap<String, Vec<Cycle>>,
    pub rated_capacity: f64,
    pub rated_voltage: f64,
}

impl Dataset {
    pub fn new(rated_capacity: f64) -> Self {
        Self {
            batteries: BTreeMap::new(),
            rated_capacity,
            rated_voltage: DEFAULT_RATED_VOLTAGE_V,
        }
    }

    pub fn n_cycles(&self) -> usize {
        self.batteries.values().map(Vec::len).sum()
    }

    pub fn n_samples(&self) -> usize {
        self.batteries
            .values()
            .flat_map(|c| c.iter())
            .map(|c| c.samples.len())
            .sum()
    }

    /// Keep only the listed batteries. Unknown ids are ignored.
    pub fn retain_batteries(&mut self, ids: &[String]) {
        self.batteries.retain(|id, _| ids.contains(id));
    }

    /// Insert a cycle, keeping the battery's cycles ordered by index.
    pub fn push_cycle(&mut self, cycle: Cycle) {
        let cycles = self.batteries.entry(cycle.battery_id.clone()).or_default();
        let pos = cycles.partition_point(|c| c.cycle_index <= cycle.cycle_index);
        cycles.insert(pos, cycle);
    }
}

/// Physical plausibility bounds applied at parse time and by
/// [`validate_dataset`]. Both intervals are open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBounds {
    pub voltage: (f64, f64),
    pub temperature: (f64, f64),
}

impl Default for SampleBounds {
    fn default() -> Self {
        Self {
            voltage: (0.0, 6.0),
            temperature: (-30.0, 80.0),
        }
    }
}

impl SampleBounds {
    fn check(&self, s: &Sample) -> Option<String> {
        let fields = [
            ("relative_time", s.relative_time),
            ("voltage", s.voltage),
            ("current", s.current),
            ("temperature", s.temperature),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Some(format!("{name} is not finite"));
        }
        if s.relative_time < 0.0 {
            return Some(format!("relative_time {} is negative", s.relative_time));
        }
        let (vlo, vhi) = self.voltage;
        if !(s.voltage > vlo && s.voltage < vhi) {
            return Some(format!(
                "voltage {} V outside ({vlo}, {vhi})",
                s.voltage
            ));
        }
        let (tlo, thi) = self.temperature;
        if !(s.temperature > tlo && s.temperature < thi) {
            return Some(format!(
                "temperature {} C outside ({tlo}, {thi})",
                s.temperature
            ));
        }
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub rated_capacity: f64,
    pub bounds: SampleBounds,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            rated_capacity: DEFAULT_RATED_CAPACITY_AH,
            bounds: SampleBounds::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    battery_id: String,
    cycle_index: u32,
    relative_time_s: f64,
    voltage_v: f64,
    current_a: f64,
    temperature_c: f64,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parse a trace file with default bounds.
pub fn parse_traces(path: impl AsRef<Path>, rated_capacity: f64) -> Result<Dataset, IngestError> {
    let opts = ParseOptions {
        rated_capacity,
        ..ParseOptions::default()
    };
    parse_traces_with(path, &opts)
}

pub fn parse_traces_with(
    path: impl AsRef<Path>,
    opts: &ParseOptions,
) -> Result<Dataset, IngestError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    parse_traces_str(&text, &path.display().to_string(), opts)
}

/// Parse trace CSV text. `origin` names the source in error messages.
pub fn parse_traces_str(
    text: &str,
    origin: &str,
    opts: &ParseOptions,
) -> Result<Dataset, IngestError> {
    let rows = read_rows::<TraceRow>(text, origin, &TRACE_HEADER)?;
    let mut builder = DatasetBuilder::new(origin, opts)?;
    for (line, row) in rows {
        let sample = Sample {
            relative_time: row.relative_time_s,
            voltage: row.voltage_v,
            current: row.current_a,
            temperature: row.temperature_c,
        };
        builder.push(line, row.battery_id, row.cycle_index, sample)?;
    }
    Ok(builder.finish())
}

/// Reads typed rows, checking that the header starts with `expected`.
/// Returns `(line_number, row)` pairs, 1-based with the header on line 1.
pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(
    text: &str,
    origin: &str,
    expected: &[&str],
) -> Result<Vec<(u64, T)>, IngestError> {
    if text.trim().is_empty() {
        return Err(IngestError::Empty {
            path: origin.to_string(),
        });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            path: origin.to_string(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = header.iter().collect();
    if found != expected {
        return Err(IngestError::Header {
            path: origin.to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            path: origin.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: T = record
            .deserialize(Some(&header))
            .map_err(|e| IngestError::MalformedRow {
                path: origin.to_string(),
                line,
                reason: e.to_string(),
            })?;
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(IngestError::Empty {
            path: origin.to_string(),
        });
    }
    Ok(rows)
}

/// Accumulates samples into cycles, enforcing bounds and per-cycle time order.
pub(crate) struct DatasetBuilder<'a> {
    origin: &'a str,
    bounds: SampleBounds,
    dataset: Dataset,
    cycles: BTreeMap<(String, u32), Vec<Sample>>,
}

impl<'a> DatasetBuilder<'a> {
    pub(crate) fn new(origin: &'a str, opts: &ParseOptions) -> Result<Self, IngestError> {
        if !(opts.rated_capacity > 0.0) {
            return Err(IngestError::RatedCapacity(opts.rated_capacity));
        }
        Ok(Self {
            origin,
            bounds: opts.bounds,
            dataset: Dataset::new(opts.rated_capacity),
            cycles: BTreeMap::new(),
        })
    }

    pub(crate) fn push(
        &mut self,
        line: u64,
        battery_id: String,
        cycle_index: u32,
        sample: Sample,
    ) -> Result<(), IngestError> {
        if battery_id.is_empty() {
            return Err(IngestError::MalformedRow {
                path: self.origin.to_string(),
                line,
                reason: "empty battery_id".into(),
            });
        }
        if let Some(reason) = self.bounds.check(&sample) {
            return Err(IngestError::MalformedRow {
                path: self.origin.to_string(),
                line,
                reason,
            });
        }
        let samples = self
            .cycles
            .entry((battery_id.clone(), cycle_index))
            .or_default();
        match samples.last() {
            Some(prev) if sample.relative_time <= prev.relative_time => {
                Err(IngestError::NonMonotonicTime {
                    path: self.origin.to_string(),
                    line,
                    battery_id,
                    cycle_index,
                    previous: prev.relative_time,
                    current: sample.relative_time,
                })
            }
            _ => {
                samples.push(sample);
                Ok(())
            }
        }
    }

    pub(crate) fn finish(mut self) -> Dataset {
        for ((battery_id, cycle_index), samples) in self.cycles {
            self.dataset
                .batteries
                .entry(battery_id.clone())
                .or_default()
                .push(Cycle::new(battery_id, cycle_index, samples));
        }
        self.dataset
    }
}

/// Write a dataset in the trace CSV schema. Batteries, cycles and samples
/// are emitted in their stored order.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset_to(dataset, file).map_err(io_err(path))
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for cycle in dataset.batteries.values().flatten() {
        for s in &cycle.samples {
            w.serialize((
                &cycle.battery_id,
                cycle.cycle_index,
                s.relative_time,
                s.voltage,
                s.current,
                s.temperature,
            ))?;
        }
    }
    w.flush()
}

/// Which invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyCycle,
    DuplicateCycleIndex,
    CycleOrder,
    BatteryMismatch,
    MonotonicTime,
    SampleBounds,
    RatedCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub battery_id: String,
    pub cycle_index: Option<u32>,
    pub sample_index: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    validate_dataset_with(d, &SampleBounds::default())
}

/// Checks every cycle and sample invariant. Never aborts; returns one report
/// per violation, in battery/cycle/sample order.
pub fn validate_dataset_with(d: &Dataset, bounds: &SampleBounds) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(d.rated_capacity > 0.0) {
        out.push(Violation {
            battery_id: String::new(),
            cycle_index: None,
            sample_index: None,
            rule: Rule::RatedCapacity,
            message: format!("rated capacity {} is not positive", d.rated_capacity),
        });
    }
    for (id, cycles) in &d.batteries {
        let mut prev_index: Option<u32> = None;
        for cycle in cycles {
            let report = |sample_index, rule, message| Violation {
                battery_id: id.clone(),
                cycle_index: Some(cycle.cycle_index),
                sample_index,
                rule,
                message,
            };
            if cycle.battery_id != *id {
                out.push(report(
                    None,
                    Rule::BatteryMismatch,
                    format!("cycle labeled {} stored under {id}", cycle.battery_id),
                ));
            }
            match prev_index {
                Some(p) if p == cycle.cycle_index => out.push(report(
                    None,
                    Rule::DuplicateCycleIndex,
                    format!("cycle_index {} appears more than once", cycle.cycle_index),
                )),
                Some(p) if p > cycle.cycle_index => out.push(report(
                    None,
                    Rule::CycleOrder,
                    format!("cycle_index {} follows {p}", cycle.cycle_index),
                )),
                _ => {}
            }
            prev_index = Some(cycle.cycle_index);
            if cycle.samples.is_empty() {
                out.push(report(None, Rule::EmptyCycle, "cycle has no samples".into()));
            }
            for (k, s) in cycle.samples.iter().enumerate() {
                if let Some(msg) = bounds.check(s) {
                    out.push(report(Some(k), Rule::SampleBounds, msg));
                }
                if k > 0 && s.relative_time <= cycle.samples[k - 1].relative_time {
                    out.push(report(
                        Some(k),
                        Rule::MonotonicTime,
                        format!(
                            "relative_time {} does not exceed previous {}",
                            s.relative_time,
                            cycle.samples[k - 1].relative_time
                        ),
                    ));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "battery_id,cycle_index,relative_time_s,voltage_v,current_a,temperature_c\n";

    fn parse(body: &str) -> Result<Dataset, IngestError> {
        parse_traces_str(&format!("{HEADER}{body}"), "test.csv", &ParseOptions::default())
    }

    #[test]
    fn minimal_file() {
        let d = parse("RW9,0,0.0,4.1,1.0,25.0\nRW9,0,10.0,4.0,1.0,25.1\n").unwrap();
        assert_eq!(d.batteries.len(), 1);
        assert_eq!(d.n_cycles(), 1);
        assert_eq!(d.batteries["RW9"][0].samples.len(), 2);
        assert_eq!(d.rated_capacity, 2.1);
        assert_eq!(d.rated_voltage, 4.2);
    }

    #[test]
    fn time_going_backwards_is_rejected() {
        let err = parse("RW9,0,5.0,4.1,1.0,25.0\nRW9,0,3.0,4.0,1.0,25.0\n").unwrap_err();
        assert!(err.to_string().contains("non-monotonic time"), "{err}");
        match err {
            IngestError::NonMonotonicTime { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse("RW9,0,0.0,4.1,1.0,25.0\nRW9,0,abc,4.0,1.0,25.0\n").unwrap_err();
        match err {
            IngestError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_row_is_rejected() {
        let err = parse("RW9,0,0.0,7.1,1.0,25.0\n").unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_and_headerless_files() {
        let opts = ParseOptions::default();
        assert!(matches!(
            parse_traces_str("", "e.csv", &opts),
            Err(IngestError::Empty { .. })
        ));
        assert!(matches!(
            parse_traces_str(HEADER, "e.csv", &opts),
            Err(IngestError::Empty { .. })
        ));
        assert!(matches!(
            parse_traces_str("RW9,0,0.0,4.1,1.0,25.0\n", "e.csv", &opts),
            Err(IngestError::Header { .. })
        ));
    }

    #[test]
    fn interleaved_cycles_are_grouped_and_ordered() {
        let d = parse(
            "B,3,0.0,4.1,1.0,25\nA,1,0.0,4.1,1.0,25\nB,1,0.0,4.1,1.0,25\nB,3,1.0,4.0,1.0,25\n",
        )
        .unwrap();
        let b: Vec<u32> = d.batteries["B"].iter().map(|c| c.cycle_index).collect();
        assert_eq!(b, vec![1, 3]);
        assert_eq!(d.batteries["B"][1].samples.len(), 2);
        assert_eq!(d.batteries["A"].len(), 1);
    }

    fn good_dataset() -> Dataset {
        let mut d = Dataset::new(2.1);
        let s = |t| Sample {
            relative_time: t,
            voltage: 4.0,
            current: 1.0,
            temperature: 24.0,
        };
        d.push_cycle(Cycle::new("A", 0, vec![s(0.0), s(1.0)]));
        d.push_cycle(Cycle::new("A", 1, vec![s(0.0), s(1.0)]));
        d
    }

    #[test]
    fn validate_clean_dataset() {
        assert!(validate_dataset(&good_dataset()).is_empty());
    }

    #[test]
    fn validate_reports_voltage_bound() {
        let mut d = good_dataset();
        d.batteries.get_mut("A").unwrap()[1].samples[1].voltage = 7.1;
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::SampleBounds);
        assert_eq!(v[0].cycle_index, Some(1));
        assert_eq!(v[0].sample_index, Some(1));
        assert!(v[0].message.contains("voltage"));
    }

    #[test]
    fn validate_reports_duplicate_index() {
        let mut d = good_dataset();
        d.batteries.get_mut("A").unwrap()[1].cycle_index = 0;
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DuplicateCycleIndex);
    }

    #[test]
    fn validate_reports_time_and_empty_cycle() {
        let mut d = good_dataset();
        let cycles = d.batteries.get_mut("A").unwrap();
        cycles[0].samples[1].relative_time = 0.0;
        cycles[1].samples.clear();
        let rules: Vec<Rule> = validate_dataset(&d).iter().map(|v| v.rule).collect();
        assert_eq!(rules, vec![Rule::MonotonicTime, Rule::EmptyCycle]);
    }
}
