//! Synthetic ageing traces: constant-current reference discharges whose
//! capacity shrinks and internal resistance grows as SOH falls.
//!
//! Terminal voltage follows `v = OCV(soc) - i * R(soh) + noise`, with
//! `R(soh) = r_nominal * (1 + r_growth * (100 - soh) / 100)` and capacity
//! `soh * rated / 100`. Each cycle starts full and ends at the cutoff
//! voltage or when the capacity is exhausted, whichever comes first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{Cycle, Dataset, Sample, DEFAULT_RATED_CAPACITY_AH};

/// OCV polynomial in SOC fraction (ascending powers) through
/// (0 %, 3.0 V), (50 %, 3.7 V), (100 %, 4.2 V), cubic term zero.
pub const DEFAULT_OCV_COEFFICIENTS: [f64; 4] = [3.0, 1.6, -0.4, 0.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthesis parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub battery_id: String,
    pub rated_capacity: f64,
    /// Open-circuit voltage as a polynomial in SOC fraction, ascending
    /// powers. Must be increasing on [0, 1].
    pub ocv_coefficients: Vec<f64>,
    pub r_internal_nominal: f64,
    pub r_growth: f64,
    pub discharge_current: f64,
    pub sample_period: f64,
    pub soh_schedule: Vec<f64>,
    pub noise_sigma: f64,
    pub cutoff_voltage: f64,
    pub ambient_temperature: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            battery_id: "SYN".into(),
            rated_capacity: DEFAULT_RATED_CAPACITY_AH,
            ocv_coefficients: DEFAULT_OCV_COEFFICIENTS.to_vec(),
            r_internal_nominal: 0.07,
            r_growth: 1.0,
            discharge_current: 2.0,
            sample_period: 20.0,
            soh_schedule: linear_schedule(100.0, 70.0, 61),
            noise_sigma: 0.001,
            cutoff_voltage: 2.5,
            ambient_temperature: 24.0,
            seed: 0,
        }
    }
}

/// `n` evenly spaced SOH values from `start` to `end` inclusive.
pub fn linear_schedule(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (end - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl SynthParams {
    pub fn ocv(&self, soc_fraction: f64) -> f64 {
        self.ocv_coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * soc_fraction + c)
    }

    pub fn resistance(&self, soh: f64) -> f64 {
        self.r_internal_nominal * (1.0 + self.r_growth * (100.0 - soh) / 100.0)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.into()));
        let positive = [
            (self.rated_capacity, "rated_capacity must be > 0"),
            (self.discharge_current, "discharge_current must be > 0"),
            (self.sample_period, "sample_period must be > 0"),
        ];
        for (v, msg) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(msg);
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.r_internal_nominal >= 0.0) || !(self.r_growth >= 0.0) {
            return bad("resistance parameters must be >= 0");
        }
        if self.ocv_coefficients.is_empty() {
            return bad("ocv_coefficients is empty");
        }
        if self.soh_schedule.is_empty() {
            return bad("soh_schedule is empty");
        }
        if self
            .soh_schedule
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return bad("soh_schedule entries must be positive");
        }
        if self.soh_schedule.windows(2).any(|w| w[1] > w[0]) {
            return bad("soh_schedule must be non-increasing");
        }
        let grid: Vec<f64> = (0..=200).map(|k| self.ocv(k as f64 / 200.0)).collect();
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("OCV must be strictly increasing in SOC");
        }
        Ok(())
    }
}

fn generate_cycle(p: &SynthParams, cycle_index: usize, soh: f64) -> Cycle {
    let capacity = soh * p.rated_capacity / 100.0;
    let i = p.discharge_current;
    let ir = i * p.resistance(soh);
    let t_empty = capacity * 3600.0 / i;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(cycle_index as u64);
    let noise = Normal::new(0.0, p.noise_sigma).expect("sigma validated");

    let clean_v = |t: f64| p.ocv((1.0 - i * t / 3600.0 / capacity).max(0.0)) - ir;
    let sample = |t: f64, rng: &mut ChaCha8Rng| Sample {
        relative_time: t,
        voltage: clean_v(t) + if p.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 },
        current: i,
        temperature: p.ambient_temperature,
    };

    // Time at which the noiseless terminal voltage reaches cutoff, if it
    // does before the cell is empty.
    let t_end = if clean_v(t_empty) >= p.cutoff_voltage {
        t_empty
    } else {
        let (mut lo, mut hi) = (0.0, t_empty);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if clean_v(mid) >= p.cutoff_voltage {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    let mut samples = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * p.sample_period;
        if t >= t_end {
            break;
        }
        samples.push(sample(t, &mut rng));
        k += 1;
    }
    samples.push(sample(t_end, &mut rng));
    Cycle::new(p.battery_id.clone(), cycle_index as u32, samples)
}

/// One reference discharge per `soh_schedule` entry, indexed from 0.
pub fn generate_lifetime(p: &SynthParams) -> Result<Dataset, SynthError> {
    p.validate()?;
    let mut d = Dataset::new(p.rated_capacity);
    for (k, &soh) in p.soh_schedule.iter().enumerate() {
        d.push_cycle(generate_cycle(p, k, soh));
    }
    Ok(d)
}

/// A vehicle battery ageing 100 -> 80 % in 0.05-point steps plus two
/// historical batteries ageing 100 -> 70 % in 0.5-point steps, all with
/// default physics. Seeds derive from `seed`.
pub fn twin_fleet(seed: u64) -> Vec<SynthParams> {
    let base = SynthParams::default();
    vec![
        SynthParams {
            battery_id: "VEH".into(),
            soh_schedule: linear_schedule(100.0, 80.0, 401),
            seed: seed.wrapping_mul(3),
            ..base.clone()
        },
        SynthParams {
            battery_id: "HIST1".into(),
            soh_schedule: linear_schedule(100.0, 70.0, 61),
            seed: seed.wrapping_mul(3).wrapping_add(1),
            ..base.clone()
        },
        SynthParams {
            battery_id: "HIST2".into(),
            soh_schedule: linear_schedule(100.0, 70.0, 61),
            seed: seed.wrapping_mul(3).wrapping_add(2),
            ..base
        },
    ]
}

/// Several batteries in one dataset. All must share a rated capacity and
/// have distinct ids.
pub fn generate_fleet(params: &[SynthParams]) -> Result<Dataset, SynthError> {
    let first = params
        .first()
        .ok_or_else(|| SynthError::InvalidParams("no batteries requested".into()))?;
    let mut d = Dataset::new(first.rated_capacity);
    for p in params {
        if p.rated_capacity != first.rated_capacity {
            return Err(SynthError::InvalidParams(
                "batteries in one dataset must share a rated capacity".into(),
            ));
        }
        if d.batteries.contains_key(&p.battery_id) {
            return Err(SynthError::InvalidParams(format!(
                "duplicate battery id {}",
                p.battery_id
            )));
        }
        for c in generate_lifetime(p)?.batteries.into_values().flatten() {
            d.push_cycle(c);
        }
    }
    Ok(d)
}
