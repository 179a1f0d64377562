//! How SOC models trained at one SOH band fare on cycles of another.

use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::features::{cycle_matrix, training_set, Feature, Target};
use crate::labeling::{LabeledCycle, LabeledDataset};
use crate::learners::{EvalReport, LearnerConfig, Regressor, Scaling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StalenessOptions {
    /// Battery to draw cycles from; defaults to the first by id.
    pub battery: Option<String>,
    /// Cycles nearest each train band used for training. Matches the twin's
    /// default retrain window.
    pub window: usize,
    /// Largest accepted distance, in SOH points, between a band and the
    /// nearest cycle.
    pub band_tolerance: f64,
    pub features: Vec<Feature>,
}

impl Default for StalenessOptions {
    fn default() -> Self {
        Self {
            battery: None,
            window: 3,
            band_tolerance: 2.5,
            features: Feature::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessRow {
    pub train_band: f64,
    pub train_cycles: Vec<u32>,
    pub train_soh_pct: Vec<f64>,
    pub report: EvalReport,
}

/// Per-sample SOC of the evaluation cycle: ground truth and one prediction
/// column per train band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocCurves {
    pub relative_time: Vec<f64>,
    pub truth: Vec<f64>,
    pub predictions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessTable {
    pub battery: String,
    pub eval_band: f64,
    pub eval_cycle_index: u32,
    pub eval_soh_pct: f64,
    pub rows: Vec<StalenessRow>,
    #[serde(skip)]
    pub curves: SocCurves,
}

impl Default for SocCurves {
    fn default() -> Self {
        Self {
            relative_time: Vec::new(),
            truth: Vec::new(),
            predictions: Vec::new(),
        }
    }
}

impl SocCurves {
    /// CSV with `relative_time,truth,band_<b>...` columns.
    pub fn write_csv<W: std::io::Write>(&self, bands: &[f64], w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["relative_time".to_string(), "truth".to_string()];
        header.extend(bands.iter().map(|b| format!("band_{b}")));
        out.write_record(&header)?;
        for k in 0..self.truth.len() {
            let mut rec = vec![self.relative_time[k].to_string(), self.truth[k].to_string()];
            rec.extend(self.predictions.iter().map(|p| p[k].to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Positions of the `n` cycles nearest `band`, nearest first, ties broken
/// by chronological order.
fn nearest(cycles: &[LabeledCycle], band: f64, n: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..cycles.len()).filter(|&i| Some(i) != exclude).collect();
    idx.sort_by(|&a, &b| {
        (cycles[a].soh - band)
            .abs()
            .total_cmp(&(cycles[b].soh - band).abs())
            .then(a.cmp(&b))
    });
    idx.truncate(n);
    idx
}

/// Trains one SOC model per train band and evaluates each on the cycle
/// nearest `eval_band`. That cycle is never part of any training set.
pub fn evaluate_staleness(
    ds: &LabeledDataset,
    train_bands: &[f64],
    eval_band: f64,
    learner: &LearnerConfig,
    opts: &StalenessOptions,
) -> Result<StalenessTable, TwinError> {
    if train_bands.is_empty() {
        return Err(TwinError::Config("no train bands given".into()));
    }
    if opts.window == 0 || opts.features.is_empty() {
        return Err(TwinError::Config("window and feature list must be non-empty".into()));
    }
    let battery = match &opts.battery {
        Some(b) => b.clone(),
        None => ds
            .batteries
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| TwinError::InsufficientData("dataset has no batteries".into()))?,
    };
    let cycles = ds
        .batteries
        .get(&battery)
        .ok_or_else(|| TwinError::UnknownBattery(battery.clone()))?;
    let check = |band: f64, pos: &[usize]| -> Result<(), TwinError> {
        match pos.first() {
            Some(&p) if (cycles[p].soh - band).abs() <= opts.band_tolerance => Ok(()),
            Some(&p) => Err(TwinError::NoCycleNearBand {
                band,
                nearest: Some(cycles[p].soh),
            }),
            None => Err(TwinError::NoCycleNearBand { band, nearest: None }),
        }
    };

    let eval_pos = nearest(cycles, eval_band, 1, None);
    check(eval_band, &eval_pos)?;
    let eval = &cycles[eval_pos[0]];
    let x_eval = cycle_matrix(&eval.cycle, &opts.features);

    let mut rows = Vec::with_capacity(train_bands.len());
    let mut curves = SocCurves {
        relative_time: eval.cycle.samples.iter().map(|s| s.relative_time).collect(),
        truth: eval.soc_per_sample.clone(),
        predictions: Vec::new(),
    };
    for &band in train_bands {
        let pos = nearest(cycles, band, opts.window, Some(eval_pos[0]));
        check(band, &pos)?;
        let train: Vec<&LabeledCycle> = pos.iter().map(|&p| &cycles[p]).collect();
        let (x, y) = training_set(train.iter().copied(), &opts.features, Target::Soc);
        let t0 = std::time::Instant::now();
        let model = Regressor::fit(learner, &x, &y, Scaling::MinMax)?;
        let train_time = t0.elapsed().as_secs_f64();
        let mut report = model.evaluate(&x_eval, &eval.soc_per_sample)?;
        report.train_time_s = train_time;
        curves.predictions.push(model.predict(&x_eval)?);
        rows.push(StalenessRow {
            train_band: band,
            train_cycles: train.iter().map(|c| c.cycle_index()).collect(),
            train_soh_pct: train.iter().map(|c| c.soh).collect(),
            report,
        });
    }
    Ok(StalenessTable {
        battery,
        eval_band,
        eval_cycle_index: eval.cycle_index(),
        eval_soh_pct: eval.soh,
        rows,
        curves,
    })
}
