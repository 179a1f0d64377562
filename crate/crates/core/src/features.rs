//! Model inputs: per-sample feature rows and a dense row-major matrix.

use serde::{Deserialize, Serialize};

use crate::ingest::{Cycle, Sample};
use crate::labeling::LabeledCycle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Voltage,
    Current,
    Temperature,
    RelativeTime,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Voltage,
        Feature::Current,
        Feature::Temperature,
        Feature::RelativeTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Voltage => "voltage",
            Feature::Current => "current",
            Feature::Temperature => "temperature",
            Feature::RelativeTime => "relative_time",
        }
    }

    pub fn parse(s: &str) -> Option<Feature> {
        match s.trim() {
            "voltage" | "v" => Some(Feature::Voltage),
            "current" | "i" => Some(Feature::Current),
            "temperature" | "temp" => Some(Feature::Temperature),
            "relative_time" | "time" | "t" => Some(Feature::RelativeTime),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub voltage: f64,
    pub current: f64,
    pub temperature: f64,
    pub relative_time: f64,
}

impl FeatureRow {
    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::Voltage => self.voltage,
            Feature::Current => self.current,
            Feature::Temperature => self.temperature,
            Feature::RelativeTime => self.relative_time,
        }
    }

    pub fn is_finite(&self) -> bool {
        Feature::ALL.iter().all(|&f| self.get(f).is_finite())
    }

    pub fn select(&self, features: &[Feature]) -> Vec<f64> {
        features.iter().map(|&f| self.get(f)).collect()
    }
}

impl From<&Sample> for FeatureRow {
    fn from(s: &Sample) -> Self {
        Self {
            voltage: s.voltage,
            current: s.current,
            temperature: s.temperature,
            relative_time: s.relative_time,
        }
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn with_cols(n_cols: usize) -> Self {
        Self {
            n_cols,
            data: Vec::new(),
        }
    }

    /// Panics if rows have differing lengths.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut m = Self::with_cols(n_cols);
        for r in rows {
            m.push_row(r.as_ref());
        }
        m
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.n_cols, "row width mismatch");
        self.data.extend_from_slice(row);
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut m = Self::with_cols(self.n_cols);
        m.data.reserve(idx.len() * self.n_cols);
        for &i in idx {
            m.data.extend_from_slice(self.row(i));
        }
        m
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut m = Self::with_cols(cols.len());
        for r in self.rows() {
            for &c in cols {
                m.data.push(r[c]);
            }
        }
        m
    }
}

pub fn cycle_matrix(cycle: &Cycle, features: &[Feature]) -> Matrix {
    let mut m = Matrix::with_cols(features.len());
    for s in &cycle.samples {
        m.push_row(&FeatureRow::from(s).select(features));
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Soc,
    Soh,
}

/// Stacks the samples of `cycles` into a design matrix and target vector.
pub fn training_set<'a>(
    cycles: impl IntoIterator<Item = &'a LabeledCycle>,
    features: &[Feature],
    target: Target,
) -> (Matrix, Vec<f64>) {
    let mut x = Matrix::with_cols(features.len());
    let mut y = Vec::new();
    for lc in cycles {
        for (k, s) in lc.cycle.samples.iter().enumerate() {
            x.push_row(&FeatureRow::from(s).select(features));
            y.push(match target {
                Target::Soc => lc.soc_per_sample[k],
                Target::Soh => lc.soh,
            });
        }
    }
    (x, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_basics() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.select_rows(&[2, 0]).row(0), &[5.0, 6.0]);
        assert_eq!(m.select_cols(&[1]).row(2), &[6.0]);
        assert_eq!(Matrix::with_cols(3).n_rows(), 0);
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(Feature::parse(f.name()), Some(f));
        }
        assert_eq!(Feature::parse("bogus"), None);
    }
}
