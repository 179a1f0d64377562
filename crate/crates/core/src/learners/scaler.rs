use serde::{Deserialize, Serialize};

use super::LearnError;
use crate::features::Matrix;

/// Per-feature Min-Max normalization. Inputs outside the fitted range are
/// not clamped; a constant feature maps to 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Matrix) -> Result<Self, LearnError> {
        if x.n_rows() == 0 {
            return Err(LearnError::EmptyData);
        }
        let mut min = x.row(0).to_vec();
        let mut max = min.clone();
        for r in x.rows().skip(1) {
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn is_fitted(&self) -> bool {
        !self.min.is_empty() && self.min.len() == self.max.len()
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) -> Result<(), LearnError> {
        if !self.is_fitted() {
            return Err(LearnError::ScalerNotFitted);
        }
        if row.len() != self.n_features() {
            return Err(LearnError::DimensionMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        for (j, (&v, o)) in row.iter().zip(out.iter_mut()).enumerate() {
            let range = self.max[j] - self.min[j];
            *o = if range > 0.0 {
                (v - self.min[j]) / range
            } else {
                0.0
            };
        }
        Ok(())
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix, LearnError> {
        let mut out = Matrix::with_cols(x.n_cols());
        let mut buf = vec![0.0; x.n_cols()];
        for r in x.rows() {
            self.transform_row(r, &mut buf)?;
            out.push_row(&buf);
        }
        Ok(out)
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.min.len() != self.max.len() {
            return Err("scaler min/max lengths differ".into());
        }
        if self
            .min
            .iter()
            .zip(&self.max)
            .any(|(a, b)| !a.is_finite() || !b.is_finite() || b < a)
        {
            return Err("scaler bounds must be finite with max >= min".into());
        }
        Ok(())
    }
}
