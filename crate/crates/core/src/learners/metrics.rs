use serde::{Deserialize, Serialize};

use super::LearnError;

/// Error metrics on a percent-valued target, plus wall-clock timings filled
/// in by whoever trained and ran the model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse_pct: f64,
    pub mse_pct2: f64,
    pub mae_pct: f64,
    pub max_err_pct: f64,
    pub train_time_s: f64,
    pub infer_time_s: f64,
    pub n_samples: usize,
}

impl EvalReport {
    pub fn from_errors(predicted: &[f64], truth: &[f64]) -> Result<Self, LearnError> {
        if predicted.is_empty() {
            return Err(LearnError::EmptyData);
        }
        if predicted.len() != truth.len() {
            return Err(LearnError::LengthMismatch {
                rows: predicted.len(),
                targets: truth.len(),
            });
        }
        let n = predicted.len() as f64;
        let (mut se, mut ae, mut max) = (0.0, 0.0, 0.0f64);
        for (p, t) in predicted.iter().zip(truth) {
            let e = (p - t).abs();
            se += e * e;
            ae += e;
            max = max.max(e);
        }
        let mse = se / n;
        Ok(Self {
            rmse_pct: mse.sqrt(),
            mse_pct2: mse,
            mae_pct: ae / n,
            max_err_pct: max,
            train_time_s: 0.0,
            infer_time_s: 0.0,
            n_samples: predicted.len(),
        })
    }

    /// RMSE ≥ MAE and MaxErr ≥ MAE hold for any error vector; a small
    /// relative slack absorbs rounding when all errors are equal.
    pub fn check_invariants(&self) -> Result<(), String> {
        let slack = 1e-12 * self.mae_pct.abs().max(1.0);
        let all = [
            self.rmse_pct,
            self.mse_pct2,
            self.mae_pct,
            self.max_err_pct,
            self.train_time_s,
            self.infer_time_s,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(format!("negative or non-finite metric in {self:?}"));
        }
        if self.rmse_pct + slack < self.mae_pct {
            return Err(format!("rmse {} < mae {}", self.rmse_pct, self.mae_pct));
        }
        if self.max_err_pct + slack < self.mae_pct {
            return Err(format!("max_err {} < mae {}", self.max_err_pct, self.mae_pct));
        }
        Ok(())
    }

    /// Field-wise mean; sample counts are summed.
    pub fn mean(reports: &[EvalReport]) -> Option<EvalReport> {
        if reports.is_empty() {
            return None;
        }
        let k = reports.len() as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Some(EvalReport {
            rmse_pct: avg(|r| r.rmse_pct),
            mse_pct2: avg(|r| r.mse_pct2),
            mae_pct: avg(|r| r.mae_pct),
            max_err_pct: avg(|r| r.max_err_pct),
            train_time_s: avg(|r| r.train_time_s),
            infer_time_s: avg(|r| r.infer_time_s),
            n_samples: reports.iter().map(|r| r.n_samples).sum(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((r.rmse_pct, r.mse_pct2, r.mae_pct, r.max_err_pct), (0.0, 0.0, 0.0, 0.0));
        assert!(r.check_invariants().is_ok());
    }

    #[test]
    fn errors_one_and_two() {
        let r = EvalReport::from_errors(&[11.0, 18.0], &[10.0, 20.0]).unwrap();
        assert_eq!(r.mae_pct, 1.5);
        assert_eq!(r.mse_pct2, 2.5);
        assert!((r.rmse_pct - 2.5f64.sqrt()).abs() < 1e-15);
        assert!((r.rmse_pct - 1.5811).abs() < 1e-4);
        assert_eq!(r.max_err_pct, 2.0);
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(EvalReport::from_errors(&[], &[]).is_err());
        assert!(EvalReport::from_errors(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mean_of_reports() {
        let a = EvalReport::from_errors(&[1.0], &[0.0]).unwrap();
        let b = EvalReport::from_errors(&[3.0], &[0.0]).unwrap();
        let m = EvalReport::mean(&[a, b]).unwrap();
        assert_eq!(m.mae_pct, 2.0);
        assert_eq!(m.n_samples, 2);
        assert!(EvalReport::mean(&[]).is_none());
    }
}
