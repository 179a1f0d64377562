use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalReport, LearnError, LearnerConfig, Regressor, Scaling};
use crate::features::Matrix;

pub const DEFAULT_FOLDS: usize = 5;

/// Fold index for each of `n` rows: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
pub fn kfold_assignments(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<EvalReport>,
    pub mean: EvalReport,
}

/// k-fold cross validation; each fold trains on the other `k - 1` folds
/// with `config` and is scored on the held-out one.
pub fn kfold_cv(
    config: &LearnerConfig,
    x: &Matrix,
    y: &[f64],
    scaling: Scaling,
    k: usize,
    seed: u64,
) -> Result<CvReport, LearnError> {
    super::check_xy(x, y)?;
    if k < 2 || k > x.n_rows() {
        return Err(LearnError::InvalidParams(format!(
            "k = {k} folds is invalid for {} rows",
            x.n_rows()
        )));
    }
    let assign = kfold_assignments(x.n_rows(), k, seed);
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..x.n_rows()).partition(|&i| assign[i] == f);
        let xtr = x.select_rows(&train);
        let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xte = x.select_rows(&test);
        let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let t0 = Instant::now();
        let model = Regressor::fit(config, &xtr, &ytr, scaling)?;
        let train_time = t0.elapsed().as_secs_f64();
        let mut r = model.evaluate(&xte, &yte)?;
        r.train_time_s = train_time;
        folds.push(r);
    }
    let mean = EvalReport::mean(&folds).expect("k >= 2");
    Ok(CvReport { k, seed, folds, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ForestParams;

    #[test]
    fn assignments_balanced_and_deterministic() {
        let a = kfold_assignments(23, 5, 9);
        assert_eq!(a, kfold_assignments(23, 5, 9));
        let mut counts = [0; 5];
        for f in &a {
            counts[*f] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(counts.iter().sum::<usize>(), 23);
    }

    #[test]
    fn cv_runs_every_fold() {
        let rows: Vec<[f64; 1]> = (0..50).map(|i| [i as f64]).collect();
        let y: Vec<f64> = (0..50).map(|i| 2.0 * i as f64).collect();
        let cfg = LearnerConfig::RandomForest(ForestParams {
            n_trees: 10,
            ..Default::default()
        });
        let r = kfold_cv(&cfg, &Matrix::from_rows(&rows), &y, Scaling::None, 5, 1).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.mean.n_samples, 50);
        assert!(r.mean.mae_pct < 5.0);
        for f in &r.folds {
            f.check_invariants().unwrap();
        }
    }

    #[test]
    fn bad_k() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]);
        assert!(kfold_cv(&LearnerConfig::default(), &x, &[1.0, 2.0], Scaling::None, 1, 0).is_err());
        assert!(kfold_cv(&LearnerConfig::default(), &x, &[1.0, 2.0], Scaling::None, 3, 0).is_err());
    }
}
