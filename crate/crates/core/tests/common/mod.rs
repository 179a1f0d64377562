//! Independent reference implementations and shared fixtures.

#![allow(dead_code)]

use battwin::features::Matrix;
use battwin::labeling::{build_labeled_dataset, LabeledDataset};
use battwin::learners::Network;
use battwin::synth::{generate_fleet, twin_fleet};
use battwin::twin::TwinConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Regression tree found by brute force: every feature, every midpoint
/// between distinct sorted values, scored with exact rational arithmetic.
/// Integer targets keep sums exact.
#[derive(Debug)]
pub enum OracleTree {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<OracleTree>,
        right: Box<OracleTree>,
    },
}

impl OracleTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            OracleTree::Leaf(v) => *v,
            OracleTree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// `a/b < c/d` for positive denominators.
fn frac_lt(a: i128, b: i128, c: i128, d: i128) -> bool {
    a * d < c * b
}

pub fn cart_oracle(
    x: &[Vec<f64>],
    y: &[i64],
    rows: &[usize],
    depth: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
) -> OracleTree {
    let n = rows.len();
    let total: i64 = rows.iter().map(|&r| y[r]).sum();
    let leaf = OracleTree::Leaf(total as f64 / n as f64);
    if max_depth.is_some_and(|d| depth >= d) || n < 2 * min_leaf {
        return leaf;
    }
    // Best score so far as a fraction; starts at the parent's sum²/n.
    let (mut best_num, mut best_den) = ((total as i128).pow(2), n as i128);
    let mut best: Option<(usize, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (mut sl, mut nl) = (0i128, 0i128);
            for &r in rows {
                if x[r][f] <= thr {
                    sl += y[r] as i128;
                    nl += 1;
                }
            }
            let (sr, nr) = (total as i128 - sl, n as i128 - nl);
            if (nl as usize) < min_leaf || (nr as usize) < min_leaf {
                continue;
            }
            let num = sl * sl * nr + sr * sr * nl;
            let den = nl * nr;
            if frac_lt(best_num, best_den, num, den) {
                best_num = num;
                best_den = den;
                best = Some((f, thr));
            }
        }
    }
    match best {
        None => leaf,
        Some((feature, threshold)) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&r| x[r][feature] <= threshold);
            OracleTree::Split {
                feature,
                threshold,
                left: Box::new(cart_oracle(x, y, &l, depth + 1, max_depth, min_leaf)),
                right: Box::new(cart_oracle(x, y, &r, depth + 1, max_depth, min_leaf)),
            }
        }
    }
}

/// Norm-wise relative difference between the backpropagated gradient and
/// central finite differences for one randomly initialised network.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = 3;
    let mut net = Network::initialized(n_in, &[6, 5], &mut rng);
    // Biases start at zero; perturb everything so they are exercised too.
    let jittered: Vec<f64> = net
        .params()
        .iter()
        .map(|w| w + rng.random_range(-0.3..0.3))
        .collect();
    net.set_params(&jittered);
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..n_in).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect())
        .collect();
    let x = Matrix::from_rows(&rows);
    let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
    let idx: Vec<usize> = (0..8).collect();

    let (_, analytic) = net.loss_and_gradient(&x, &y, &idx);
    let base = net.params();
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = net.clone();
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_params(&p);
        let up = probe.loss_and_gradient(&x, &y, &idx).0;
        p[k] = base[k] - h;
        probe.set_params(&p);
        let down = probe.loss_and_gradient(&x, &y, &idx).0;
        numeric.push((up - down) / (2.0 * h));
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm_a: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_n: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (norm_a + norm_n).max(1e-12)
}

/// Labeled synthetic fleet: vehicle `VEH` (100 -> 80 %, 401 cycles) and
/// historical `HIST1`, `HIST2` (100 -> 70 %, 61 cycles each).
pub fn labeled_fleet(seed: u64) -> LabeledDataset {
    let raw = generate_fleet(&twin_fleet(seed)).expect("fleet");
    build_labeled_dataset(&raw, 0.0).expect("labels")
}

pub fn fleet_config() -> TwinConfig {
    TwinConfig {
        vehicle_battery: Some("VEH".into()),
        historical_batteries: Some(vec!["HIST1".into(), "HIST2".into()]),
        ..TwinConfig::default()
    }
}
