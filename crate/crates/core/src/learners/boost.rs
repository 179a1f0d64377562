//! Least-squares gradient boosting over histogram-binned features.
//!
//! Each feature is cut once into at most `n_bins` equal-frequency bins. Every
//! stage fits a tree to the current residuals, grown leaf-wise: the leaf with
//! the largest split gain is split next, until `max_leaves` is reached or no
//! leaf under `max_depth` can be split profitably. Leaf values are residual
//! means; the ensemble predicts `base + Σ learning_rate · tree(x)`.

use serde::{Deserialize, Serialize};

use super::tree::{split_score, Node, Tree};
use super::LearnError;
use crate::features::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub n_iterations: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_depth: usize,
    pub n_bins: usize,
    pub min_samples_leaf: usize,
    /// Recorded for reproducibility; training itself draws no randomness.
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_iterations: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            max_depth: 8,
            n_bins: 64,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidParams(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if self.max_leaves < 2 {
            return bad("max_leaves must be >= 2");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be >= 2");
        }
        if self.n_bins > u16::MAX as usize {
            return bad("n_bins must fit in 16 bits");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut acc = self.base_score;
        for t in &self.trees {
            acc += self.learning_rate * t.predict_row(x);
        }
        acc
    }

    pub fn fit(x: &Matrix, y: &[f64], params: &BoostParams) -> Result<Self, LearnError> {
        Self::fit_with_history(x, y, params).map(|(m, _)| m)
    }

    /// Also returns the training MSE before any stage and after each stage.
    pub fn fit_with_history(
        x: &Matrix,
        y: &[f64],
        params: &BoostParams,
    ) -> Result<(Self, Vec<f64>), LearnError> {
        params.validate()?;
        super::check_xy(x, y)?;
        let n = y.len();
        let base_score = y.iter().sum::<f64>() / n as f64;
        let binned = BinnedMatrix::new(x, params.n_bins);
        let mut fitted = vec![base_score; n];
        let mut residual = vec![0.0; n];
        let mse = |f: &[f64]| y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
        let mut history = vec![mse(&fitted)];
        let mut trees = Vec::with_capacity(params.n_iterations);

        for _ in 0..params.n_iterations {
            for i in 0..n {
                residual[i] = y[i] - fitted[i];
            }
            let (tree, assignment) = grow_leaf_wise(&binned, &residual, params);
            for i in 0..n {
                fitted[i] += params.learning_rate * tree.nodes[assignment[i]].leaf_value;
            }
            history.push(mse(&fitted));
            trees.push(tree);
        }
        Ok((
            Self {
                base_score,
                learning_rate: params.learning_rate,
                trees,
            },
            history,
        ))
    }
}

/// Upper bin edges per feature: a value `v` falls in bin
/// `#{edges < v}`, so `v <= edges[b]` iff its bin is `<= b`.
pub(crate) fn quantile_edges(values: &mut [f64], n_bins: usize) -> Vec<f64> {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    let mut unique: Vec<f64> = values.to_vec();
    unique.dedup();
    if unique.len() <= n_bins {
        return unique
            .windows(2)
            .map(|w| super::tree::midpoint(w[0], w[1]))
            .collect();
    }
    let mut edges: Vec<f64> = (1..n_bins)
        .map(|q| values[(q * n / n_bins).max(1) - 1])
        .collect();
    edges.dedup();
    // The maximum value needs no upper edge.
    if edges.last() == unique.last() {
        edges.pop();
    }
    edges
}

struct BinnedMatrix {
    n_rows: usize,
    /// Column-major bin indices.
    bins: Vec<Vec<u16>>,
    edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    fn new(x: &Matrix, n_bins: usize) -> Self {
        let n_rows = x.n_rows();
        let mut bins = Vec::with_capacity(x.n_cols());
        let mut edges = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let mut col: Vec<f64> = (0..n_rows).map(|i| x.get(i, j)).collect();
            let e = quantile_edges(&mut col, n_bins);
            let b = (0..n_rows)
                .map(|i| {
                    let v = x.get(i, j);
                    e.partition_point(|&edge| edge < v) as u16
                })
                .collect();
            bins.push(b);
            edges.push(e);
        }
        Self {
            n_rows,
            bins,
            edges,
        }
    }

    fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    score_gain: f64,
    feature: usize,
    bin: usize,
}

struct Leaf {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
    best: Option<Candidate>,
}

fn best_split(
    data: &BinnedMatrix,
    residual: &[f64],
    rows: &[usize],
    params: &BoostParams,
    hist_sum: &mut Vec<f64>,
    hist_cnt: &mut Vec<usize>,
) -> Option<Candidate> {
    let n = rows.len();
    let min_leaf = params.min_samples_leaf;
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| residual[r]).sum();
    let parent = total * total / n as f64;
    let mut best: Option<Candidate> = None;
    for f in 0..data.bins.len() {
        let nb = data.n_bins(f);
        if nb < 2 {
            continue;
        }
        hist_sum.clear();
        hist_sum.resize(nb, 0.0);
        hist_cnt.clear();
        hist_cnt.resize(nb, 0);
        let col = &data.bins[f];
        for &r in rows {
            let b = col[r] as usize;
            hist_sum[b] += residual[r];
            hist_cnt[b] += 1;
        }
        let (mut sl, mut nl) = (0.0, 0usize);
        for b in 0..nb - 1 {
            sl += hist_sum[b];
            nl += hist_cnt[b];
            if hist_cnt[b] == 0 || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let gain = split_score(sl, nl as f64, total - sl, (n - nl) as f64) - parent;
            if gain > 0.0 && best.is_none_or(|c| gain > c.score_gain) {
                best = Some(Candidate {
                    score_gain: gain,
                    feature: f,
                    bin: b,
                });
            }
        }
    }
    best
}

/// Returns the tree and, for every training row, the index of its leaf.
fn grow_leaf_wise(
    data: &BinnedMatrix,
    residual: &[f64],
    params: &BoostParams,
) -> (Tree, Vec<usize>) {
    let mut hist_sum = Vec::new();
    let mut hist_cnt = Vec::new();
    let mut nodes = vec![Node::leaf(0.0)];
    let root_rows: Vec<usize> = (0..data.n_rows).collect();
    let can_split = |depth: usize| depth < params.max_depth;
    let root_best = if can_split(0) {
        best_split(data, residual, &root_rows, params, &mut hist_sum, &mut hist_cnt)
    } else {
        None
    };
    let mut leaves = vec![Leaf {
        node: 0,
        rows: root_rows,
        depth: 0,
        best: root_best,
    }];

    while leaves.len() < params.max_leaves {
        // Largest gain wins; ties go to the earliest-created leaf.
        let mut pick: Option<(usize, f64)> = None;
        for (k, leaf) in leaves.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|(_, g)| c.score_gain > g) {
                    pick = Some((k, c.score_gain));
                }
            }
        }
        let Some((k, _)) = pick else { break };
        let leaf = leaves.remove(k);
        let split = leaf.best.expect("picked leaf has a split");
        let col = &data.bins[split.feature];
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&r| col[r] as usize <= split.bin);

        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::leaf(0.0));
        nodes.push(Node::leaf(0.0));
        let parent = &mut nodes[leaf.node];
        parent.feature = Some(split.feature);
        parent.threshold = data.edges[split.feature][split.bin];
        parent.left = Some(li);
        parent.right = Some(ri);

        let depth = leaf.depth + 1;
        // Insert children where the parent was so creation order is kept
        // stable for tie-breaking.
        for (pos, (node, rows)) in [(li, lrows), (ri, rrows)].into_iter().enumerate() {
            let best = if can_split(depth) {
                best_split(data, residual, &rows, params, &mut hist_sum, &mut hist_cnt)
            } else {
                None
            };
            leaves.insert(
                k + pos,
                Leaf {
                    node,
                    rows,
                    depth,
                    best,
                },
            );
        }
    }

    let mut assignment = vec![0; data.n_rows];
    for leaf in &leaves {
        let sum: f64 = leaf.rows.iter().map(|&r| residual[r]).sum();
        nodes[leaf.node].leaf_value = sum / leaf.rows.len() as f64;
        for &r in &leaf.rows {
            assignment[r] = leaf.node;
        }
    }
    (Tree { nodes }, assignment)
}
