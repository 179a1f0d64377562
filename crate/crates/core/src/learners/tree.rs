//! Binary regression trees shared by the forest and the booster, plus the
//! exact (sort-based) CART builder used by the forest.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::Matrix;

/// One node of a flattened tree. Internal nodes route `x[feature] <= threshold`
/// to `left`; leaves have no feature and no children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: f64,
}

impl Node {
    pub fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: None,
            right: None,
            leaf_value: value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match (n.feature, n.left, n.right) {
                (Some(f), Some(l), Some(r)) => i = if x[f] <= n.threshold { l } else { r },
                _ => return n.leaf_value,
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + go(t, l).max(go(t, r)),
                _ => 0,
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    /// Structural checks for trees read from untrusted documents: children
    /// point forward (so traversal terminates) and features are in range.
    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.leaf_value.is_finite() {
                return Err(format!("node {i}: non-finite leaf value"));
            }
            match (n.feature, n.left, n.right) {
                (None, None, None) => {}
                (Some(f), Some(l), Some(r)) => {
                    if f >= n_features {
                        return Err(format!("node {i}: feature {f} out of range"));
                    }
                    if !n.threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() {
                        return Err(format!("node {i}: bad child indices {l}/{r}"));
                    }
                }
                _ => return Err(format!("node {i}: partially specified split")),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CartParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: usize,
}

/// Split score used by every tree builder: `sl²/nl + sr²/nr`. Maximizing it
/// is equivalent to maximizing variance reduction, since the parent term is
/// fixed per node.
#[inline]
pub(crate) fn split_score(sum_left: f64, n_left: f64, sum_right: f64, n_right: f64) -> f64 {
    sum_left * sum_left / n_left + sum_right * sum_right / n_right
}

/// Relative band within which two split scores are treated as equal.
/// Mathematically equal scores can round differently (`9 + 961/3` vs
/// `196 + 400/3`).
const TIE_RTOL: f64 = 1e-12;

#[inline]
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of node samples routed left.
    n_left: usize,
}

/// Exact CART builder. Sample slots (one per entry of `rows`, so bootstrap
/// duplicates are distinct slots) are sorted once per feature; each node
/// owns the same contiguous range in every per-feature order, and a split
/// stable-partitions those ranges so they stay sorted.
struct CartBuilder<'a, R> {
    x: &'a Matrix,
    y: &'a [f64],
    rows: Vec<usize>,
    params: CartParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    buf: Vec<u32>,
}

/// Fits one CART regression tree on `rows` (which may repeat, as in a
/// bootstrap resample). Candidate features per split are drawn from `rng`
/// when `max_features` is below the feature count.
pub(crate) fn fit_cart<R: Rng>(
    x: &Matrix,
    y: &[f64],
    rows: Vec<usize>,
    params: CartParams,
    rng: &mut R,
) -> Tree {
    let n = rows.len();
    let order = (0..x.n_cols())
        .map(|f| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_unstable_by(|&a, &b| {
                let (ra, rb) = (rows[a as usize], rows[b as usize]);
                x.get(ra, f).total_cmp(&x.get(rb, f)).then(ra.cmp(&rb)).then(a.cmp(&b))
            });
            o
        })
        .collect();
    let mut b = CartBuilder {
        x,
        y,
        rows,
        params,
        rng,
        nodes: Vec::new(),
        order,
        goes_left: vec![false; n],
        buf: Vec::with_capacity(n),
    };
    if n > 0 {
        b.build(0, n, 0);
    }
    Tree { nodes: b.nodes }
}

impl<R: Rng> CartBuilder<'_, R> {
    fn target(&self, slot: u32) -> f64 {
        self.y[self.rows[slot as usize]]
    }

    fn value(&self, slot: u32, f: usize) -> f64 {
        self.x.get(self.rows[slot as usize], f)
    }

    fn build(&mut self, lo: usize, hi: usize, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = hi - lo;
        let sum: f64 = self.order[0][lo..hi].iter().map(|&s| self.target(s)).sum();
        self.nodes.push(Node::leaf(sum / n as f64));

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || n < 2 * self.params.min_samples_leaf.max(1) {
            return id;
        }
        let Some(split) = self.best_split(lo, hi, sum) else {
            return id;
        };

        for (k, &slot) in self.order[split.feature][lo..hi].iter().enumerate() {
            self.goes_left[slot as usize] = k < split.n_left;
        }
        for f in 0..self.order.len() {
            self.buf.clear();
            let range = &mut self.order[f][lo..hi];
            let mut w = 0;
            for i in 0..range.len() {
                let slot = range[i];
                if self.goes_left[slot as usize] {
                    range[w] = slot;
                    w += 1;
                } else {
                    self.buf.push(slot);
                }
            }
            range[w..].copy_from_slice(&self.buf);
        }
        let mid = lo + split.n_left;
        let l = self.build(lo, mid, depth + 1);
        let r = self.build(mid, hi, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(split.feature);
        node.threshold = split.threshold;
        node.left = Some(l);
        node.right = Some(r);
        id
    }

    /// Feature visiting order for one split: all features when every one is
    /// a candidate, otherwise a random permutation.
    fn feature_order(&mut self) -> Vec<usize> {
        let d = self.x.n_cols();
        if self.params.max_features >= d {
            (0..d).collect()
        } else {
            index::sample(self.rng, d, d).into_vec()
        }
    }

    /// Best split over up to `max_features` features that admit at least
    /// one split. Features constant on this node are skipped without
    /// counting against the budget. Scores within [`TIE_RTOL`] count as
    /// ties, which go to the lowest feature index, then the lowest
    /// threshold; a split must beat the parent by more than that.
    fn best_split(&mut self, lo: usize, hi: usize, total: f64) -> Option<Split> {
        let n = hi - lo;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best_score = total * total / n as f64;
        let mut best: Option<Split> = None;
        let mut examined = 0;

        for f in self.feature_order() {
            if examined >= self.params.max_features.max(1) {
                break;
            }
            let ord = &self.order[f][lo..hi];
            let mut sum_left = 0.0;
            let mut splittable = false;
            for p in 1..n {
                let v_prev = self.value(ord[p - 1], f);
                sum_left += self.target(ord[p - 1]);
                let v = self.value(ord[p], f);
                if p < min_leaf || n - p < min_leaf || v_prev >= v {
                    continue;
                }
                splittable = true;
                let score = split_score(sum_left, p as f64, total - sum_left, (n - p) as f64);
                let tol = TIE_RTOL * best_score.abs();
                let better = match &best {
                    _ if score > best_score + tol => true,
                    Some(b) => score >= best_score - tol && f < b.feature,
                    None => false,
                };
                if better {
                    best_score = score;
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(v_prev, v),
                        n_left: p,
                    });
                }
            }
            if splittable {
                examined += 1;
            }
        }
        best
    }
}
