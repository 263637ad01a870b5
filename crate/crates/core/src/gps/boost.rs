//! Least-squares gradient boosting with shallow regression trees.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of units drawn without replacement for each tree.
    pub subsample: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 2,
            learning_rate: 0.1,
            subsample: 0.8,
            min_samples_leaf: 5,
            seed: 0x6b5_7ee5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// `x(feature)` returns the unit's value for that feature.
    fn predict_with(&self, x: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    k = if x(feature) <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match nodes[k] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    n_features: usize,
}

impl BoostedTrees {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base
            + self.learning_rate
                * self.trees.iter().map(|t| t.predict_with(|f| row[f])).sum::<f64>()
    }

    /// Predictions for every row of column-major `features`.
    pub fn predict(&self, features: &[Vec<f64>]) -> Vec<f64> {
        let n = features.first().map_or(0, |c| c.len());
        (0..n)
            .map(|i| {
                self.base
                    + self.learning_rate
                        * self.trees.iter().map(|t| t.predict_with(|f| features[f][i])).sum::<f64>()
            })
            .collect()
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

#[derive(Clone, Copy, Default)]
struct SplitStats {
    sum: f64,
    count: usize,
}

#[derive(Clone, Copy)]
struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree level by level over presorted feature orders.
fn grow_tree(
    features: &[Vec<f64>],
    sorted: &[Vec<usize>],
    residual: &[f64],
    in_sample: &[bool],
    params: &BoostParams,
) -> RegressionTree {
    let n = residual.len();
    let mut node_of: Vec<usize> = (0..n).map(|i| if in_sample[i] { 0 } else { usize::MAX }).collect();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut frontier = vec![0usize];

    for _ in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_map = vec![usize::MAX; nodes.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot_map[node] = s;
        }
        let slot_of = |node: usize| (slot_map[node] != usize::MAX).then_some(slot_map[node]);
        let mut totals = vec![SplitStats::default(); frontier.len()];
        for i in 0..n {
            if node_of[i] == usize::MAX {
                continue;
            }
            if let Some(s) = slot_of(node_of[i]) {
                totals[s].sum += residual[i];
                totals[s].count += 1;
            }
        }
        let mut best: Vec<Option<BestSplit>> = vec![None; frontier.len()];
        for (f, order) in sorted.iter().enumerate() {
            let mut left = vec![SplitStats::default(); frontier.len()];
            let mut last = vec![f64::NAN; frontier.len()];
            for &i in order {
                if node_of[i] == usize::MAX {
                    continue;
                }
                let Some(s) = slot_of(node_of[i]) else { continue };
                let v = features[f][i];
                let l = left[s];
                let t = totals[s];
                if l.count >= params.min_samples_leaf
                    && t.count - l.count >= params.min_samples_leaf
                    && v > last[s]
                {
                    let r_sum = t.sum - l.sum;
                    let r_count = t.count - l.count;
                    let gain = l.sum * l.sum / l.count as f64 + r_sum * r_sum / r_count as f64
                        - t.sum * t.sum / t.count as f64;
                    if best[s].is_none_or(|b| gain > b.gain) {
                        best[s] = Some(BestSplit { gain, feature: f, threshold: 0.5 * (last[s] + v) });
                    }
                }
                left[s].sum += residual[i];
                left[s].count += 1;
                last[s] = v;
            }
        }

        let mut next_frontier = Vec::new();
        let mut children = vec![None; frontier.len()];
        for (s, &node) in frontier.iter().enumerate() {
            match best[s] {
                Some(b) if b.gain > 1e-12 => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[node] = Node::Split { feature: b.feature, threshold: b.threshold, left, right: left + 1 };
                    children[s] = Some((b, left));
                    next_frontier.extend([left, left + 1]);
                }
                _ => {
                    let t = totals[s];
                    nodes[node] = Node::Leaf(if t.count > 0 { t.sum / t.count as f64 } else { 0.0 });
                }
            }
        }
        for i in 0..n {
            if node_of[i] == usize::MAX {
                continue;
            }
            if let Some(s) = slot_of(node_of[i]) {
                node_of[i] = match children[s] {
                    Some((b, left)) => {
                        if features[b.feature][i] <= b.threshold {
                            left
                        } else {
                            left + 1
                        }
                    }
                    None => usize::MAX,
                };
            }
        }
        frontier = next_frontier;
    }

    // Remaining frontier nodes become leaves holding their mean residual.
    let mut sums = vec![SplitStats::default(); nodes.len()];
    for i in 0..n {
        if node_of[i] != usize::MAX {
            sums[node_of[i]].sum += residual[i];
            sums[node_of[i]].count += 1;
        }
    }
    for &node in &frontier {
        let t = sums[node];
        nodes[node] = Node::Leaf(if t.count > 0 { t.sum / t.count as f64 } else { 0.0 });
    }
    RegressionTree { nodes }
}

/// Fits `target ~ features` (column-major) by least-squares boosting.
pub fn fit_boosted_trees(features: &[Vec<f64>], target: &[f64], params: &BoostParams) -> Result<BoostedTrees> {
    let n = target.len();
    if features.iter().any(|c| c.len() != n) {
        return Err(ErcError::DimensionMismatch("features and target must align".into()));
    }
    if n == 0 {
        return Err(ErcError::InvalidSampleSize(0));
    }
    if !(params.learning_rate > 0.0) || !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(ErcError::InvalidArgument("learning rate and subsample must be in (0, 1]".into()));
    }
    let base = target.iter().sum::<f64>() / n as f64;
    let sorted: Vec<Vec<usize>> = features
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut rng = crate::seed::rng_from_seed(params.seed);
    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut prediction = vec![base; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residual: Vec<f64> = target.iter().zip(&prediction).map(|(y, p)| y - p).collect();
        let mut in_sample = vec![sample_size == n; n];
        if sample_size < n {
            for i in index::sample(&mut rng, n, sample_size) {
                in_sample[i] = true;
            }
        }
        let tree = grow_tree(features, &sorted, &residual, &in_sample, params);
        for (i, p) in prediction.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_with(|f| features[f][i]);
        }
        trees.push(tree);
    }
    Ok(BoostedTrees { base, learning_rate: params.learning_rate, trees, n_features: features.len() })
}
