use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde_json::json;

use crate::error::PredictError;
use crate::linalg::uniform_index;
use crate::predict::hist::{self, NodeStats, Scratch, Split};
use crate::predict::{FeatureMatrix, Model};
use crate::rng::{derive_rng, Rng};
use crate::tree::{FeatureBins, Node, RegressionTree};

#[derive(Debug, Clone, PartialEq)]
pub struct RfParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Candidate features per split; more are tried only when none of the
    /// first `max_features` admits a split.
    pub max_features: usize,
    /// Quantile codes per feature.
    pub n_bins: usize,
    pub bootstrap: bool,
}

/// Bagged regression trees; prediction is the mean of per-tree leaf means.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
    params: RfParams,
}

/// Depth-first growth until nodes are pure or below `2 * min_leaf` rows.
/// `rows` holds distinct rows and `ws` their bootstrap multiplicities.
fn grow_tree(
    bins: &FeatureBins,
    y: &[f64],
    mut rows: Vec<usize>,
    mut ws: Vec<u32>,
    params: &RfParams,
    rng: &mut Rng,
) -> RegressionTree {
    let p = bins.n_features();
    let mut scratch = Scratch::default();
    let mut nodes = vec![hist::leaf(0.0)];
    let mut stack = vec![(0usize, 0usize, rows.len())];
    let mut order: Vec<usize> = (0..p).collect();
    let mut ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    while let Some((id, start, end)) = stack.pop() {
        let seg = &mut rows[start..end];
        let yseg = &mut ys[start..end];
        let wseg = &mut ws[start..end];
        let stats = NodeStats::of_weighted(yseg.iter().copied().zip(wseg.iter().copied()));
        let mut best: Option<Split> = None;
        if stats.n >= 2 * params.min_leaf && stats.sse > 0.0 {
            order.shuffle(rng);
            for (tried, &f) in order.iter().enumerate() {
                if tried >= params.max_features && best.is_some() {
                    break;
                }
                hist::scan_rows(
                    seg,
                    yseg,
                    wseg,
                    f,
                    bins,
                    stats,
                    params.min_leaf,
                    &mut scratch,
                    &mut best,
                );
            }
        }
        match best {
            None => nodes[id] = hist::leaf(stats.mean()),
            Some(s) => {
                let n_left = hist::partition_with(seg, yseg, wseg, bins, &s, &mut scratch);
                let left = nodes.len();
                nodes.push(hist::leaf(0.0));
                nodes.push(hist::leaf(0.0));
                nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, start + n_left, end));
                stack.push((left, start, start + n_left));
            }
        }
    }
    RegressionTree::from_nodes(nodes)
}

pub fn fit_rf(train: &FeatureMatrix, params: &RfParams, seed: u64) -> Result<RandomForest, PredictError> {
    let n = train.n_rows();
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(PredictError::Hyper("n_trees and min_leaf must be >= 1".into()));
    }
    if n < 2 * params.min_leaf {
        return Err(PredictError::Precondition(format!(
            "{n} training rows, need at least {}",
            2 * params.min_leaf
        )));
    }
    let bins = FeatureBins::quantile(&train.x, params.n_bins);
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = derive_rng(seed, &format!("rf/tree/{t}"));
            let mut counts = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    counts[uniform_index(n, &mut rng)] += 1;
                }
            } else {
                counts.fill(1);
            }
            let rows: Vec<usize> = (0..n).filter(|&r| counts[r] > 0).collect();
            let ws = rows.iter().map(|&r| counts[r]).collect();
            grow_tree(&bins, &train.y, rows, ws, params, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        trees,
        params: params.clone(),
    })
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Predictions of the first `n_trees` trees, equal to those of a forest
    /// fitted with `n_trees` and the same seed.
    pub fn predict_prefix(&self, x: &DMatrix<f64>, n_trees: usize) -> Vec<f64> {
        let trees = &self.trees[..n_trees.clamp(1, self.trees.len())];
        (0..x.nrows())
            .map(|i| trees.iter().map(|t| t.predict_row(|f| x[(i, f)])).sum::<f64>() / trees.len() as f64)
            .collect()
    }
}

impl Model for RandomForest {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_prefix(x, self.trees.len())
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "kind": "rf",
            "n_trees": self.trees.len(),
            "min_leaf": self.params.min_leaf,
            "max_features": self.params.max_features,
            "n_leaves": self.trees.iter().map(RegressionTree::n_leaves).sum::<usize>(),
        })
    }
}
