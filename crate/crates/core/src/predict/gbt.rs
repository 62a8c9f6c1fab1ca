use nalgebra::DMatrix;
use serde_json::json;

use crate::error::PredictError;
use crate::predict::hist::{self, Histogram, NodeStats, Scratch, Split};
use crate::predict::{FeatureMatrix, Model};
use crate::tree::{FeatureBins, Node, RegressionTree};

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub n_bins: usize,
    pub min_leaf: usize,
}

/// Squared-error gradient boosting over leaf-wise histogram trees.
/// Predictions are clamped to the training target range, which additive
/// trees can otherwise leave in regions without training rows.
#[derive(Debug, Clone)]
pub struct GradientBoosted {
    base: f64,
    range: (f64, f64),
    trees: Vec<RegressionTree>,
    /// Training mean squared error after 0, 1, ..., n_rounds rounds.
    train_loss: Vec<f64>,
    params: GbtParams,
}

struct OpenLeaf {
    node: usize,
    start: usize,
    end: usize,
    stats: NodeStats,
    hist: Histogram,
    best: Option<Split>,
}

fn best_split(h: &Histogram, off: &[usize], bins: &FeatureBins, stats: NodeStats, min_leaf: usize) -> Option<Split> {
    let mut best = None;
    if stats.n >= 2 * min_leaf && stats.sse > 0.0 {
        for f in 0..bins.n_features() {
            hist::scan_histogram(h, off, f, bins, stats, min_leaf, &mut best);
        }
    }
    best
}

/// Grows one tree on `residual` by repeatedly splitting the open leaf of
/// largest gain; leaves hold `learning_rate` times their mean residual.
/// Returns the tree and, per row, the value it adds.
fn grow_leafwise(
    bins: &FeatureBins,
    off: &[usize],
    residual: &[f64],
    params: &GbtParams,
    rows: &mut [usize],
    scratch: &mut Scratch,
) -> (RegressionTree, Vec<f64>) {
    let n = rows.len();
    let root_stats = NodeStats::of(rows, residual);
    let root_hist = Histogram::build(bins, off, rows, residual);
    let root_best = best_split(&root_hist, off, bins, root_stats, params.min_leaf);
    let mut nodes = vec![hist::leaf(0.0)];
    let mut open = vec![OpenLeaf {
        node: 0,
        start: 0,
        end: n,
        stats: root_stats,
        hist: root_hist,
        best: root_best,
    }];
    let mut closed: Vec<OpenLeaf> = Vec::new();
    while open.len() + closed.len() < params.max_leaves {
        let Some(pick) = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let leaf = open.swap_remove(pick);
        let split = leaf.best.expect("picked leaf has a split");
        let n_left = hist::partition(&mut rows[leaf.start..leaf.end], bins, &split, scratch);
        let mid = leaf.start + n_left;
        let (ls, rs) = (&rows[leaf.start..mid], &rows[mid..leaf.end]);
        let (l_stats, r_stats) = (NodeStats::of(ls, residual), NodeStats::of(rs, residual));
        let (l_hist, r_hist) = if ls.len() <= rs.len() {
            let small = Histogram::build(bins, off, ls, residual);
            let large = leaf.hist.minus(&small);
            (small, large)
        } else {
            let small = Histogram::build(bins, off, rs, residual);
            let large = leaf.hist.minus(&small);
            (large, small)
        };
        let left = nodes.len();
        nodes.push(hist::leaf(0.0));
        nodes.push(hist::leaf(0.0));
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        for (node, start, end, stats, h) in [
            (left, leaf.start, mid, l_stats, l_hist),
            (left + 1, mid, leaf.end, r_stats, r_hist),
        ] {
            let best = best_split(&h, off, bins, stats, params.min_leaf);
            let child = OpenLeaf {
                node,
                start,
                end,
                stats,
                hist: h,
                best,
            };
            if child.best.is_some() {
                open.push(child);
            } else {
                closed.push(child);
            }
        }
    }
    let mut add = vec![0.0; residual.len()];
    for l in open.iter().chain(&closed) {
        let v = params.learning_rate * l.stats.mean();
        nodes[l.node] = hist::leaf(v);
        for &r in &rows[l.start..l.end] {
            add[r] = v;
        }
    }
    (RegressionTree::from_nodes(nodes), add)
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn fit_gbt(train: &FeatureMatrix, params: &GbtParams, _seed: u64) -> Result<GradientBoosted, PredictError> {
    let n = train.n_rows();
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(PredictError::Hyper(format!(
            "learning_rate={} outside (0, 1]",
            params.learning_rate
        )));
    }
    if params.min_leaf == 0 || params.max_leaves == 0 {
        return Err(PredictError::Hyper("min_leaf and max_leaves must be >= 1".into()));
    }
    if n == 0 || n < 2 * params.min_leaf {
        return Err(PredictError::Precondition(format!(
            "{n} training rows, need at least {}",
            (2 * params.min_leaf).max(1)
        )));
    }
    let bins = FeatureBins::quantile(&train.x, params.n_bins);
    let off = hist::offsets(&bins);
    let base = train.y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base; n];
    let mut train_loss = vec![mse(&train.y, &fitted)];
    let mut rows: Vec<usize> = (0..n).collect();
    let mut scratch = Scratch::default();
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = train.y[i] - fitted[i];
        }
        let (tree, add) = grow_leafwise(&bins, &off, &residual, params, &mut rows, &mut scratch);
        for i in 0..n {
            fitted[i] += add[i];
        }
        train_loss.push(mse(&train.y, &fitted));
        trees.push(tree);
    }
    let range = train
        .y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(GradientBoosted {
        base,
        range,
        trees,
        train_loss,
        params: params.clone(),
    })
}

impl GradientBoosted {
    pub fn train_loss(&self) -> &[f64] {
        &self.train_loss
    }

    pub fn n_rounds(&self) -> usize {
        self.trees.len()
    }

    /// Predictions after the first `n_rounds` rounds, equal to those of a
    /// model fitted with `n_rounds`.
    pub fn predict_prefix(&self, x: &DMatrix<f64>, n_rounds: usize) -> Vec<f64> {
        let trees = &self.trees[..n_rounds.min(self.trees.len())];
        (0..x.nrows())
            .map(|i| {
                let raw = self.base + trees.iter().map(|t| t.predict_row(|f| x[(i, f)])).sum::<f64>();
                raw.clamp(self.range.0, self.range.1)
            })
            .collect()
    }
}

impl Model for GradientBoosted {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_prefix(x, self.trees.len())
    }

    fn summary(&self) -> serde_json::Value {
        json!({
            "kind": "gbt",
            "n_rounds": self.trees.len(),
            "learning_rate": self.params.learning_rate,
            "max_leaves": self.params.max_leaves,
            "n_leaves": self.trees.iter().map(RegressionTree::n_leaves).sum::<usize>(),
        })
    }
}
