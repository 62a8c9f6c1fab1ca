//! Variance-reducing regression trees over coded features.
//!
//! Features are coded once per fit: exact coding gives every distinct value
//! its own code, so splits land on midpoints between distinct values;
//! quantile coding caps the number of codes for large training sets.

use nalgebra::DMatrix;
use rand::seq::index;

use crate::rng::Rng;

/// Per-feature integer codes plus the raw value range of each code.
#[derive(Debug, Clone)]
pub struct FeatureBins {
    codes: Vec<Vec<u32>>,
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureBins {
    /// One code per distinct value.
    pub fn exact(x: &DMatrix<f64>) -> Self {
        Self::build(x, usize::MAX)
    }

    /// At most `max_bins` codes per feature, cut at count quantiles.
    pub fn quantile(x: &DMatrix<f64>, max_bins: usize) -> Self {
        Self::build(x, max_bins.max(2))
    }

    fn build(x: &DMatrix<f64>, max_bins: usize) -> Self {
        let (n, p) = x.shape();
        let mut codes = Vec::with_capacity(p);
        let mut lo = Vec::with_capacity(p);
        let mut hi = Vec::with_capacity(p);
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for f in 0..p {
            let col = x.column(f);
            order.clear();
            order.extend(0..n);
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut fc = vec![0u32; n];
            let mut flo: Vec<f64> = Vec::new();
            let mut fhi: Vec<f64> = Vec::new();
            let per_bin = if max_bins == usize::MAX {
                0.0
            } else {
                n as f64 / max_bins as f64
            };
            let mut code: usize = 0;
            let mut close_pending = false;
            let mut i = 0;
            while i < n {
                let v = col[order[i]];
                let mut j = i;
                while j < n && col[order[j]] == v {
                    j += 1;
                }
                if flo.is_empty() {
                    flo.push(v);
                    fhi.push(v);
                } else if max_bins == usize::MAX || close_pending {
                    code += 1;
                    flo.push(v);
                    fhi.push(v);
                    close_pending = false;
                } else {
                    fhi[code] = v;
                }
                for &r in &order[i..j] {
                    fc[r] = code as u32;
                }
                if max_bins != usize::MAX && code + 1 < max_bins && j as f64 >= (code + 1) as f64 * per_bin {
                    close_pending = true;
                }
                i = j;
            }
            codes.push(fc);
            lo.push(flo);
            hi.push(fhi);
        }
        FeatureBins {
            codes,
            lo,
            hi,
            n_rows: n,
        }
    }

    pub fn n_features(&self) -> usize {
        self.codes.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_codes(&self, f: usize) -> usize {
        self.lo[f].len()
    }

    pub fn code(&self, f: usize, row: usize) -> u32 {
        self.codes[f][row]
    }

    pub fn codes(&self, f: usize) -> &[u32] {
        &self.codes[f]
    }

    /// Raw-value threshold separating `left` codes from `right` codes.
    pub fn threshold(&self, f: usize, left: u32, right: u32) -> f64 {
        0.5 * (self.hi[f][left as usize] + self.lo[f][right as usize])
    }
}

#[derive(Debug, Clone)]
pub struct TreeParams {
    pub min_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
    /// Keep training targets in leaves (for donor draws).
    pub keep_members: bool,
}

#[derive(Debug, Clone)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        mean: f64,
        members: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    left_code: u32,
    threshold: f64,
    gain: f64,
}

/// Sample positions `0..sample.len()` ordered by code, stable.
fn counting_sort(codes: &[u32], n_codes: usize, sample: &[usize]) -> Vec<u32> {
    let mut start = vec![0usize; n_codes + 1];
    for &r in sample {
        start[codes[r] as usize + 1] += 1;
    }
    for c in 0..n_codes {
        start[c + 1] += start[c];
    }
    let mut out = vec![0u32; sample.len()];
    for (pos, &r) in sample.iter().enumerate() {
        let c = codes[r] as usize;
        out[start[c]] = pos as u32;
        start[c] += 1;
    }
    out
}

impl RegressionTree {
    /// Grows a tree on `sample` (row indices into `bins`, repeats allowed).
    ///
    /// Every node keeps, per feature, its sample positions sorted by code;
    /// a split stably partitions each list, so no node ever re-sorts.
    pub fn grow(bins: &FeatureBins, y: &[f64], sample: Vec<usize>, params: &TreeParams, rng: &mut Rng) -> Self {
        let min_leaf = params.min_leaf.max(1);
        let p = bins.n_features();
        let m = sample.len();
        let ys: Vec<f64> = sample.iter().map(|&r| y[r]).collect();
        if p == 0 || m == 0 {
            let mean = if m == 0 { 0.0 } else { ys.iter().sum::<f64>() / m as f64 };
            let members = if params.keep_members { ys } else { Vec::new() };
            return RegressionTree {
                nodes: vec![Node::Leaf { mean, members }],
            };
        }
        let pos_codes: Vec<Vec<u32>> = (0..p)
            .map(|f| {
                let c = bins.codes(f);
                sample.iter().map(|&r| c[r]).collect()
            })
            .collect();
        let mut sorted: Vec<Vec<u32>> = (0..p)
            .map(|f| counting_sort(bins.codes(f), bins.n_codes(f), &sample))
            .collect();
        let mut goes_left = vec![false; m];
        let mut scratch: Vec<u32> = Vec::with_capacity(m);
        let mut nodes = vec![Node::Leaf {
            mean: 0.0,
            members: Vec::new(),
        }];
        let mut stack = vec![(0usize, 0usize, m)];

        while let Some((id, start, end)) = stack.pop() {
            let n = end - start;
            let seg0 = &sorted[0][start..end];
            let sum: f64 = seg0.iter().map(|&q| ys[q as usize]).sum();
            let mean = sum / n as f64;
            let sse: f64 = seg0
                .iter()
                .map(|&q| (ys[q as usize] - mean) * (ys[q as usize] - mean))
                .sum();

            let mut best: Option<Candidate> = None;
            if n >= 2 * min_leaf && sse > 0.0 {
                let features: Vec<usize> = match params.max_features {
                    Some(k) if k < p => {
                        let mut f = index::sample(rng, p, k.max(1)).into_vec();
                        f.sort_unstable();
                        f
                    }
                    _ => (0..p).collect(),
                };
                let parent_score = sum * sum / n as f64;
                for f in features {
                    let seg = &sorted[f][start..end];
                    let codes = &pos_codes[f];
                    let mut left_sum = 0.0;
                    for i in 0..n - 1 {
                        let q = seg[i] as usize;
                        left_sum += ys[q];
                        let left_n = i + 1;
                        let (cur, next) = (codes[q], codes[seg[i + 1] as usize]);
                        if cur == next || left_n < min_leaf {
                            continue;
                        }
                        let right_n = n - left_n;
                        if right_n < min_leaf {
                            break;
                        }
                        let right_sum = sum - left_sum;
                        let gain =
                            left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent_score;
                        if gain > sse * 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                            best = Some(Candidate {
                                feature: f,
                                left_code: cur,
                                threshold: bins.threshold(f, cur, next),
                                gain,
                            });
                        }
                    }
                }
            }

            match best {
                None => {
                    let members = if params.keep_members {
                        seg0.iter().map(|&q| ys[q as usize]).collect()
                    } else {
                        Vec::new()
                    };
                    nodes[id] = Node::Leaf { mean, members };
                }
                Some(c) => {
                    let split_codes = &pos_codes[c.feature];
                    let mut n_left = 0;
                    for &q in &sorted[c.feature][start..end] {
                        let l = split_codes[q as usize] <= c.left_code;
                        goes_left[q as usize] = l;
                        n_left += l as usize;
                    }
                    for list in sorted.iter_mut() {
                        let seg = &mut list[start..end];
                        scratch.clear();
                        scratch.extend(seg.iter().copied().filter(|&q| goes_left[q as usize]));
                        scratch.extend(seg.iter().copied().filter(|&q| !goes_left[q as usize]));
                        seg.copy_from_slice(&scratch);
                    }
                    let left = nodes.len();
                    let right = left + 1;
                    let placeholder = || Node::Leaf {
                        mean: 0.0,
                        members: Vec::new(),
                    };
                    nodes.push(placeholder());
                    nodes.push(placeholder());
                    nodes[id] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    stack.push((right, start + n_left, end));
                    stack.push((left, start, start + n_left));
                }
            }
        }
        RegressionTree { nodes }
    }

    /// Leaf reached by a row whose feature `f` value is `x(f)`.
    pub fn leaf(&self, x: impl Fn(usize) -> f64) -> (&[f64], f64) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x(*feature) <= *threshold { *left } else { *right },
                Node::Leaf { mean, members } => return (members, *mean),
            }
        }
    }

    pub fn predict_row(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.leaf(x).1
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Tree from nodes whose root is index 0 and whose children indices
    /// are in range.
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        debug_assert!(!nodes.is_empty());
        RegressionTree { nodes }
    }
}
