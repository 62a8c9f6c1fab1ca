//! Split search over quantile-coded features shared by the forest and the
//! boosting model.
//!
//! A node owns a contiguous segment of a row-index buffer; splitting
//! stably partitions the segment, so children stay contiguous.

use crate::tree::{FeatureBins, Node};

/// Nodes smaller than `n_codes / SORT_RATIO` are scanned by sorting their
/// rows instead of filling a full histogram.
const SORT_RATIO: usize = 4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Split {
    pub feature: usize,
    pub left_code: u32,
    pub threshold: f64,
    pub gain: f64,
}

/// Per-code count and target sum of one node, all features back to back.
#[derive(Debug, Clone)]
pub(crate) struct Histogram {
    pub count: Vec<u32>,
    pub sum: Vec<f64>,
}

/// Start of each feature's code block in a flattened histogram.
pub(crate) fn offsets(bins: &FeatureBins) -> Vec<usize> {
    let mut off = Vec::with_capacity(bins.n_features() + 1);
    off.push(0);
    for f in 0..bins.n_features() {
        off.push(off[f] + bins.n_codes(f));
    }
    off
}

impl Histogram {
    pub fn build(bins: &FeatureBins, off: &[usize], rows: &[usize], y: &[f64]) -> Self {
        let total = *off.last().unwrap();
        let mut h = Histogram {
            count: vec![0; total],
            sum: vec![0.0; total],
        };
        for (f, &base) in off[..bins.n_features()].iter().enumerate() {
            let codes = bins.codes(f);
            for &r in rows {
                let k = base + codes[r] as usize;
                h.count[k] += 1;
                h.sum[k] += y[r];
            }
        }
        h
    }

    /// `self - smaller`, for the sibling of a child built directly.
    pub fn minus(&self, smaller: &Histogram) -> Self {
        Histogram {
            count: self.count.iter().zip(&smaller.count).map(|(a, b)| a - b).collect(),
            sum: self.sum.iter().zip(&smaller.sum).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Node totals used by every split scan.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeStats {
    pub n: usize,
    pub sum: f64,
    pub sse: f64,
}

impl NodeStats {
    pub fn of(rows: &[usize], y: &[f64]) -> Self {
        Self::of_weighted(rows.iter().map(|&r| (y[r], 1)))
    }

    /// One pass over `(target, multiplicity)`; a node whose targets are all
    /// equal gets `sse = 0` exactly.
    pub fn of_weighted(values: impl Iterator<Item = (f64, u32)>) -> Self {
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, w) in values {
            let wf = f64::from(w);
            n += w as usize;
            sum += wf * v;
            sq += wf * v * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let sse = if n > 0 && lo < hi {
            (sq - sum * sum / n as f64).max(0.0)
        } else {
            0.0
        };
        NodeStats { n, sum, sse }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }
}

/// Scans code-ordered `(code, count, sum)` groups of one feature and keeps
/// the strictly best admissible boundary in `best`.
fn scan_groups(
    groups: impl Iterator<Item = (u32, usize, f64)>,
    f: usize,
    bins: &FeatureBins,
    node: NodeStats,
    min_leaf: usize,
    best: &mut Option<Split>,
) {
    let parent = node.sum * node.sum / node.n as f64;
    let floor = node.sse * 1e-12;
    let mut left_n = 0usize;
    let mut left_sum = 0.0;
    let mut prev: Option<u32> = None;
    for (code, cnt, s) in groups {
        if let Some(pc) = prev {
            let right_n = node.n - left_n;
            if right_n < min_leaf {
                break;
            }
            if left_n >= min_leaf {
                let right_sum = node.sum - left_sum;
                let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent;
                if gain > floor && best.as_ref().is_none_or(|b| gain > b.gain) {
                    *best = Some(Split {
                        feature: f,
                        left_code: pc,
                        threshold: bins.threshold(f, pc, code),
                        gain,
                    });
                }
            }
        }
        left_n += cnt;
        left_sum += s;
        prev = Some(code);
    }
}

/// Best split of feature `f` from a node histogram.
pub(crate) fn scan_histogram(
    h: &Histogram,
    off: &[usize],
    f: usize,
    bins: &FeatureBins,
    node: NodeStats,
    min_leaf: usize,
    best: &mut Option<Split>,
) {
    let groups = (off[f]..off[f + 1])
        .filter(|&k| h.count[k] > 0)
        .map(|k| ((k - off[f]) as u32, h.count[k] as usize, h.sum[k]));
    scan_groups(groups, f, bins, node, min_leaf, best);
}

/// Best split of feature `f` for the rows of one node, choosing between a
/// histogram and a sort by node size. `ys[i]` is the target of `rows[i]`
/// and `ws[i]` its multiplicity.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_rows(
    rows: &[usize],
    ys: &[f64],
    ws: &[u32],
    f: usize,
    bins: &FeatureBins,
    node: NodeStats,
    min_leaf: usize,
    scratch: &mut Scratch,
    best: &mut Option<Split>,
) {
    let codes = bins.codes(f);
    let n_codes = bins.n_codes(f);
    if rows.len() * SORT_RATIO < n_codes {
        let pairs = &mut scratch.pairs;
        pairs.clear();
        pairs.extend(rows.iter().zip(ys).zip(ws).map(|((&r, &v), &w)| (codes[r], w, v)));
        pairs.sort_unstable_by_key(|p| p.0);
        let groups = pairs.chunk_by(|a, b| a.0 == b.0).map(|g| {
            let n: u32 = g.iter().map(|p| p.1).sum();
            (g[0].0, n as usize, g.iter().map(|p| f64::from(p.1) * p.2).sum::<f64>())
        });
        scan_groups(groups, f, bins, node, min_leaf, best);
    } else {
        scratch.count.clear();
        scratch.count.resize(n_codes, 0);
        scratch.sum.clear();
        scratch.sum.resize(n_codes, 0.0);
        for ((&r, &v), &w) in rows.iter().zip(ys).zip(ws) {
            let c = codes[r] as usize;
            scratch.count[c] += w;
            scratch.sum[c] += f64::from(w) * v;
        }
        let (count, sum) = (&scratch.count, &scratch.sum);
        let groups = (0..n_codes)
            .filter(|&c| count[c] > 0)
            .map(|c| (c as u32, count[c] as usize, sum[c]));
        scan_groups(groups, f, bins, node, min_leaf, best);
    }
}

/// Reusable buffers for [`scan_rows`] and [`partition`].
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    pairs: Vec<(u32, u32, f64)>,
    count: Vec<u32>,
    sum: Vec<f64>,
    rows: Vec<usize>,
    ys: Vec<f64>,
    ws: Vec<u32>,
}

/// Stably moves rows going left to the front of `seg`; returns their count.
pub(crate) fn partition(seg: &mut [usize], bins: &FeatureBins, split: &Split, scratch: &mut Scratch) -> usize {
    let codes = bins.codes(split.feature);
    let buf = &mut scratch.rows;
    buf.clear();
    buf.extend(seg.iter().copied().filter(|&r| codes[r] <= split.left_code));
    let n_left = buf.len();
    buf.extend(seg.iter().copied().filter(|&r| codes[r] > split.left_code));
    seg.copy_from_slice(buf);
    n_left
}

/// [`partition`] that carries the aligned targets `ys` and multiplicities
/// `ws` along; returns the number of entries (not weight) going left.
pub(crate) fn partition_with(
    seg: &mut [usize],
    ys: &mut [f64],
    ws: &mut [u32],
    bins: &FeatureBins,
    split: &Split,
    scratch: &mut Scratch,
) -> usize {
    let codes = bins.codes(split.feature);
    let (buf, vbuf, wbuf) = (&mut scratch.rows, &mut scratch.ys, &mut scratch.ws);
    buf.clear();
    vbuf.clear();
    wbuf.clear();
    let mut n_left = 0;
    for go_left in [true, false] {
        for ((&r, &v), &w) in seg.iter().zip(ys.iter()).zip(ws.iter()) {
            if (codes[r] <= split.left_code) == go_left {
                buf.push(r);
                vbuf.push(v);
                wbuf.push(w);
            }
        }
        if go_left {
            n_left = buf.len();
        }
    }
    seg.copy_from_slice(buf);
    ys.copy_from_slice(vbuf);
    ws.copy_from_slice(wbuf);
    n_left
}

pub(crate) fn leaf(value: f64) -> Node {
    Node::Leaf {
        mean: value,
        members: Vec::new(),
    }
}
