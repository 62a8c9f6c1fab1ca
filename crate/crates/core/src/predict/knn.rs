use nalgebra::DMatrix;
use serde_json::json;

use crate::error::PredictError;
use crate::predict::{FeatureMatrix, Model};

/// Brute-force k-nearest-neighbour regressor.
#[derive(Debug, Clone)]
pub struct Knn {
    k: usize,
    p: usize,
    /// Training rows, row-major.
    rows: Vec<f64>,
    y: Vec<f64>,
}

pub fn fit_knn(train: &FeatureMatrix, k: usize) -> Result<Knn, PredictError> {
    let n = train.n_rows();
    if k == 0 || k > n {
        return Err(PredictError::Precondition(format!("k={k} with {n} training rows")));
    }
    let p = train.n_features();
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..n {
        rows.extend(train.x.row(i).iter());
    }
    Ok(Knn {
        k,
        p,
        rows,
        y: train.y.clone(),
    })
}

impl Knn {
    /// Indices of the `k` nearest training rows to `q`, nearest first;
    /// equal distances prefer the lower index.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .rows
            .chunks_exact(self.p.max(1))
            .take(self.y.len())
            .enumerate()
            .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        if self.p == 0 {
            d = (0..self.y.len()).map(|i| (0.0, i)).collect();
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }
}

impl Model for Knn {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut q = vec![0.0; self.p];
        (0..x.nrows())
            .map(|i| {
                for (j, v) in q.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                let nb = self.neighbors(&q);
                nb.iter().map(|&t| self.y[t]).sum::<f64>() / nb.len() as f64
            })
            .collect()
    }

    fn summary(&self) -> serde_json::Value {
        json!({ "kind": "knn", "k": self.k, "n_train": self.y.len() })
    }
}
