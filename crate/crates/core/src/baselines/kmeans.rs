//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;

use super::PseudoTypes;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansReport {
    pub types: PseudoTypes,
    pub centroids: Tensor,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
    /// Largest centroid displacement below [`SHIFT_TOLERANCE`].
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid of every row, ties to the lower cluster id.
fn assign(x: &Tensor, c: &Tensor, parallel: bool) -> Vec<(usize, f64)> {
    let nearest = |i: usize| {
        let row = x.row_slice(i);
        (0..c.rows())
            .map(|j| (j, sq_dist(row, c.row_slice(j))))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    };
    if parallel {
        (0..x.rows()).into_par_iter().map(nearest).collect()
    } else {
        (0..x.rows()).map(nearest).collect()
    }
}

fn plus_plus(x: &Tensor, k: usize, r: &mut rng::StreamRng) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mut c = Tensor::zeros(k, d);
    let first = r.random_range(0..n);
    c.row_slice_mut(0).copy_from_slice(x.row_slice(first));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(x.row_slice(i), c.row_slice(0))).collect();
    for j in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &b) in best.iter().enumerate() {
                acc += b;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Every point coincides with a centroid already.
            r.random_range(0..n)
        };
        c.row_slice_mut(j).copy_from_slice(x.row_slice(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(x.row_slice(i), c.row_slice(j)));
        }
    }
    c
}

/// Clusters the rows of `x` into `k` groups.
pub fn kmeans(x: &Tensor, k: usize, seed: u64, parallel: bool) -> Result<KMeansReport> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::Data(format!("{n} points cannot form {k} clusters")));
    }
    if !x.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut r = rng::stream(seed, "kmeans", 0);
    let mut c = plus_plus(x, k, &mut r);
    let mut objective = Vec::new();
    let mut converged = false;
    let mut labels = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut a = assign(x, &c, parallel);
        // Reseed empty clusters at the point farthest from its centroid.
        loop {
            let mut sizes = vec![0usize; k];
            for &(j, _) in &a {
                sizes[j] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let far = (0..n)
                .filter(|&i| sizes[a[i].0] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if a[b].1 >= a[i].1 => Some(b),
                    _ => Some(i),
                })
                .expect("n >= k leaves a cluster with two points");
            c.row_slice_mut(empty).copy_from_slice(x.row_slice(far));
            a[far] = (empty, 0.0);
        }
        objective.push(a.iter().map(|&(_, dist)| dist).sum());
        let mut sums = Tensor::zeros(k, d);
        let mut sizes = vec![0usize; k];
        for (i, &(j, _)) in a.iter().enumerate() {
            sizes[j] += 1;
            for (s, v) in sums.row_slice_mut(j).iter_mut().zip(x.row_slice(i)) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let inv = 1.0 / sizes[j] as f64;
            sums.row_slice_mut(j).iter_mut().for_each(|s| *s *= inv);
            shift = shift.max(sq_dist(sums.row_slice(j), c.row_slice(j)).sqrt());
        }
        c = sums;
        labels = a.into_iter().map(|(j, _)| j).collect();
        if shift < SHIFT_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(KMeansReport {
        types: PseudoTypes::new(k, labels)?,
        centroids: c,
        objective,
        converged,
    })
}
